//! Property tests for the structural invariants of the engine.

use apcrw::finite_range::run_layered_walks;
use apcrw::renewal::{local_influence_field, renewal_times};
use apcrw::*;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn model() -> impl Strategy<Value = ApcrwParams> {
    (0.1f64..3.0, 0.05f64..0.99, 0.01f64..0.99)
        .prop_map(|(rho, alpha, q)| ApcrwParams::new(rho, alpha, q).unwrap())
}

fn walk() -> impl Strategy<Value = WalkParams> {
    (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        if hi > lo {
            WalkParams::new(hi, lo).unwrap()
        } else {
            WalkParams::blind(hi)
        }
    })
}

/// Hand-made cloud: each particle repeats its step pattern from its start site.
fn cloud_of(paths: &[(i32, Vec<i8>)], horizon: u64) -> ParticleCloud {
    let particles = paths
        .iter()
        .map(|(y0, steps)| {
            let mut path = vec![*y0];
            for t in 0..horizon as usize {
                let last = *path.last().unwrap();
                path.push(last + steps[t % steps.len()] as i32);
            }
            Particle { kind: 0, path }
        })
        .collect();
    ParticleCloud {
        window: Window::around(0, 200),
        t0: 0,
        horizon,
        particles,
    }
}

fn paths() -> impl Strategy<Value = Vec<(i32, Vec<i8>)>> {
    prop::collection::vec((-30i32..30, prop::collection::vec(-1i8..=1, 1..40)), 0..25)
}

// Influence field straight from the definition, no pruning.
fn influence_oracle(cloud: &ParticleCloud, x: i64, n: u64, v: f64, horizon: u64) -> u64 {
    let mut h = 0;
    for p in &cloud.particles {
        let y = |s: u64| p.path[(s - cloud.t0) as usize] as i64;
        let below = (cloud.t0..=n).any(|s| ((y(s) - x) as f64) < v * (s as f64 - n as f64) - TOL);
        if !below {
            continue;
        }
        let mut l = 0;
        loop {
            let apex = (x + l as i64, n + l);
            let hits =
                (apex.1..=horizon).any(|s| (y(s) - apex.0) as f64 >= v * (s - apex.1) as f64 - TOL);
            if !hits {
                break;
            }
            l += 1;
        }
        h = h.max(l);
    }
    h
}

// First time the walker reaches each apex level, one level at a time.
fn record_oracle(xs: &[i64], v: f64) -> Vec<u64> {
    let mut out = Vec::new();
    for k in 1.. {
        let level = (1.0 - v) * k as f64;
        match (0..xs.len()).find(|&i| (xs[i] - xs[0]) as f64 - v * i as f64 >= level - TOL) {
            Some(i) => out.push(i as u64),
            None => break,
        }
    }
    out
}

fn walk_from(steps: &[bool]) -> Trajectory {
    let mut tr = Trajectory::new(LatticePoint::origin());
    for &s in steps {
        let x = tr.end() + if s { 1 } else { -1 };
        tr.positions.push(x);
    }
    tr
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn particle_steps_conserve_and_stay_local(p in model(), seed: u64, half in 5i64..40, steps in 1u64..30) {
        let key = Key::new(seed);
        let st = sample_initial(&p, Window::around(0, half), key).unwrap();
        let mut cloud = ParticleCloud::from_state(&st);
        let n0 = cloud.len();
        for _ in 0..steps {
            cloud = step_particles(&cloud, &p, key);
        }
        prop_assert_eq!(cloud.len(), n0);
        prop_assert_eq!(cloud.horizon, steps);
        for part in &cloud.particles {
            prop_assert!(part.path.windows(2).all(|w| (w[1] - w[0]).abs() <= 1));
        }
    }

    #[test]
    fn count_steps_conserve_mass(p in model(), seed: u64, half in 1i64..40, steps in 1u64..40) {
        let key = Key::new(seed);
        let mut st = sample_initial(&p, Window::around(0, half), key).unwrap();
        let mass = st.total() + st.overflow;
        for _ in 0..steps {
            st = step_counts(&st, &p, key);
            prop_assert_eq!(st.total() + st.overflow, mass);
        }
    }

    #[test]
    fn count_steps_propagate_at_unit_speed(
        p in model(),
        seed: u64,
        far in prop::collection::vec(0u32..5, 1..10),
        steps in 1u64..20,
    ) {
        let key = Key::new(seed);
        let w = Window::around(0, 40);
        let a = sample_initial(&p, w, key).unwrap();
        let mut b = a.clone();
        // perturb sites at distance >= 30 from the origin
        for (i, c) in far.iter().enumerate() {
            let idx = w.index(30 + i as i64).unwrap();
            b.counts[0][idx] += c;
        }
        let (mut a, mut b) = (a, b);
        for _ in 0..steps {
            a = step_counts(&a, &p, key);
            b = step_counts(&b, &p, key);
        }
        for x in -29..(30 - steps as i64) {
            prop_assert_eq!(a.total_at(x), b.total_at(x), "site {}", x);
        }
    }

    #[test]
    fn monotone_coupling_dominates(lo in model(), extra in 0.0f64..2.0, seed: u64, horizon in 1u64..30) {
        let hi = lo.with_rho(lo.rho + extra);
        let w = Window::around(0, 30);
        let (low, high) = couple_monotone(&lo, &hi, w, horizon, Key::new(seed)).unwrap();
        for t in 0..=horizon {
            let a = counts_of(&low, t).unwrap();
            let b = counts_of(&high, t).unwrap();
            prop_assert!(a.dominated_by(&b, w));
        }
    }

    #[test]
    fn arrow_is_monotone_in_occupation(wp in walk(), u in 0.0f64..1.0) {
        prop_assert!(arrow(true, u, &wp) >= arrow(false, u, &wp));
        prop_assert!(arrow(true, u, &wp).abs() == 1);
    }

    #[test]
    fn walker_takes_unit_steps_with_parity(p in model(), wp in walk(), seed: u64, n in 1u64..60, x0 in -5i64..5) {
        let key = Key::new(seed);
        let (_, cloud) = couple_monotone(&p, &p, Window::around(0, 2 * n as i64 + 10), n, key).unwrap();
        let mut env = TabulatedEnv::from_clouds(&[&cloud], false).unwrap();
        let uf = UniformField::new(key.tag("u"));
        let tr = run_walk(&mut env, LatticePoint::new(x0, 0), 1, n, &wp, &uf).unwrap();
        prop_assert_eq!(tr.steps() as u64, n);
        prop_assert!(tr.is_valid());
        for (i, w) in tr.positions.windows(2).enumerate() {
            prop_assert_eq!((w[1] - w[0]).abs(), 1);
            prop_assert_eq!((w[1] - x0 - i as i64 - 1).rem_euclid(2), 0);
        }
    }

    #[test]
    fn walkers_on_one_field_merge_and_keep_order(
        lo in model(),
        extra in 0.0f64..2.0,
        wp in walk(),
        seed: u64,
        n in 1u64..60,
        gap in 0i64..6,
    ) {
        let key = Key::new(seed);
        let hi = lo.with_rho(lo.rho + extra);
        let w = Window::around(0, 2 * n as i64 + 20);
        let (low, high) = couple_monotone(&lo, &hi, w, n, key).unwrap();
        let mut env = TabulatedEnv::from_clouds(&[&low, &high], true).unwrap();
        let uf = UniformField::new(key.tag("u"));
        let a = WalkerSpec { start: LatticePoint::new(-gap, 0), mask: 1 };
        let b = WalkerSpec { start: LatticePoint::new(gap, 0), mask: 2 };
        let (ta, tb) = run_coupled_walks(&mut env, a, b, n, &wp, &uf).unwrap();
        prop_assert!(ta.positions.iter().zip(&tb.positions).all(|(x, y)| x <= y));

        // same layer: once met, never apart
        let same = run_walks(
            &mut env,
            &[a, WalkerSpec { start: LatticePoint::new(gap, 0), mask: 1 }],
            n,
            &wp,
            &uf,
        )
        .unwrap();
        let met = same[0].positions.iter().zip(&same[1].positions).position(|(x, y)| x == y);
        if let Some(i) = met {
            prop_assert_eq!(&same[0].positions[i..], &same[1].positions[i..]);
        }
    }

    #[test]
    fn layered_walks_are_ordered(
        base in 0.1f64..2.0,
        incs in prop::collection::vec(0.0f64..1.0, 1..4),
        wp in walk(),
        l in prop::option::of(1u64..20),
        seed: u64,
        n in 1u64..80,
    ) {
        let mut rhos = vec![base];
        for d in incs {
            rhos.push(rhos.last().unwrap() + d);
        }
        let params = FiniteRangeParams::new(ApcrwParams::new(base, 0.5, 0.6).unwrap(), wp, l).unwrap();
        let trajs = run_layered_walks(&params, &rhos, n, Key::new(seed)).unwrap();
        for pair in trajs.windows(2) {
            prop_assert!(pair[0].positions.iter().zip(&pair[1].positions).all(|(x, y)| x <= y));
        }
    }

    #[test]
    fn finite_range_walk_is_deterministic_and_plain_beyond_n(
        p in model(),
        wp in walk(),
        seed: u64,
        n in 1u64..80,
        more in 0u64..50,
    ) {
        let key = Key::new(seed);
        let plain = FiniteRangeParams::new(p, wp, None).unwrap();
        let a = run_finite_range_walk(&plain, n, key).unwrap();
        let b = run_finite_range_walk(&plain, n, key).unwrap();
        prop_assert_eq!(&a, &b);
        let ranged = plain.with_l(Some(n + more));
        prop_assert_eq!(&a, &run_finite_range_walk(&ranged, n, key).unwrap());
    }

    #[test]
    fn speed_estimate_is_a_speed(p in model(), wp in walk(), seed: u64, n in 1u64..40, l in prop::option::of(1u64..10)) {
        let params = FiniteRangeParams::new(p, wp, l).unwrap();
        let est = estimate_speed(&params, n, 4, Key::new(seed)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&est.mean));
        prop_assert!(est.stderr >= 0.0);
    }

    #[test]
    fn kernel_is_a_probability_law(t in 0u64..200, alpha in 0.05f64..1.0, q in 0.0f64..1.0, lazy: bool) {
        let k = exact_kernel(t, alpha, q, lazy).unwrap();
        prop_assert!((k.total() - 1.0).abs() < 1e-12);
        prop_assert!(k.iter().all(|(_, m)| m >= 0.0));
        let drift = if lazy { alpha * (2.0 * q - 1.0) } else { 2.0 * q - 1.0 };
        prop_assert!((k.mean() - drift * t as f64).abs() < 1e-9 * (1.0 + t as f64));
        if !lazy {
            for (z, m) in k.iter() {
                if (z + t as i64) % 2 != 0 {
                    prop_assert_eq!(m, 0.0);
                }
            }
        }
    }

    #[test]
    fn kernel_semigroup(s in 0u64..80, t in 0u64..80, alpha in 0.05f64..1.0, q in 0.0f64..1.0, lazy: bool) {
        let a = exact_kernel(s, alpha, q, lazy).unwrap();
        let b = exact_kernel(t, alpha, q, lazy).unwrap();
        let c = exact_kernel(s + t, alpha, q, lazy).unwrap();
        let ab = a.convolve(&b);
        for z in c.min_offset().min(ab.min_offset())..=c.max_offset().max(ab.max_offset()) {
            prop_assert!((ab.mass_at(z) - c.mass_at(z)).abs() < 1e-13, "z = {}", z);
        }
    }

    #[test]
    fn records_match_oracle(steps in prop::collection::vec(any::<bool>(), 1..200), v in -0.9f64..0.9) {
        let tr = walk_from(&steps);
        let rec = record_times(&tr, v).unwrap();
        prop_assert_eq!(&rec, &record_oracle(&tr.positions, v));
        prop_assert!(rec.windows(2).all(|w| w[0] < w[1]));
        for (k, &r) in rec.iter().enumerate() {
            let d = tr.positions[r as usize] as f64 - v * r as f64;
            prop_assert!(d >= (1.0 - v) * (k + 1) as f64 - TOL);
        }
    }

    #[test]
    fn influence_matches_oracle(
        ps in paths(),
        horizon in 1u64..40,
        x in -10i64..10,
        n_frac in 0.0f64..1.0,
        v in -0.5f64..0.8,
    ) {
        let cloud = cloud_of(&ps, horizon);
        let n = (n_frac * horizon as f64) as u64;
        let h = influence_field(&cloud, x, n, v, horizon).unwrap();
        prop_assert_eq!(h, influence_oracle(&cloud, x, n, v, horizon));
        let local = local_influence_field(&cloud, x, n, v, 10, horizon).unwrap();
        prop_assert!(local <= h);
    }

    #[test]
    fn influence_grows_with_particles(
        ps in paths(),
        more in paths(),
        horizon in 1u64..40,
        x in -10i64..10,
        v in -0.5f64..0.8,
    ) {
        let n = horizon / 2;
        let small = cloud_of(&ps, horizon);
        let all: Vec<_> = ps.iter().chain(&more).cloned().collect();
        let big = cloud_of(&all, horizon);
        prop_assert!(
            influence_field(&small, x, n, v, horizon).unwrap()
                <= influence_field(&big, x, n, v, horizon).unwrap()
        );
    }

    #[test]
    fn regenerations_follow_good_records(seed: u64, n in 200u64..800) {
        let model = ApcrwParams::new(1.5, 0.5, 0.6).unwrap();
        let wp = WalkParams::new(0.9, 0.6).unwrap();
        let (tr, cloud) = simulate_tracked(&model, &wp, n, Key::new(seed)).unwrap();
        let rp = RenewalParams::new(ConeParams::new(0.2, 0.3).unwrap(), wp, 10_000);
        let run = rp.run_length().unwrap();
        let times = renewal_times(&tr, &cloud, &rp).unwrap();
        prop_assert_eq!(&times.records, &record_times(&tr, 0.2).unwrap());
        prop_assert!(times.good.iter().all(|g| times.records.contains(g)));
        prop_assert!(times.regenerations.iter().all(|r| times.good.contains(&(r - run))));
        prop_assert_eq!(&detect_good_records(&tr, &cloud, &rp).unwrap(), &times.good);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn config_snapshot_round_trips(
        seed in 0..=i64::MAX as u64,
        replicas in 2u64..100_000,
        rho in 0.1f64..5.0,
        q in 0.01f64..0.99,
        kind_ix in 0usize..ExperimentKind::ALL.len(),
    ) {
        let kind = ExperimentKind::ALL[kind_ix];
        let mut text = format!("seed = {seed}\nreplicas = {replicas}\nrho = {rho:?}\nq = {q:?}\n");
        text.push_str(match kind {
            ExperimentKind::Speed => "L = 100\n",
            ExperimentKind::Coupling => "L = 64\n",
            ExperimentKind::SpeedCurve => "rho_grid = [0.5, 1.0]\nL_grid = [10, \"inf\"]\n",
            ExperimentKind::Dyadic => "L_list = [8, 16]\n",
            ExperimentKind::Deviation => "n_list = [10, 20]\nv_minus = 0.0\nv_plus = 0.2\n",
            ExperimentKind::Ballisticity => "v_star = 0.3\n",
            _ => "eps = 0.05\n",
        });
        let o = Overrides { experiment: Some(kind), ..Default::default() };
        let cfg = parse_config_str(&text, &o).unwrap();
        let json = serde_json::json!({ "config": cfg.snapshot() }).to_string();
        let back = parse_config_str(&json, &Overrides::default()).unwrap();
        prop_assert_eq!(cfg, back);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn emitted_frequencies_are_probabilities(seed in 0..=i64::MAX as u64, v_minus in -0.5f64..0.5, width in 0.0f64..0.5) {
        let text = format!(
            "experiment = \"deviation\"\nseed = {seed}\nreplicas = 20\nn_list = [8, 32]\nv_minus = {v_minus:?}\nv_plus = {:?}\n",
            v_minus + width
        );
        let cfg = parse_config_str(&text, &Overrides::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&cfg, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("deviation.csv")).unwrap();
        let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "frequency").unwrap();
        for line in lines {
            let f: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
