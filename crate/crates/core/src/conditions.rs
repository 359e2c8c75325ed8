//! Empirical checks of the environment conditions: density tails, density
//! conservation, domination without side drift, the sprinkler event, and
//! stationarity of the product Poisson law.

use crate::env::{
    sample_initial, step_counts, ApcrwParams, EnvState, Particle, ParticleCloud, Window,
};
use crate::error::{invalid, Result};
use crate::par::map_replicas;
use crate::rng::Key;
use crate::slt::{exact_density_state, slt_domination_study, DominationRow};
use crate::stats::Frequency;
use serde::{Deserialize, Serialize};

/// Failure frequency at one interval length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub ell: usize,
    pub frequency: Frequency,
}

fn strictly_decreasing(rows: &[TrendRow]) -> bool {
    rows.windows(2).all(|w| w[1].frequency.p < w[0].frequency.p)
}

/// Frequency of `|eta([0, ell - 1]) - rho ell| >= eps ell` under the product
/// Poisson law. All lengths are read off one sample per replica.
pub fn density_tail_study(
    rho: f64,
    eps: f64,
    ells: &[usize],
    replicas: u64,
    key: Key,
) -> Result<Vec<TrendRow>> {
    let max = *ells
        .iter()
        .max()
        .ok_or_else(|| invalid("p4_ells", "at least one length required"))?;
    if ells.contains(&0) {
        return Err(invalid("p4_ells", "lengths must be positive"));
    }
    let p = ApcrwParams::new(rho, 0.5, 0.5)?;
    let w = Window::new(0, max as i64 - 1)?;
    let fails = map_replicas(replicas, key, |_, k| {
        let st = sample_initial(&p, w, k)?;
        let c = &st.counts[0];
        Ok(ells
            .iter()
            .map(|&l| {
                let s: u64 = c[..l].iter().map(|&v| v as u64).sum();
                (s as f64 - rho * l as f64).abs() >= eps * l as f64
            })
            .collect::<Vec<bool>>())
    })?;
    Ok(ells
        .iter()
        .enumerate()
        .map(|(i, &ell)| TrendRow {
            ell,
            frequency: Frequency::new(fails.iter().filter(|f| f[i]).count() as u64, replicas),
        })
        .collect())
}

/// Density conservation at one scale: `t = ell^2`, `H = 4t + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationRow {
    pub ell: usize,
    pub t: u64,
    pub h: i64,
    pub upper: Frequency,
    pub lower: Frequency,
    pub failure: Frequency,
}

fn window_sums(st: &EnvState, region: Window, ell: usize) -> Vec<u64> {
    let c = st.merged();
    let off = (region.lo - st.window.lo) as usize;
    let r = &c[off..off + region.len()];
    r.windows(ell)
        .map(|w| w.iter().map(|&v| v as u64).sum())
        .collect()
}

/// Start from the deterministic configurations of density `rho + eps` and
/// `rho - eps` on `[-H, H]`, run `t` steps, and look for an interval of length
/// `ell` inside `[-H + 2t, H - 2t]` above `(rho + 3 eps) ell` or below
/// `(rho - 3 eps) ell`.
pub fn conservation_study(
    params: &ApcrwParams,
    eps: f64,
    ells: &[usize],
    replicas: u64,
    key: Key,
) -> Result<Vec<ConservationRow>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("c1_eps", format!("{eps} not in (0, 1)")));
    }
    let rho = params.rho;
    let mut rows = Vec::new();
    for (i, &ell) in ells.iter().enumerate() {
        if ell == 0 {
            return Err(invalid("c1_ells", "lengths must be positive"));
        }
        let t = (ell * ell) as u64;
        let h = 4 * t as i64 + 1;
        let w = Window::around(0, h);
        let region = Window {
            lo: -h + 2 * t as i64,
            hi: h - 2 * t as i64,
        };
        let hi0 = exact_density_state(rho + eps, w);
        let lo0 = (rho - eps > 0.0).then(|| exact_density_state(rho - eps, w));
        let check_lower = rho - 3.0 * eps > 0.0;
        let res = map_replicas(replicas, key.derive(i as u64), |_, k| {
            let mut st = hi0.clone();
            for _ in 0..t {
                st = step_counts(&st, params, k.tag("upper"));
            }
            let up = window_sums(&st, region, ell)
                .iter()
                .any(|&s| s as f64 > (rho + 3.0 * eps) * ell as f64);
            let mut down = false;
            if let (Some(l0), true) = (&lo0, check_lower) {
                let mut st = l0.clone();
                for _ in 0..t {
                    st = step_counts(&st, params, k.tag("lower"));
                }
                down = window_sums(&st, region, ell)
                    .iter()
                    .any(|&s| (s as f64) < (rho - 3.0 * eps) * ell as f64);
            }
            Ok((up, down))
        })?;
        let count = |f: &dyn Fn(&(bool, bool)) -> bool| res.iter().filter(|r| f(r)).count() as u64;
        rows.push(ConservationRow {
            ell,
            t,
            h,
            upper: Frequency::new(count(&|r| r.0), replicas),
            lower: Frequency::new(count(&|r| r.1), replicas),
            failure: Frequency::new(count(&|r| r.0 || r.1), replicas),
        });
    }
    Ok(rows)
}

/// Domination on the shrunken interval for the paired-particle coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftInReport {
    pub h: i64,
    pub t: u64,
    pub k: u64,
    pub replicas: u64,
    pub checks: u64,
    pub violations: u64,
}

const SHARED: u16 = 0;
const HIGH_ONLY: u16 = 1;
const LOW_ONLY: u16 = 2;

/// The higher configuration dominates the lower one on `[-H, H]` only; outside
/// both are independent. Particles shared on `[-H, H]` move together. Every
/// time `s <= t` the counts are compared on `[-H + 2kt, H - 2kt]`.
pub fn no_drift_in_check(
    params: &ApcrwParams,
    extra: f64,
    h: i64,
    t: u64,
    k: u64,
    replicas: u64,
    key: Key,
) -> Result<DriftInReport> {
    if k == 0 {
        return Err(invalid("c21_k", "must be at least 1"));
    }
    let region = Window::new(-h + 2 * (k * t) as i64, h - 2 * (k * t) as i64).map_err(|_| {
        invalid(
            "c21_h",
            format!("[-H + 2kt, H - 2kt] is empty for H = {h}, k t = {}", k * t),
        )
    })?;
    let inner = Window::around(0, h);
    let outer = Window::around(0, h + t as i64 + 2);
    let extra_p = ApcrwParams::new(extra, params.alpha, params.q)?;
    let res = map_replicas(replicas, key, |_, kr| {
        let low = sample_initial(params, outer, kr.tag("low"))?;
        let add = sample_initial(&extra_p, inner, kr.tag("extra"))?;
        let own = sample_initial(params, outer, kr.tag("high-outside"))?;
        let mut particles = Vec::new();
        let mut push = |x: i64, kind: u16, c: u32| {
            for _ in 0..c {
                particles.push(Particle {
                    kind,
                    path: vec![x as i32],
                });
            }
        };
        for x in outer.sites() {
            let i = outer.index(x).unwrap();
            if inner.contains(x) {
                push(x, SHARED, low.counts[0][i]);
                push(x, HIGH_ONLY, add.counts[0][inner.index(x).unwrap()]);
            } else {
                push(x, LOW_ONLY, low.counts[0][i]);
                push(x, HIGH_ONLY, own.counts[0][i]);
            }
        }
        let mut cloud = ParticleCloud {
            window: outer,
            t0: 0,
            horizon: 0,
            particles,
        };
        cloud.evolve_to(params, t, kr);
        let mut bad = 0u64;
        for s in 0..=t {
            let mut diff = vec![0i64; region.len()];
            for p in &cloud.particles {
                if let Some(j) = region.index(p.at(0, s)) {
                    match p.kind {
                        HIGH_ONLY => diff[j] += 1,
                        LOW_ONLY => diff[j] -= 1,
                        _ => {}
                    }
                }
            }
            bad += diff.iter().filter(|&&d| d < 0).count() as u64;
        }
        Ok(bad)
    })?;
    Ok(DriftInReport {
        h,
        t,
        k,
        replicas,
        checks: replicas * (t + 1) * region.len() as u64,
        violations: res.iter().sum(),
    })
}

/// Probability of the sprinkler event at one target site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SprinklerRow {
    pub x: i64,
    pub frequency: Frequency,
    pub exact: f64,
    pub within_3se: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SprinklerReport {
    pub rho: f64,
    pub ell: u64,
    pub low_sites: Vec<i64>,
    pub extra_site: i64,
    pub rows: Vec<SprinklerRow>,
}

/// Exhaustive enumeration of all step outcomes: probability that after `ell`
/// steps the extra particle sits at `x` while none of `low` does.
pub fn sprinkler_exact(params: &ApcrwParams, low: &[i64], extra: i64, ell: u64, x: i64) -> f64 {
    let (pl, ps, pr) = params.step_probs();
    let steps = [(-1i64, pl), (0, ps), (1, pr)];
    // law of each particle's endpoint by enumerating its step sequences
    let endpoint = |start: i64| -> Vec<(i64, f64)> {
        let mut out = vec![(start, 1.0)];
        for _ in 0..ell {
            out = out
                .iter()
                .flat_map(|&(y, w)| steps.iter().map(move |&(d, p)| (y + d, w * p)))
                .collect();
        }
        out
    };
    let at = |start: i64| {
        endpoint(start)
            .iter()
            .filter(|e| e.0 == x)
            .map(|e| e.1)
            .sum::<f64>()
    };
    let miss: f64 = low.iter().map(|&s| 1.0 - at(s)).product();
    at(extra) * miss
}

/// Low configuration: the deterministic density-`rho` state on `[-ell, ell]`.
/// High configuration: the same plus one particle at the origin. Frequencies
/// of the sprinkler event at `x in {0, 1}` against [`sprinkler_exact`].
pub fn sprinkler_check(
    params: &ApcrwParams,
    rho: f64,
    ell: u64,
    replicas: u64,
    key: Key,
) -> Result<SprinklerReport> {
    let w = Window::around(0, ell as i64);
    let st = exact_density_state(rho, w);
    let low_sites: Vec<i64> = w
        .sites()
        .flat_map(|x| std::iter::repeat_n(x, st.total_at(x) as usize))
        .collect();
    let extra_site = 0;
    if low_sites.len() + 1 > 3 {
        return Err(invalid(
            "c3_ell",
            format!(
                "{} particles exceed the enumeration budget of 3",
                low_sites.len() + 1
            ),
        ));
    }
    let hits = map_replicas(replicas, key, |_, k| {
        let mut particles: Vec<Particle> = low_sites
            .iter()
            .map(|&x| Particle {
                kind: 0,
                path: vec![x as i32],
            })
            .collect();
        particles.push(Particle {
            kind: 0,
            path: vec![extra_site as i32],
        });
        let mut cloud = ParticleCloud {
            window: Window::around(0, 3 * ell as i64),
            t0: 0,
            horizon: 0,
            particles,
        };
        cloud.evolve_to(params, ell, k);
        let (last, rest) = cloud.particles.split_last().unwrap();
        Ok([0i64, 1].map(|x| last.at(0, ell) == x && rest.iter().all(|p| p.at(0, ell) != x)))
    })?;
    let rows = [0i64, 1]
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = Frequency::new(hits.iter().filter(|h| h[i]).count() as u64, replicas);
            let exact = sprinkler_exact(params, &low_sites, extra_site, ell, x);
            let se = (exact * (1.0 - exact) / replicas as f64).sqrt();
            SprinklerRow {
                x,
                frequency: f,
                exact,
                within_3se: (f.p - exact).abs() <= 3.0 * se,
            }
        })
        .collect();
    Ok(SprinklerReport {
        rho,
        ell,
        low_sites,
        extra_site,
        rows,
    })
}

/// Pooled single-site marginal after `t` steps from the product Poisson law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub rho: f64,
    pub t: u64,
    pub interior: (i64, i64),
    pub replicas: u64,
    pub observations: u64,
    pub mean: f64,
    pub variance: f64,
    pub ratio: f64,
    pub pass: bool,
    pub per_replica: Vec<(u64, u64, u64)>,
}

/// Run `t` steps on a window wide enough that the interior `[-half, half]` is
/// exact, then pool interior counts. `pass` is the ratio band `[0.98, 1.02]`.
pub fn stationarity_study(
    params: &ApcrwParams,
    t: u64,
    half: i64,
    replicas: u64,
    key: Key,
) -> Result<StationarityReport> {
    if half < 0 {
        return Err(invalid("half_width", "must be nonnegative"));
    }
    let interior = Window::around(0, half);
    let w = Window::around(0, half + t as i64);
    let sums = map_replicas(replicas, key, |_, k| {
        let mut st = sample_initial(params, w, k)?;
        for _ in 0..t {
            st = step_counts(&st, params, k);
        }
        let (mut s, mut s2) = (0u64, 0u64);
        for x in interior.sites() {
            let c = st.total_at(x) as u64;
            s += c;
            s2 += c * c;
        }
        Ok((s, s2))
    })?;
    let n = replicas * interior.len() as u64;
    let s: u128 = sums.iter().map(|v| v.0 as u128).sum();
    let s2: u128 = sums.iter().map(|v| v.1 as u128).sum();
    let mean = s as f64 / n as f64;
    let variance = (s2 as f64 - (s as f64) * (s as f64) / n as f64) / (n - 1).max(1) as f64;
    let ratio = variance / mean;
    Ok(StationarityReport {
        rho: params.rho,
        t,
        interior: (interior.lo, interior.hi),
        replicas,
        observations: n,
        mean,
        variance,
        ratio,
        pass: (0.98..=1.02).contains(&ratio),
        per_replica: sums
            .iter()
            .enumerate()
            .map(|(r, v)| (r as u64, v.0, v.1))
            .collect(),
    })
}

/// Inputs of the condition battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionsConfig {
    pub model: ApcrwParams,
    pub eps: f64,
    pub replicas: u64,
    pub p4_ells: Vec<usize>,
    pub c1_eps: f64,
    pub c1_ells: Vec<usize>,
    pub c1_replicas: u64,
    pub c21_h: i64,
    pub c21_t: u64,
    pub c21_k: u64,
    pub c22_ts: Vec<u64>,
    pub c22_h: i64,
    pub c22_replicas: u64,
    pub c3_rho: f64,
    pub c3_ell: u64,
}

impl ConditionsConfig {
    pub fn with_defaults(model: ApcrwParams, eps: f64, replicas: u64) -> Self {
        ConditionsConfig {
            model,
            eps,
            replicas,
            p4_ells: vec![100, 200, 400],
            c1_eps: 0.5,
            c1_ells: vec![8, 16, 32],
            c1_replicas: 100,
            c21_h: 200,
            c21_t: 50,
            c21_k: 1,
            c22_ts: vec![100, 400, 1600],
            c22_h: 4000,
            c22_replicas: 100,
            c3_rho: 0.5,
            c3_ell: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub density_tails: Vec<TrendRow>,
    pub density_tails_pass: bool,
    pub conservation: Vec<ConservationRow>,
    pub conservation_pass: bool,
    pub drift_in: DriftInReport,
    pub drift_in_pass: bool,
    pub domination: Vec<DominationRow>,
    pub domination_pass: bool,
    pub sprinkler: SprinklerReport,
    pub sprinkler_pass: bool,
}

impl ConditionsReport {
    /// `(condition, pass, summary)` lines.
    pub fn summary(&self) -> Vec<(&'static str, bool, String)> {
        let freqs = |v: Vec<f64>| {
            v.iter()
                .map(|p| format!("{p:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        vec![
            (
                "P.4",
                self.density_tails_pass,
                freqs(self.density_tails.iter().map(|r| r.frequency.p).collect()),
            ),
            (
                "C.1",
                self.conservation_pass,
                freqs(self.conservation.iter().map(|r| r.failure.p).collect()),
            ),
            (
                "C.2.1",
                self.drift_in_pass,
                format!(
                    "{} violations in {} checks",
                    self.drift_in.violations, self.drift_in.checks
                ),
            ),
            (
                "C.2.2",
                self.domination_pass,
                freqs(self.domination.iter().map(|r| r.success.p).collect()),
            ),
            (
                "C.3",
                self.sprinkler_pass,
                self.sprinkler
                    .rows
                    .iter()
                    .map(|r| format!("x={} {:.5} vs {:.5}", r.x, r.frequency.p, r.exact))
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
        ]
    }
}

/// Run every check. Trends must be strictly decreasing (P.4, C.1) or
/// non-decreasing (C.2.2); C.2.1 must have no violation; C.3 must match the
/// enumeration within three standard errors at both sites.
pub fn verify_conditions(cfg: &ConditionsConfig, key: Key) -> Result<ConditionsReport> {
    let m = &cfg.model;
    let density_tails =
        density_tail_study(m.rho, cfg.eps, &cfg.p4_ells, cfg.replicas, key.tag("P.4"))?;
    let conservation =
        conservation_study(m, cfg.c1_eps, &cfg.c1_ells, cfg.c1_replicas, key.tag("C.1"))?;
    let drift_in = no_drift_in_check(
        m,
        cfg.eps,
        cfg.c21_h,
        cfg.c21_t,
        cfg.c21_k,
        cfg.replicas.min(1000),
        key.tag("C.2.1"),
    )?;
    let domination = slt_domination_study(
        m,
        cfg.eps,
        &cfg.c22_ts,
        cfg.c22_h,
        cfg.c22_replicas,
        key.tag("C.2.2"),
    )?;
    let sprinkler = sprinkler_check(m, cfg.c3_rho, cfg.c3_ell, cfg.replicas, key.tag("C.3"))?;
    let cons_rows: Vec<TrendRow> = conservation
        .iter()
        .map(|r| TrendRow {
            ell: r.ell,
            frequency: r.failure,
        })
        .collect();
    Ok(ConditionsReport {
        density_tails_pass: strictly_decreasing(&density_tails),
        density_tails,
        conservation_pass: strictly_decreasing(&cons_rows),
        conservation,
        drift_in_pass: drift_in.violations == 0,
        drift_in,
        domination_pass: domination
            .windows(2)
            .all(|w| w[1].success.p >= w[0].success.p),
        domination,
        sprinkler_pass: sprinkler
            .rows
            .iter()
            .all(|r| r.within_3se && r.frequency.p > 0.0),
        sprinkler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ApcrwParams {
        ApcrwParams {
            rho: 1.0,
            alpha: 0.5,
            q: 0.6,
        }
    }

    #[test]
    fn sprinkler_enumeration_single_particle() {
        // lone extra particle: probability of sitting at x is the two-step kernel
        let (pl, ps, pr) = p().step_probs();
        let e = sprinkler_exact(&p(), &[], 0, 2, 0);
        assert!((e - (ps * ps + 2.0 * pl * pr)).abs() < 1e-15);
        let e1 = sprinkler_exact(&p(), &[], 0, 2, 1);
        assert!((e1 - 2.0 * ps * pr).abs() < 1e-15);
    }

    #[test]
    fn sprinkler_setup_has_three_particles() {
        let r = sprinkler_check(&p(), 0.5, 2, 200, Key::new(1)).unwrap();
        assert_eq!(r.low_sites, vec![-1, 1]);
        assert!(sprinkler_check(&p(), 1.0, 2, 10, Key::new(1)).is_err());
    }

    #[test]
    fn drift_in_is_deterministic() {
        let r = no_drift_in_check(&p(), 0.3, 40, 10, 1, 20, Key::new(2)).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.checks > 0);
    }

    #[test]
    fn stationarity_small() {
        let r = stationarity_study(&p(), 20, 50, 40, Key::new(3)).unwrap();
        assert_eq!(r.observations, 40 * 101);
        assert!((r.mean - 1.0).abs() < 0.1);
    }
}
