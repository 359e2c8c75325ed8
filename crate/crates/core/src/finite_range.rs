//! Finite-range environments, speed estimation and the large-deviation style
//! experiments built on them.

use crate::engine::{JumpLaws, LazyCloud};
use crate::env::{SuperpositionParams, Window, EXACT_BUFFER};
use crate::error::{invalid, Result};
use crate::par::map_replicas;
use crate::rng::{Key, UniformField};
use crate::stats::{combined_stderr, Frequency, Moments, SpeedEstimate, Z95};
use crate::walker::{nested_mask, run_walks, LatticePoint, Trajectory, WalkParams, WalkerSpec};
use serde::{Deserialize, Serialize};

/// Environment model, walker and refresh period. `l == None` is the plain
/// model, never refreshed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteRangeParams {
    pub model: SuperpositionParams,
    pub walk: WalkParams,
    pub l: Option<u64>,
}

impl FiniteRangeParams {
    pub fn new(
        model: impl Into<SuperpositionParams>,
        walk: WalkParams,
        l: Option<u64>,
    ) -> Result<Self> {
        if l == Some(0) {
            return Err(invalid("L", "refresh period must be at least 1"));
        }
        Ok(FiniteRangeParams {
            model: model.into(),
            walk,
            l,
        })
    }

    pub fn with_l(&self, l: Option<u64>) -> Self {
        FiniteRangeParams { l, ..self.clone() }
    }

    pub fn at_rho(&self, rho: f64) -> Self {
        FiniteRangeParams {
            model: self.model.at_rho(rho),
            ..self.clone()
        }
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Drive walkers with nested views of a layered finite-range environment.
/// Layer `j` holds density `rhos[j] - rhos[j - 1]` (scaled per component), and
/// walker `j` sees layers `0..=j`. All walkers share one uniform field, so the
/// trajectories are ordered path by path when `rhos` is increasing.
pub fn run_layered_walks(
    params: &FiniteRangeParams,
    rhos: &[f64],
    n_steps: u64,
    key: Key,
) -> Result<Vec<Trajectory>> {
    if rhos.is_empty() || rhos.len() > 32 {
        return Err(invalid("rho", "between 1 and 32 densities per layered run"));
    }
    if rhos.windows(2).any(|w| w[1] < w[0]) || rhos[0] <= 0.0 {
        return Err(invalid(
            "rho",
            "densities must be positive and non-decreasing",
        ));
    }
    let comps = &params.model.components;
    let betas = &params.model.betas;
    let laws = JumpLaws::new(comps);
    let mut rates = Vec::with_capacity(rhos.len());
    let mut prev = 0.0;
    for &r in rhos {
        rates.push(betas.iter().map(|b| b * (r - prev)).collect::<Vec<_>>());
        prev = r;
    }
    let ufield = UniformField::new(key.tag("arrows"));
    let env_key = key.tag("env");
    let mut trajs: Vec<Trajectory> = rhos
        .iter()
        .map(|_| Trajectory::new(LatticePoint::origin()))
        .collect();
    let l = params.l.unwrap_or(u64::MAX);
    let mut t = 0u64;
    let mut block = 0u64;
    while t < n_steps {
        let span = l.min(n_steps - t);
        let xs: Vec<i64> = trajs.iter().map(|tr| tr.end()).collect();
        let lo = *xs.iter().min().unwrap() - 2 * span as i64 - EXACT_BUFFER;
        let hi = *xs.iter().max().unwrap() + 2 * span as i64 + EXACT_BUFFER;
        let mut cloud = LazyCloud::poisson(
            laws.clone(),
            &rates,
            Window { lo, hi },
            t,
            t + span,
            env_key.derive(block),
        );
        let specs: Vec<WalkerSpec> = xs
            .iter()
            .enumerate()
            .map(|(j, &x)| WalkerSpec {
                start: LatticePoint::new(x, t as i64),
                mask: nested_mask(j as u32),
            })
            .collect();
        let seg = run_walks(&mut cloud, &specs, span, &params.walk, &ufield)?;
        for (tr, s) in trajs.iter_mut().zip(seg) {
            tr.positions.extend_from_slice(&s.positions[1..]);
        }
        t += span;
        block += 1;
    }
    Ok(trajs)
}

/// One walker under the finite-range model. With `l >= n_steps` this is the
/// plain model, realization for realization.
pub fn run_finite_range_walk(
    params: &FiniteRangeParams,
    n_steps: u64,
    key: Key,
) -> Result<Trajectory> {
    Ok(run_layered_walks(params, &[params.model.base_rho], n_steps, key)?.remove(0))
}

/// Speed summary from end displacements; the mean is an exact integer ratio.
pub fn speed_from_displacements(
    xs: &[i64],
    n_steps: u64,
    params: serde_json::Value,
) -> SpeedEstimate {
    let sum: i128 = xs.iter().map(|&x| x as i128).sum();
    let m: Moments = xs.iter().map(|&x| x as f64 / n_steps as f64).collect();
    let mut est = SpeedEstimate::from_moments(&m, n_steps, params);
    est.mean = sum as f64 / (xs.len() as f64 * n_steps as f64);
    est.ci95 = (est.mean - Z95 * est.stderr, est.mean + Z95 * est.stderr);
    est
}

/// Mean of `X_n / n` over independent replicas.
pub fn estimate_speed(
    params: &FiniteRangeParams,
    n_steps: u64,
    replicas: u64,
    key: Key,
) -> Result<SpeedEstimate> {
    if replicas < 2 {
        return Err(invalid("replicas", "at least 2 replicas required"));
    }
    if n_steps == 0 {
        return Err(invalid("n", "at least one step required"));
    }
    let xs = map_replicas(replicas, key, |_, k| {
        Ok(run_finite_range_walk(params, n_steps, k)?.displacement())
    })?;
    Ok(speed_from_displacements(&xs, n_steps, params.snapshot()))
}

/// One row of a speed curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub rho: f64,
    pub l: Option<u64>,
    pub n: u64,
    pub mean: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub replicas: u64,
}

impl CurveRow {
    fn from_estimate(rho: f64, l: Option<u64>, e: &SpeedEstimate) -> Self {
        CurveRow {
            rho,
            l,
            n: e.n_steps,
            mean: e.mean,
            stderr: e.stderr,
            ci_lo: e.ci95.0,
            ci_hi: e.ci95.1,
            replicas: e.replicas,
        }
    }
}

/// Speed over a grid of densities and ranges, sorted by `(rho, L)`. With
/// `coupled` all densities of one replica share particles and arrows, which
/// makes every replica, and hence the mean column, monotone in `rho`.
pub fn speed_curve(
    params: &FiniteRangeParams,
    rhos: &[f64],
    ls: &[Option<u64>],
    n_steps: u64,
    replicas: u64,
    coupled: bool,
    key: Key,
) -> Result<Vec<CurveRow>> {
    if rhos.is_empty() || ls.is_empty() {
        return Err(invalid("grid", "density and range grids must be nonempty"));
    }
    let mut sorted = rhos.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut rows = Vec::new();
    for (li, &l) in ls.iter().enumerate() {
        let p = params.with_l(l);
        let lk = key.derive(li as u64);
        if coupled {
            let per = map_replicas(replicas, lk, |_, k| {
                Ok(run_layered_walks(&p, &sorted, n_steps, k)?
                    .iter()
                    .map(|t| t.displacement())
                    .collect::<Vec<_>>())
            })?;
            for (j, &rho) in sorted.iter().enumerate() {
                let xs: Vec<i64> = per.iter().map(|v| v[j]).collect();
                let e = speed_from_displacements(&xs, n_steps, p.at_rho(rho).snapshot());
                rows.push(CurveRow::from_estimate(rho, l, &e));
            }
        } else {
            for (j, &rho) in sorted.iter().enumerate() {
                let e = estimate_speed(&p.at_rho(rho), n_steps, replicas, lk.derive(j as u64))?;
                rows.push(CurveRow::from_estimate(rho, l, &e));
            }
        }
    }
    rows.sort_by(|a, b| {
        a.rho
            .total_cmp(&b.rho)
            .then(a.l.unwrap_or(u64::MAX).cmp(&b.l.unwrap_or(u64::MAX)))
    });
    Ok(rows)
}

/// Increments `X_{(k+1)L} - X_{kL}` of a trajectory.
pub fn block_increments(traj: &Trajectory, l: u64) -> Vec<f64> {
    traj.positions
        .iter()
        .step_by(l as usize)
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64)
        .collect()
}

/// Estimates along a dyadic list of ranges plus the crossing check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicTable {
    pub rho: f64,
    pub eps: f64,
    pub n_steps: u64,
    pub rows: Vec<CurveRow>,
    pub upper_rows: Vec<CurveRow>,
    /// `(L, |v(2L) - v(L)|, 2 * combined stderr)` for consecutive ranges.
    pub diffs: Vec<(u64, f64, f64)>,
    pub crossing_lhs: f64,
    pub crossing_rhs: f64,
    pub crossing_ok: bool,
}

/// `v(rho, L)` along `ls`, and `v(rho + eps, L)` at the smallest range (or at
/// every range with `full`).
pub fn dyadic_convergence_study(
    params: &FiniteRangeParams,
    eps: f64,
    ls: &[u64],
    n_steps: u64,
    replicas: u64,
    full: bool,
    key: Key,
) -> Result<DyadicTable> {
    if ls.is_empty() || ls.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(invalid(
            "L_list",
            "ranges must form an increasing dyadic sequence",
        ));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let rho = params.model.base_rho;
    let mut rows = Vec::new();
    for (i, &l) in ls.iter().enumerate() {
        let e = estimate_speed(
            &params.with_l(Some(l)),
            n_steps,
            replicas,
            key.tag("lower").derive(i as u64),
        )?;
        rows.push(CurveRow::from_estimate(rho, Some(l), &e));
    }
    let upper_ls: Vec<u64> = if full { ls.to_vec() } else { vec![ls[0]] };
    let hi = params.at_rho(rho + eps);
    let mut upper_rows = Vec::new();
    for (i, &l) in upper_ls.iter().enumerate() {
        let e = estimate_speed(
            &hi.with_l(Some(l)),
            n_steps,
            replicas,
            key.tag("upper").derive(i as u64),
        )?;
        upper_rows.push(CurveRow::from_estimate(rho + eps, Some(l), &e));
    }
    let diffs = rows
        .windows(2)
        .map(|w| {
            (
                w[0].l.unwrap(),
                (w[1].mean - w[0].mean).abs(),
                2.0 * combined_stderr(w[0].stderr, w[1].stderr),
            )
        })
        .collect();
    let last = rows.last().unwrap().clone();
    let first_hi = upper_rows[0].clone();
    let slack = 2.0 * combined_stderr(last.stderr, first_hi.stderr);
    let crossing_ok = upper_rows.iter().all(|u| {
        rows.iter()
            .all(|r| r.mean <= u.mean + 2.0 * combined_stderr(r.stderr, u.stderr))
    });
    Ok(DyadicTable {
        rho,
        eps,
        n_steps,
        rows,
        upper_rows,
        diffs,
        crossing_lhs: last.mean,
        crossing_rhs: first_hi.mean + slack,
        crossing_ok,
    })
}

/// Deviation frequencies of `X_n / n` for the range `L = floor(sqrt(n))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub n: u64,
    pub l: u64,
    pub frequency: Frequency,
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub delta: f64,
    pub v_minus: f64,
    pub v_plus: f64,
    pub rows: Vec<DeviationRow>,
}

/// Frequency of `X_n / n` leaving `(v_minus - delta, v_plus + delta)` under
/// the range `floor(sqrt(n))`, next to `exp(-delta^2 n / (512 L))`.
pub fn deviation_experiment(
    params: &FiniteRangeParams,
    delta: f64,
    ns: &[u64],
    v_ref: (f64, f64),
    replicas: u64,
    key: Key,
) -> Result<DeviationReport> {
    if !(delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    let (vm, vp) = v_ref;
    let mut rows = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let l = ((n as f64).sqrt().floor() as u64).max(1);
        let p = params.with_l(Some(l));
        let xs = map_replicas(replicas, key.derive(i as u64), |_, k| {
            Ok(run_finite_range_walk(&p, n, k)?.end())
        })?;
        let hits = xs
            .iter()
            .filter(|&&x| {
                let v = x as f64 / n as f64;
                v <= vm - delta || v >= vp + delta
            })
            .count() as u64;
        rows.push(DeviationRow {
            n,
            l,
            frequency: Frequency::new(hits, replicas),
            reference: (-(delta * delta) * n as f64 / (512.0 * l as f64)).exp(),
        });
    }
    Ok(DeviationReport {
        delta,
        v_minus: vm,
        v_plus: vp,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallisticRow {
    pub k: f64,
    pub frequency: Frequency,
    pub log_frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallisticityReport {
    pub v_star: f64,
    pub horizon: u64,
    pub rows: Vec<BallisticRow>,
    pub strictly_decreasing: bool,
}

/// Frequency of `X_n < n v_star - K` for some `n <= horizon`.
pub fn ballisticity_experiment(
    params: &FiniteRangeParams,
    v_star: f64,
    ks: &[f64],
    horizon: u64,
    replicas: u64,
    key: Key,
) -> Result<BallisticityReport> {
    let mins = map_replicas(replicas, key, |_, k| {
        let tr = run_finite_range_walk(params, horizon, k)?;
        Ok(tr
            .positions
            .iter()
            .enumerate()
            .map(|(n, &x)| x as f64 - n as f64 * v_star)
            .fold(f64::INFINITY, f64::min))
    })?;
    let rows: Vec<BallisticRow> = ks
        .iter()
        .map(|&k| {
            let hits = mins.iter().filter(|&&m| m < -k).count() as u64;
            let f = Frequency::new(hits, replicas);
            BallisticRow {
                k,
                frequency: f,
                log_frequency: f.p.ln(),
            }
        })
        .collect();
    let strictly_decreasing = rows.windows(2).all(|w| w[1].frequency.p < w[0].frequency.p);
    Ok(BallisticityReport {
        v_star,
        horizon,
        rows,
        strictly_decreasing,
    })
}
