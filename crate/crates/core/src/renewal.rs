//! Records, good records and regeneration times of the walker, and the
//! renewal estimate of its speed.
//!
//! All geometry is done in the orientation where the walker outruns the
//! environment to the right. A cone pair with `v_star < v_bar` describes the
//! mirrored regime; trajectories and particle paths are then reflected through
//! the origin before the analysis, and reflected back for reporting.

use crate::env::{
    sample_initial, step_from, ApcrwParams, Particle, ParticleCloud, Window, EXACT_BUFFER,
};
use crate::error::{invalid, Error, Result};
use crate::finite_range::speed_from_displacements;
use crate::par::map_replicas;
use crate::rng::{Key, UniformField};
use crate::stats::{
    ks_two_sample, lag1_autocorrelation, ratio_estimate, Distribution, SpeedEstimate, Z95,
};
use crate::walker::{arrow, LatticePoint, Trajectory, WalkParams};
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::io::Write;

/// Particles that never come this close to the walker are not tracked.
pub const RELEVANCE_RADIUS: i64 = 64;

/// Slack for comparisons against real-valued cone boundaries.
const TOL: f64 = 1e-9;
const CHECKPOINT: usize = 64;

/// Speeds of the two cones and the parallelogram aspect ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    pub v_bar: f64,
    pub v_star: f64,
    /// Smallest height-to-width factor for which a path of speed `v_star`
    /// leaves the parallelogram through its far side.
    pub beta: f64,
}

impl ConeParams {
    pub fn new(v_bar: f64, v_star: f64) -> Result<Self> {
        for (name, v) in [("v_bar", v_bar), ("v_star", v_star)] {
            if !(v > -1.0 && v < 1.0) {
                return Err(invalid(name, format!("{v} not in (-1, 1)")));
            }
        }
        if v_bar == v_star {
            return Err(invalid("v_star", "must differ from v_bar"));
        }
        let beta = if v_star > v_bar {
            (1.0 - v_bar) / (v_star - v_bar)
        } else {
            (1.0 + v_bar) / (v_bar - v_star)
        };
        Ok(ConeParams {
            v_bar,
            v_star,
            beta,
        })
    }

    pub fn mirrored(&self) -> bool {
        self.v_star < self.v_bar
    }

    /// `v_bar` must lie strictly between the particle drift and `v_star`.
    pub fn check_regime(&self, drift: f64) -> Result<()> {
        let ok = if self.mirrored() {
            self.v_bar < drift
        } else {
            self.v_bar > drift
        };
        if !ok {
            return Err(invalid(
                "v_bar",
                format!(
                    "{} is not between the drift {drift} and v_star = {}",
                    self.v_bar, self.v_star
                ),
            ));
        }
        Ok(())
    }

    /// Cones at one and two thirds of the way from the drift to a speed estimate.
    pub fn auto(v_hat: f64, drift: f64) -> Result<Self> {
        let gap = v_hat - drift;
        if gap.abs() < 1e-3 {
            return Err(invalid(
                "v_bar",
                format!("speed estimate {v_hat} too close to the drift {drift} to place cones"),
            ));
        }
        Self::new(drift + gap / 3.0, drift + 2.0 * gap / 3.0)
    }

    fn reflected(&self) -> Self {
        ConeParams {
            v_bar: -self.v_bar,
            v_star: -self.v_star,
            beta: self.beta,
        }
    }
}

/// Everything needed to classify records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalParams {
    pub cone: ConeParams,
    pub walk: WalkParams,
    /// Scale parameter fixing the run length and the exit window.
    pub t: u64,
    pub c: f64,
    pub box_multiplier: u64,
    /// Steps past the regeneration point over which particle paths are
    /// inspected; defaults to the larger of the parallelogram height and the
    /// box side.
    pub lookahead: Option<u64>,
}

impl RenewalParams {
    pub fn new(cone: ConeParams, walk: WalkParams, t: u64) -> Self {
        RenewalParams {
            cone,
            walk,
            t,
            c: 1.0,
            box_multiplier: 4,
            lookahead: None,
        }
    }

    pub fn delta(&self) -> f64 {
        let (a, b) = if self.cone.mirrored() {
            (1.0 - self.walk.p_occ, 1.0 - self.walk.p_vac)
        } else {
            (self.walk.p_occ, self.walk.p_vac)
        };
        1.0 / (4.0 * (1.0 / a.min(b)).ln())
    }

    /// Number of forced steps after a record, `floor(delta ln T)`.
    pub fn run_length(&self) -> Result<u64> {
        let v = (self.delta() * (self.t as f64).ln()).floor();
        if !(v >= 1.0) {
            return Err(invalid(
                "T",
                format!("run length floor(delta ln T) = {v} is below 1, increase T"),
            ));
        }
        Ok(v as u64)
    }

    /// Parallelogram width scale `floor(T^e)` with `e = min(c delta, 1) / 4`.
    pub fn exit_window(&self) -> Result<u64> {
        if !(self.c > 0.0) {
            return Err(invalid("c", format!("{} must be positive", self.c)));
        }
        let e = (self.c * self.delta()).min(1.0) / 4.0;
        let v = (self.t as f64).powf(e).floor();
        if !(v >= 1.0) {
            return Err(invalid(
                "T",
                format!("exit window floor(T^e) = {v} is below 1"),
            ));
        }
        Ok(v as u64)
    }

    /// Height of the exit parallelogram, rounded up.
    pub fn exit_height(&self) -> Result<u64> {
        Ok((self.cone.beta * self.exit_window()? as f64 - TOL)
            .ceil()
            .max(1.0) as u64)
    }

    pub fn lookahead(&self) -> Result<u64> {
        match self.lookahead {
            Some(l) => Ok(l),
            None => Ok(self.exit_height()?.max(self.box_side()?)),
        }
    }

    pub fn box_side(&self) -> Result<u64> {
        Ok(self.box_multiplier * self.run_length()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.run_length()?;
        self.exit_window()?;
        Ok(())
    }
}

/// Time and displacement between consecutive regenerations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Increment {
    pub dt: u64,
    pub dx: i64,
}

fn orient<'a>(
    traj: &'a Trajectory,
    cloud: &'a ParticleCloud,
    cone: &ConeParams,
) -> (Cow<'a, [i64]>, Cow<'a, ParticleCloud>, ConeParams) {
    if !cone.mirrored() {
        return (Cow::Borrowed(&traj.positions), Cow::Borrowed(cloud), *cone);
    }
    let xs: Vec<i64> = traj.positions.iter().map(|x| -x).collect();
    let mut cl = cloud.clone();
    cl.window = Window {
        lo: -cloud.window.hi,
        hi: -cloud.window.lo,
    };
    for p in &mut cl.particles {
        for y in &mut p.path {
            *y = -*y;
        }
    }
    (Cow::Owned(xs), Cow::Owned(cl), cone.reflected())
}

fn records_oriented(xs: &[i64], n0: u64, v: f64) -> Vec<u64> {
    let x0 = xs[0];
    let mut out = Vec::new();
    let mut k = 1u64;
    for (i, &x) in xs.iter().enumerate() {
        let d = (x - x0) as f64 - v * i as f64;
        while d >= (1.0 - v) * k as f64 - TOL {
            out.push(n0 + i as u64);
            k += 1;
        }
    }
    out
}

/// Record times `R_k`, k >= 1: first times at which the walker is inside the
/// cone of speed `v_bar` with apex `((1 - v_bar) k, 0)` relative to its start.
/// Times are absolute.
pub fn record_times(traj: &Trajectory, v_bar: f64) -> Result<Vec<u64>> {
    if !(v_bar > -1.0 && v_bar < 1.0) {
        return Err(invalid("v_bar", format!("{v_bar} not in (-1, 1)")));
    }
    if traj.start.n < 0 {
        return Err(invalid("start", "start time must be nonnegative"));
    }
    Ok(records_oriented(
        &traj.positions,
        traj.start.n as u64,
        v_bar,
    ))
}

/// Particle paths with prefix minima of `y_s - v s` at checkpoints, for fast
/// down-cone membership queries.
struct ConeIndex<'a> {
    cloud: &'a ParticleCloud,
    v: f64,
    pm: Vec<Vec<f64>>,
}

impl<'a> ConeIndex<'a> {
    fn new(cloud: &'a ParticleCloud, v: f64) -> Self {
        let t0 = cloud.t0;
        let pm = cloud
            .particles
            .iter()
            .map(|p| {
                let mut m = f64::INFINITY;
                let mut out = Vec::with_capacity(p.path.len() / CHECKPOINT + 1);
                for (i, &y) in p.path.iter().enumerate() {
                    m = m.min(y as f64 - v * (t0 + i as u64) as f64);
                    if (i + 1) % CHECKPOINT == 0 {
                        out.push(m);
                    }
                }
                out
            })
            .collect();
        ConeIndex { cloud, v, pm }
    }

    #[inline]
    fn pos(&self, p: usize, t: u64) -> i64 {
        self.cloud.particles[p].at(self.cloud.t0, t)
    }

    /// Was particle `p` strictly left of the line of slope `v` through `(x, n)`
    /// at some time up to `n`?
    fn in_down_cone(&self, p: usize, x: i64, n: u64) -> bool {
        let t0 = self.cloud.t0;
        let thr = x as f64 - self.v * n as f64 - TOL;
        let last = (n - t0) as usize;
        let full = (last + 1) / CHECKPOINT;
        if full > 0 && self.pm[p][full - 1] < thr {
            return true;
        }
        let path = &self.cloud.particles[p].path;
        (full * CHECKPOINT..=last).any(|i| (path[i] as f64 - self.v * (t0 + i as u64) as f64) < thr)
    }

    /// Smallest shift `l` such that particle `p` stays out of the cone with
    /// apex `(x + l, n + l)` up to `horizon`.
    fn particle_h(&self, p: usize, x: i64, n: u64, horizon: u64, buf: &mut Vec<f64>) -> u64 {
        let m = (horizon - n + 1) as usize;
        buf.clear();
        buf.resize(m, f64::NEG_INFINITY);
        let mut run = f64::NEG_INFINITY;
        for i in (0..m).rev() {
            let d = (self.pos(p, n + i as u64) - x) as f64 - self.v * i as f64;
            run = run.max(d);
            buf[i] = run;
        }
        let mut l = 0;
        while l < m && buf[l] >= l as f64 * (1.0 - self.v) - TOL {
            l += 1;
        }
        l as u64
    }

    /// Influence field at `(x, n)`. With `depth = Some(d)`, particles that
    /// also visited the down-cone below `(x - d, n)` are ignored.
    fn h_at(&self, x: i64, n: u64, horizon: u64, depth: Option<i64>, buf: &mut Vec<f64>) -> u64 {
        let reach = ((1.0 - self.v) * (horizon - n) as f64).ceil() as i64 + 1;
        let mut h = 0;
        for p in 0..self.cloud.particles.len() {
            if self.pos(p, n) < x - reach || !self.in_down_cone(p, x, n) {
                continue;
            }
            if depth.is_some_and(|d| self.in_down_cone(p, x - d, n)) {
                continue;
            }
            h = h.max(self.particle_h(p, x, n, horizon, buf));
        }
        h
    }

    /// Does some particle sitting at `(x, n)` enter the cone with apex `apex`
    /// before `horizon`?
    fn site_enters(&self, x: i64, n: u64, apex: (i64, u64), horizon: u64) -> bool {
        (0..self.cloud.particles.len()).any(|p| {
            self.pos(p, n) == x
                && (apex.1..=horizon)
                    .any(|s| (self.pos(p, s) - apex.0) as f64 >= self.v * (s - apex.1) as f64 - TOL)
        })
    }
}

fn check_span(cloud: &ParticleCloud, n: u64, horizon: u64) -> Result<()> {
    if n < cloud.t0 {
        return Err(Error::TimeOutOfRange {
            time: n,
            horizon: cloud.horizon,
        });
    }
    if horizon < n || horizon > cloud.horizon {
        return Err(Error::TimeOutOfRange {
            time: horizon,
            horizon: cloud.horizon,
        });
    }
    Ok(())
}

/// Influence field at `(x, n)`: the smallest `l >= 0` such that no particle
/// that visited the open down-cone below `(x, n)` enters the up-cone with apex
/// `(x + l, n + l)` by time `horizon`. Cones have slope `v_bar`.
pub fn influence_field(
    cloud: &ParticleCloud,
    x: i64,
    n: u64,
    v_bar: f64,
    horizon: u64,
) -> Result<u64> {
    check_span(cloud, n, horizon)?;
    let idx = ConeIndex::new(cloud, v_bar);
    Ok(idx.h_at(x, n, horizon, None, &mut Vec::new()))
}

/// Local influence field: as [`influence_field`], counting only particles
/// that stay out of the down-cone below `(x - floor((1 - v_bar) t_prime), n)`.
pub fn local_influence_field(
    cloud: &ParticleCloud,
    x: i64,
    n: u64,
    v_bar: f64,
    t_prime: u64,
    horizon: u64,
) -> Result<u64> {
    check_span(cloud, n, horizon)?;
    let idx = ConeIndex::new(cloud, v_bar);
    Ok(idx.h_at(
        x,
        n,
        horizon,
        Some(local_depth(v_bar, t_prime)),
        &mut Vec::new(),
    ))
}

fn local_depth(v: f64, t_prime: u64) -> i64 {
    ((1.0 - v) * t_prime as f64 + TOL).floor() as i64
}

/// Record, good-record and regeneration times of one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenewalTimes {
    pub records: Vec<u64>,
    pub good: Vec<u64>,
    pub regenerations: Vec<u64>,
}

fn analyze(
    traj: &Trajectory,
    cloud: &ParticleCloud,
    params: &RenewalParams,
    regen: bool,
) -> Result<RenewalTimes> {
    let run = params.run_length()?;
    let width = params.exit_window()?;
    let height = params.exit_height()?;
    let look = params.lookahead()?;
    if traj.start.n < 0 {
        return Err(invalid("start", "start time must be nonnegative"));
    }
    let n0 = traj.start.n as u64;
    let end = n0 + traj.steps() as u64;
    check_span(cloud, n0, end)?;
    let (xs, cl, cone) = orient(traj, cloud, &params.cone);
    let v = cone.v_bar;
    let at = |t: u64| xs[(t - n0) as usize];
    let idx = ConeIndex::new(&cl, v);
    let mut buf = Vec::new();
    let side = (params.box_multiplier * run) as i64;
    let mut out = RenewalTimes {
        records: records_oriented(&xs, n0, v),
        ..Default::default()
    };

    for &r in &out.records {
        let x = at(r);
        let n2 = r + run;
        let x2 = x + run as i64;
        let horizon = n2 + look.max(height);
        if horizon > end {
            break;
        }
        // forced right steps
        if (0..run).any(|j| at(r + j + 1) != at(r + j) + 1) {
            continue;
        }
        if idx.h_at(x, r, horizon, Some(local_depth(v, width)), &mut buf) > run {
            continue;
        }
        // particles met during the run stay out of the new cone
        if (0..run).any(|j| idx.site_enters(x + j as i64, r + j, (x2, n2), horizon)) {
            continue;
        }
        // leave the parallelogram through its right side
        let far = (1.0 - v) * width as f64;
        let mut exit_right = false;
        for s in 1..=height {
            let rel = (at(n2 + s) - x2) as f64 - v * s as f64;
            if rel < -TOL {
                break;
            }
            if rel >= far - TOL {
                exit_right = true;
                break;
            }
        }
        if !exit_right {
            continue;
        }
        out.good.push(r);
        if regen && box_clear(&idx, x2, n2, side, horizon, cl.t0, &mut buf) {
            out.regenerations.push(n2);
        }
    }
    Ok(out)
}

/// No particle from the down-cone below `(x2, n2)` enters the up-cone above
/// it, and the influence field stays below the box side everywhere in the box
/// `[x2 - side, x2 + side] x [n2 - side, n2]`.
fn box_clear(
    idx: &ConeIndex,
    x2: i64,
    n2: u64,
    side: i64,
    horizon: u64,
    t0: u64,
    buf: &mut Vec<f64>,
) -> bool {
    if idx.h_at(x2, n2, horizon, None, buf) != 0 {
        return false;
    }
    for m in n2.saturating_sub(side as u64).max(t0)..=n2 {
        for y in x2 - side..=x2 + side {
            if idx.h_at(y, m, horizon, None, buf) > side as u64 {
                return false;
            }
        }
    }
    true
}

/// Times of the records that satisfy the run, influence, entry and exit
/// conditions. Records too close to the end of the trajectory are undecided
/// and dropped.
pub fn detect_good_records(
    traj: &Trajectory,
    cloud: &ParticleCloud,
    params: &RenewalParams,
) -> Result<Vec<u64>> {
    Ok(analyze(traj, cloud, params, false)?.good)
}

/// Regeneration times: good records shifted by the run length, kept when no
/// particle crosses from the past cone of the new point into its future cone
/// and the box around it passes the influence filter.
pub fn regeneration_times(
    traj: &Trajectory,
    cloud: &ParticleCloud,
    params: &RenewalParams,
) -> Result<Vec<u64>> {
    Ok(analyze(traj, cloud, params, true)?.regenerations)
}

/// All three time sets in one pass.
pub fn renewal_times(
    traj: &Trajectory,
    cloud: &ParticleCloud,
    params: &RenewalParams,
) -> Result<RenewalTimes> {
    analyze(traj, cloud, params, true)
}

/// Increments between consecutive regenerations, in the original orientation.
pub fn increments(traj: &Trajectory, regen: &[u64]) -> Result<Vec<Increment>> {
    let pos = |t: u64| {
        traj.at_time(t as i64).ok_or(Error::TimeOutOfRange {
            time: t,
            horizon: traj.steps() as u64,
        })
    };
    regen
        .windows(2)
        .map(|w| {
            Ok(Increment {
                dt: w[1] - w[0],
                dx: pos(w[1])? - pos(w[0])?,
            })
        })
        .collect()
}

/// Renewal-reward speed `sum dx / sum dt` with a delta-method error.
pub fn renewal_speed(incs: &[Increment]) -> Result<SpeedEstimate> {
    let dx: Vec<f64> = incs.iter().map(|i| i.dx as f64).collect();
    let dt: Vec<f64> = incs.iter().map(|i| i.dt as f64).collect();
    let (mean, se) = ratio_estimate(&dx, &dt).ok_or(Error::NoEstimate { found: incs.len() })?;
    Ok(SpeedEstimate {
        mean,
        stderr: se,
        ci95: (mean - Z95 * se, mean + Z95 * se),
        replicas: incs.len() as u64,
        n_steps: incs.iter().map(|i| i.dt).sum(),
        params: serde_json::json!({ "estimator": "ratio" }),
    })
}

/// Drive a walker from the origin for `n` steps through an eagerly simulated
/// plain environment, and return its trajectory together with the full paths
/// of every particle that came within [`RELEVANCE_RADIUS`] of it. Particle
/// steps are keyed exactly as in [`ParticleCloud::evolve_to`].
pub fn simulate_tracked(
    model: &ApcrwParams,
    walk: &WalkParams,
    n: u64,
    key: Key,
) -> Result<(Trajectory, ParticleCloud)> {
    let (traj, keep, init) = drive(model, walk, n, key, true)?;
    let (pl, ps, _) = model.step_probs();
    let k = key.tag("walk");
    let mut particles = Vec::new();
    for (id, &y0) in init.iter().enumerate() {
        if !keep[id] {
            continue;
        }
        let pk = k.derive(id as u64);
        let mut path = Vec::with_capacity(n as usize + 1);
        let mut y = y0;
        path.push(y);
        for t in 0..n {
            y += step_from(pk.unit2(0, t as i64), pl, ps);
            path.push(y);
        }
        particles.push(Particle { kind: 0, path });
    }
    let window = tracked_window(n);
    Ok((
        traj,
        ParticleCloud {
            window,
            t0: 0,
            horizon: n,
            particles,
        },
    ))
}

/// Trajectory of [`simulate_tracked`] without keeping particle paths.
pub fn simulate_walk(
    model: &ApcrwParams,
    walk: &WalkParams,
    n: u64,
    key: Key,
) -> Result<Trajectory> {
    Ok(drive(model, walk, n, key, false)?.0)
}

fn tracked_window(n: u64) -> Window {
    Window::around(0, 2 * n as i64 + EXACT_BUFFER + RELEVANCE_RADIUS)
}

fn drive(
    model: &ApcrwParams,
    walk: &WalkParams,
    n: u64,
    key: Key,
    track: bool,
) -> Result<(Trajectory, Vec<bool>, Vec<i32>)> {
    model.validate()?;
    let w = tracked_window(n);
    let init = sample_initial(std::slice::from_ref(model), w, key)?;
    let mut ys: Vec<i32> = Vec::with_capacity(init.total() as usize);
    for (i, &c) in init.counts[0].iter().enumerate() {
        for _ in 0..c {
            ys.push((w.lo + i as i64) as i32);
        }
    }
    let start = ys.clone();
    let mut occ = init.counts[0].clone();
    let (pl, ps, _) = model.step_probs();
    let k = key.tag("walk");
    let keys: Vec<Key> = (0..ys.len() as u64).map(|i| k.derive(i)).collect();
    let uf = UniformField::new(key.tag("arrows"));
    let mut keep = vec![false; if track { ys.len() } else { 0 }];
    let mut traj = Trajectory::new(LatticePoint::origin());
    traj.positions.reserve(n as usize);
    let mut x = 0i64;
    let mark = |keep: &mut [bool], ys: &[i32], x: i64| {
        for (kp, &y) in keep.iter_mut().zip(ys) {
            if (y as i64 - x).abs() <= RELEVANCE_RADIUS {
                *kp = true;
            }
        }
    };
    if track {
        mark(&mut keep, &ys, x);
    }
    for t in 0..n {
        let here = w.index(x).map(|i| occ[i] > 0).unwrap_or(false);
        x += arrow(here, uf.at(x, t as i64), walk);
        traj.positions.push(x);
        for (y, pk) in ys.iter_mut().zip(&keys) {
            let d = step_from(pk.unit2(0, t as i64), pl, ps);
            if d != 0 {
                if let Some(i) = w.index(*y as i64) {
                    occ[i] -= 1;
                }
                *y += d;
                if let Some(i) = w.index(*y as i64) {
                    occ[i] += 1;
                }
            }
        }
        if track {
            mark(&mut keep, &ys, x);
        }
    }
    Ok((traj, keep, start))
}

/// Inputs of a renewal experiment. `cone = None` places the cones from the
/// direct speed estimate of the same replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalConfig {
    pub model: ApcrwParams,
    pub walk: WalkParams,
    pub n: u64,
    pub replicas: u64,
    pub cone: Option<ConeParams>,
    pub t: u64,
    pub c: f64,
    pub box_multiplier: u64,
    pub lookahead: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementRow {
    pub replica: u64,
    pub index: usize,
    pub dt: u64,
    pub dx: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRenewal {
    pub replica: u64,
    pub displacement: i64,
    pub times: RenewalTimes,
    pub increments: Vec<Increment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalReport {
    pub cone: ConeParams,
    pub auto_cone: bool,
    pub mirrored: bool,
    pub run_length: u64,
    pub exit_window: u64,
    pub lookahead: u64,
    pub box_side: u64,
    pub n: u64,
    pub replicas: u64,
    pub records: u64,
    pub good_records: u64,
    pub regenerations: u64,
    pub renewal: SpeedEstimate,
    pub direct: SpeedEstimate,
    /// `|renewal - direct|` within 1.96 combined standard errors.
    pub agreement: bool,
    pub lag1: f64,
    pub lag1_pairs: usize,
    pub lag1_bound: f64,
    /// Two-sample test of early against late increments within trajectories.
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    pub dt_distribution: Distribution,
    pub dx_distribution: Distribution,
    pub increments: Vec<IncrementRow>,
    pub per_replica: Vec<ReplicaRenewal>,
}

impl RenewalReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# apcrw renewal v1")?;
        writeln!(w, "replica,index,dt,dx")?;
        for r in &self.increments {
            writeln!(w, "{},{},{},{}", r.replica, r.index, r.dt, r.dx)?;
        }
        Ok(())
    }
}

/// Simulate `replicas` tracked trajectories, extract regenerations and compare
/// the renewal speed with the direct estimate `X_n / n`.
pub fn renewal_experiment(cfg: &RenewalConfig, key: Key) -> Result<RenewalReport> {
    if cfg.replicas < 2 {
        return Err(invalid("replicas", "at least 2 replicas required"));
    }
    if cfg.n == 0 {
        return Err(invalid("n", "at least one step required"));
    }
    let drift = cfg.model.drift();
    let disp = map_replicas(cfg.replicas, key, |_, k| {
        Ok(simulate_walk(&cfg.model, &cfg.walk, cfg.n, k)?.displacement())
    })?;
    let direct =
        speed_from_displacements(&disp, cfg.n, serde_json::json!({ "estimator": "direct" }));
    let (cone, auto_cone) = match cfg.cone {
        Some(c) => (c, false),
        None => (ConeParams::auto(direct.mean, drift)?, true),
    };
    cone.check_regime(drift)?;
    let params = RenewalParams {
        cone,
        walk: cfg.walk,
        t: cfg.t,
        c: cfg.c,
        box_multiplier: cfg.box_multiplier,
        lookahead: cfg.lookahead,
    };
    params.validate()?;
    let per_replica = map_replicas(cfg.replicas, key, |r, k| {
        let (traj, cloud) = simulate_tracked(&cfg.model, &cfg.walk, cfg.n, k)?;
        let times = renewal_times(&traj, &cloud, &params)?;
        let increments = increments(&traj, &times.regenerations)?;
        Ok(ReplicaRenewal {
            replica: r,
            displacement: traj.displacement(),
            times,
            increments,
        })
    })?;

    let mut rows = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    let (mut early, mut late) = (Vec::new(), Vec::new());
    let mut all = Vec::new();
    for rep in &per_replica {
        let half = rep.increments.len() / 2;
        for (i, inc) in rep.increments.iter().enumerate() {
            rows.push(IncrementRow {
                replica: rep.replica,
                index: i,
                dt: inc.dt,
                dx: inc.dx,
            });
            if i < half {
                early.push(inc.dx as f64);
            } else {
                late.push(inc.dx as f64);
            }
        }
        groups.push(rep.increments.iter().map(|i| i.dx as f64).collect());
        all.extend_from_slice(&rep.increments);
    }
    let renewal = renewal_speed(&all)?;
    let (lag1, lag1_pairs) = lag1_autocorrelation(&groups);
    let (ks_statistic, ks_pvalue) = if early.is_empty() || late.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        ks_two_sample(&early, &late)
    };
    let se = renewal.stderr.hypot(direct.stderr);
    let count =
        |f: fn(&RenewalTimes) -> usize| per_replica.iter().map(|r| f(&r.times) as u64).sum();
    Ok(RenewalReport {
        cone,
        auto_cone,
        mirrored: cone.mirrored(),
        run_length: params.run_length()?,
        exit_window: params.exit_window()?,
        lookahead: params.lookahead()?,
        box_side: params.box_side()?,
        n: cfg.n,
        replicas: cfg.replicas,
        records: count(|t| t.records.len()),
        good_records: count(|t| t.good.len()),
        regenerations: count(|t| t.regenerations.len()),
        agreement: (renewal.mean - direct.mean).abs() <= Z95 * se,
        renewal,
        direct,
        lag1,
        lag1_pairs,
        lag1_bound: if lag1_pairs > 0 {
            3.0 / (lag1_pairs as f64).sqrt()
        } else {
            f64::INFINITY
        },
        ks_statistic,
        ks_pvalue,
        dt_distribution: Distribution::of(&all.iter().map(|i| i.dt as f64).collect::<Vec<_>>()),
        dx_distribution: Distribution::of(&all.iter().map(|i| i.dx as f64).collect::<Vec<_>>()),
        increments: rows,
        per_replica,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(n: usize) -> Trajectory {
        Trajectory {
            start: LatticePoint::origin(),
            positions: (0..=n as i64).collect(),
        }
    }

    fn frozen(sites: &[i32], horizon: u64) -> ParticleCloud {
        ParticleCloud {
            window: Window::around(0, 100),
            t0: 0,
            horizon,
            particles: sites
                .iter()
                .map(|&y| Particle {
                    kind: 0,
                    path: vec![y; horizon as usize + 1],
                })
                .collect(),
        }
    }

    fn params() -> RenewalParams {
        let cone = ConeParams::new(0.2, 0.4).unwrap();
        RenewalParams::new(cone, WalkParams::new(0.8, 0.3).unwrap(), 10_000)
    }

    #[test]
    fn straight_line_records() {
        let r = record_times(&straight(20), 0.5).unwrap();
        assert_eq!(r, (1..=20).collect::<Vec<u64>>());
    }

    #[test]
    fn empty_cloud_has_no_influence() {
        let c = frozen(&[], 50);
        assert_eq!(influence_field(&c, 3, 10, 0.2, 50).unwrap(), 0);
    }

    #[test]
    fn frozen_particles() {
        // with a nonnegative slope a frozen particle never crosses back
        let c = frozen(&[-2, 0, 3], 40);
        assert_eq!(influence_field(&c, 0, 10, 0.5, 40).unwrap(), 0);
        // with slope -1/2 a particle at the apex site is in the up-cone of
        // (l, 10 + l) from time 10 + 3l on
        let c = frozen(&[0], 40);
        assert_eq!(influence_field(&c, 0, 10, -0.5, 40).unwrap(), 11);
        assert_eq!(influence_field(&c, 0, 10, -0.5, 19).unwrap(), 4);
    }

    #[test]
    fn straight_walk_in_empty_environment_is_all_good() {
        let p = params();
        let tr = straight(400);
        let c = frozen(&[], 400);
        let rec = record_times(&tr, p.cone.v_bar).unwrap();
        let good = detect_good_records(&tr, &c, &p).unwrap();
        let reach = p.run_length().unwrap() + p.lookahead().unwrap();
        let decided: Vec<u64> = rec.into_iter().filter(|&r| r + reach <= 400).collect();
        assert_eq!(good, decided);
        let regen = regeneration_times(&tr, &c, &p).unwrap();
        assert_eq!(regen.len(), good.len());
        let inc = increments(&tr, &regen).unwrap();
        assert_eq!(renewal_speed(&inc).unwrap().mean, 1.0);
    }

    #[test]
    fn mirrored_walk_is_reflected() {
        let cone = ConeParams::new(-0.2, -0.4).unwrap();
        assert!(cone.mirrored());
        let p = RenewalParams::new(cone, WalkParams::new(0.7, 0.2).unwrap(), 10_000);
        let tr = Trajectory {
            start: LatticePoint::origin(),
            positions: (0..=300).map(|k| -k).collect(),
        };
        let c = frozen(&[], 300);
        let regen = regeneration_times(&tr, &c, &p).unwrap();
        assert!(!regen.is_empty());
        let v = renewal_speed(&increments(&tr, &regen).unwrap()).unwrap();
        assert_eq!(v.mean, -1.0);
    }

    #[test]
    fn tracked_paths_match_eager_cloud() {
        let m = ApcrwParams {
            rho: 1.0,
            alpha: 0.5,
            q: 0.6,
        };
        let w = WalkParams::new(0.8, 0.3).unwrap();
        let key = Key::new(9);
        let (tr, cloud) = simulate_tracked(&m, &w, 60, key).unwrap();
        assert!(tr.is_valid());
        let init = sample_initial(std::slice::from_ref(&m), tracked_window(60), key).unwrap();
        let mut full = ParticleCloud::from_state(&init);
        full.evolve_to(std::slice::from_ref(&m), 60, key);
        for p in &cloud.particles {
            assert!(full.particles.iter().any(|q| q.path == p.path));
        }
        assert_eq!(simulate_walk(&m, &w, 60, key).unwrap(), tr);
    }

    #[test]
    fn cone_validation() {
        assert!(ConeParams::new(0.3, 0.3).is_err());
        let c = ConeParams::new(0.2, 0.4).unwrap();
        assert!((c.beta - 4.0).abs() < 1e-12);
        assert!(c.check_regime(0.1).is_ok());
        assert!(c.check_regime(0.25).is_err());
        let mut p = params();
        p.t = 10;
        assert!(p.run_length().is_err());
    }
}
