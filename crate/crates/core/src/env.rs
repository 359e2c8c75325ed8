//! The particle environment: parameters, windows, count states and
//! individually tracked particle clouds.

use crate::error::{invalid, Error, Result};
use crate::rng::Key;
use rand::RngCore;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// One cloud of lazy drifted walkers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApcrwParams {
    pub rho: f64,
    pub alpha: f64,
    pub q: f64,
}

impl ApcrwParams {
    /// Checked constructor: `rho > 0`, `alpha` and `q` in `(0, 1)`.
    pub fn new(rho: f64, alpha: f64, q: f64) -> Result<Self> {
        let p = ApcrwParams { rho, alpha, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", format!("{} must be positive", self.rho)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("{} not in (0, 1)", self.alpha)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid("q", format!("{} not in (0, 1)", self.q)));
        }
        Ok(())
    }

    pub fn drift(&self) -> f64 {
        self.alpha * (2.0 * self.q - 1.0)
    }

    /// `(left, stay, right)` probabilities.
    pub fn step_probs(&self) -> (f64, f64, f64) {
        (
            self.alpha * (1.0 - self.q),
            1.0 - self.alpha,
            self.alpha * self.q,
        )
    }

    pub fn with_rho(self, rho: f64) -> Self {
        ApcrwParams { rho, ..self }
    }
}

impl AsRef<[ApcrwParams]> for ApcrwParams {
    fn as_ref(&self) -> &[ApcrwParams] {
        std::slice::from_ref(self)
    }
}

/// Independent clouds with densities `beta_i * base_rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionParams {
    pub base_rho: f64,
    pub betas: Vec<f64>,
    pub components: Vec<ApcrwParams>,
}

impl SuperpositionParams {
    /// `parts` holds `(beta, alpha, q)` per component.
    pub fn new(base_rho: f64, parts: &[(f64, f64, f64)]) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("components", "at least one component required"));
        }
        let mut components = Vec::with_capacity(parts.len());
        for &(beta, alpha, q) in parts {
            if !(beta > 0.0) {
                return Err(invalid("beta", format!("{beta} must be positive")));
            }
            components.push(ApcrwParams::new(beta * base_rho, alpha, q)?);
        }
        Ok(SuperpositionParams {
            base_rho,
            betas: parts.iter().map(|p| p.0).collect(),
            components,
        })
    }

    pub fn single(p: ApcrwParams) -> Self {
        SuperpositionParams {
            base_rho: p.rho,
            betas: vec![1.0],
            components: vec![p],
        }
    }

    /// Same shape at another base density.
    pub fn at_rho(&self, rho: f64) -> Self {
        SuperpositionParams {
            base_rho: rho,
            betas: self.betas.clone(),
            components: self
                .components
                .iter()
                .zip(&self.betas)
                .map(|(c, b)| c.with_rho(b * rho))
                .collect(),
        }
    }

    /// Total density.
    pub fn total_rho(&self) -> f64 {
        self.components.iter().map(|c| c.rho).sum()
    }
}

impl AsRef<[ApcrwParams]> for SuperpositionParams {
    fn as_ref(&self) -> &[ApcrwParams] {
        &self.components
    }
}

impl From<ApcrwParams> for SuperpositionParams {
    fn from(p: ApcrwParams) -> Self {
        SuperpositionParams::single(p)
    }
}

/// Inclusive interval of sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(invalid("window", format!("lo {lo} > hi {hi}")));
        }
        Ok(Window { lo, hi })
    }

    /// `[centre - half, centre + half]`.
    pub fn around(centre: i64, half: i64) -> Self {
        Window {
            lo: centre - half,
            hi: centre + half,
        }
    }

    /// Window large enough to drive a walker exactly for `n` steps from `x`.
    pub fn exact_for(x: i64, n: u64) -> Self {
        Window::around(x, 2 * n as i64 + EXACT_BUFFER)
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, x: i64) -> bool {
        x >= self.lo && x <= self.hi
    }

    #[inline]
    pub fn index(&self, x: i64) -> Option<usize> {
        self.contains(x).then(|| (x - self.lo) as usize)
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }

    pub fn shrink(&self, by: i64) -> Option<Window> {
        (self.lo + by <= self.hi - by).then(|| Window {
            lo: self.lo + by,
            hi: self.hi - by,
        })
    }
}

/// Buffer added on both sides of the exact window.
pub const EXACT_BUFFER: i64 = 2;

/// Particle counts on a window at one time, one row per particle type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub window: Window,
    pub time: u64,
    pub counts: Vec<Vec<u32>>,
    /// Particles that have left the window so far.
    pub overflow: u64,
}

impl EnvState {
    pub fn empty(window: Window, types: usize, time: u64) -> Self {
        EnvState {
            window,
            time,
            counts: vec![vec![0; window.len()]; types],
            overflow: 0,
        }
    }

    pub fn types(&self) -> usize {
        self.counts.len()
    }

    /// Count of all types at `x` (0 outside the window).
    pub fn total_at(&self, x: i64) -> u32 {
        match self.window.index(x) {
            Some(i) => self.counts.iter().map(|c| c[i]).sum(),
            None => 0,
        }
    }

    /// A site is occupied when any type has a particle there.
    pub fn occupied(&self, x: i64) -> bool {
        self.total_at(x) > 0
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    /// Summed counts over types.
    pub fn merged(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.window.len()];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// Pointwise `self <= other` on `region`, both summed over types.
    pub fn dominated_by(&self, other: &EnvState, region: Window) -> bool {
        region
            .sites()
            .all(|x| self.total_at(x) <= other.total_at(x))
    }

    /// CSV snapshot with columns `site,type,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# apcrw env-snapshot v1 time={}", self.time)?;
        writeln!(w, "site,type,count")?;
        for (ty, row) in self.counts.iter().enumerate() {
            for (i, c) in row.iter().enumerate() {
                writeln!(w, "{},{},{}", self.window.lo + i as i64, ty, c)?;
            }
        }
        Ok(())
    }
}

/// Poisson counts keyed by site, so a site's draw does not depend on the window.
pub(crate) fn poisson_counts(rate: f64, window: Window, key: Key) -> Vec<u32> {
    if rate <= 0.0 {
        return vec![0; window.len()];
    }
    let dist = Poisson::new(rate).expect("positive finite rate");
    window
        .sites()
        .map(|x| {
            let mut r = key.derive(x as u64).stream();
            dist.sample(&mut r) as u32
        })
        .collect()
}

/// Product Poisson initial state.
pub fn sample_initial<M: AsRef<[ApcrwParams]> + ?Sized>(
    model: &M,
    window: Window,
    key: Key,
) -> Result<EnvState> {
    let comps = model.as_ref();
    if comps.is_empty() {
        return Err(invalid("components", "at least one component required"));
    }
    let mut counts = Vec::with_capacity(comps.len());
    for (ty, c) in comps.iter().enumerate() {
        if !(c.rho > 0.0 && c.rho.is_finite()) {
            return Err(invalid("rho", format!("{} must be positive", c.rho)));
        }
        counts.push(poisson_counts(
            c.rho,
            window,
            key.tag("init").derive(ty as u64),
        ));
    }
    Ok(EnvState {
        window,
        time: 0,
        counts,
        overflow: 0,
    })
}

/// Split `n` particles into `(left, stay, right)`.
fn split<R: RngCore>(n: u32, p: &ApcrwParams, r: &mut R) -> (u32, u32, u32) {
    let (pl, ps, _) = p.step_probs();
    if n <= 16 {
        let (mut l, mut s) = (0, 0);
        for _ in 0..n {
            let u = crate::rng::to_unit(r.next_u64());
            if u < pl {
                l += 1;
            } else if u < pl + ps {
                s += 1;
            }
        }
        return (l, s, n - l - s);
    }
    let s = Binomial::new(n as u64, ps.clamp(0.0, 1.0))
        .unwrap()
        .sample(r) as u32;
    let rest = n - s;
    let pr_cond = if pl + ps >= 1.0 {
        0.0
    } else {
        (1.0 - pl - ps) / (1.0 - ps)
    };
    let right = Binomial::new(rest as u64, pr_cond.clamp(0.0, 1.0))
        .unwrap()
        .sample(r) as u32;
    (rest - right, s, right)
}

/// One step of the count representation: each site's particles are split
/// multinomially into left, stay and right movers. Particles leaving the window
/// are added to the overflow tally.
pub fn step_counts<M: AsRef<[ApcrwParams]> + ?Sized>(
    state: &EnvState,
    model: &M,
    key: Key,
) -> EnvState {
    let comps = model.as_ref();
    let w = state.window;
    let len = w.len();
    let mut out = EnvState::empty(w, state.types(), state.time + 1);
    out.overflow = state.overflow;
    for (ty, row) in state.counts.iter().enumerate() {
        let p = &comps[ty.min(comps.len() - 1)];
        let k = key.tag("step").derive(ty as u64).derive(state.time);
        let dst = &mut out.counts[ty];
        for (i, &n) in row.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let mut r = k.derive((w.lo + i as i64) as u64).stream();
            let (l, s, rt) = split(n, p, &mut r);
            dst[i] += s;
            if i > 0 {
                dst[i - 1] += l;
            } else {
                out.overflow += l as u64;
            }
            if i + 1 < len {
                dst[i + 1] += rt;
            } else {
                out.overflow += rt as u64;
            }
        }
    }
    out
}

/// A tracked particle: its type and its position at every recorded time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Particle {
    pub kind: u16,
    pub path: Vec<i32>,
}

impl Particle {
    #[inline]
    pub fn at(&self, t0: u64, t: u64) -> i64 {
        self.path[(t - t0) as usize] as i64
    }
}

/// Individually tracked particles with full position histories from `t0` to
/// `horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    pub window: Window,
    pub t0: u64,
    pub horizon: u64,
    pub particles: Vec<Particle>,
}

impl ParticleCloud {
    /// Particles at their initial sites, ordered by type then site.
    pub fn from_state(state: &EnvState) -> Self {
        let mut particles = Vec::with_capacity(state.total() as usize);
        for (ty, row) in state.counts.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                let x = (state.window.lo + i as i64) as i32;
                for _ in 0..c {
                    particles.push(Particle {
                        kind: ty as u16,
                        path: vec![x],
                    });
                }
            }
        }
        ParticleCloud {
            window: state.window,
            t0: state.time,
            horizon: state.time,
            particles,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn position(&self, p: usize, t: u64) -> Result<i64> {
        if t < self.t0 || t > self.horizon {
            return Err(Error::TimeOutOfRange {
                time: t,
                horizon: self.horizon,
            });
        }
        Ok(self.particles[p].at(self.t0, t))
    }

    /// Extend every path to `horizon` in one pass per particle.
    pub fn evolve_to<M: AsRef<[ApcrwParams]> + ?Sized>(
        &mut self,
        model: &M,
        horizon: u64,
        key: Key,
    ) {
        let comps = model.as_ref();
        let k = key.tag("walk");
        let t0 = self.t0;
        for (id, part) in self.particles.iter_mut().enumerate() {
            let (pl, ps, _) = comps[(part.kind as usize).min(comps.len() - 1)].step_probs();
            let pk = k.derive(id as u64);
            let mut y = *part.path.last().unwrap();
            let start = t0 + part.path.len() as u64 - 1;
            part.path.reserve((horizon - start) as usize);
            for t in start..horizon {
                let u = pk.unit2(0, t as i64);
                y += step_from(u, pl, ps);
                part.path.push(y);
            }
        }
        self.horizon = self.horizon.max(horizon);
    }

    /// Positions at time `t` as a count state on the cloud window.
    pub fn counts_at(&self, t: u64, types: usize) -> Result<EnvState> {
        if t < self.t0 || t > self.horizon {
            return Err(Error::TimeOutOfRange {
                time: t,
                horizon: self.horizon,
            });
        }
        let mut st = EnvState::empty(self.window, types.max(1), t);
        let i = (t - self.t0) as usize;
        for p in &self.particles {
            let x = p.path[i] as i64;
            match self.window.index(x) {
                Some(j) => st.counts[p.kind as usize][j] += 1,
                None => st.overflow += 1,
            }
        }
        Ok(st)
    }
}

#[inline]
pub(crate) fn step_from(u: f64, pl: f64, ps: f64) -> i32 {
    if u < pl {
        -1
    } else if u < pl + ps {
        0
    } else {
        1
    }
}

/// Advance every particle by one step, appending to its path. The step of
/// particle `i` at time `t` is keyed by `(i, t)`, matching [`ParticleCloud::evolve_to`].
pub fn step_particles<M: AsRef<[ApcrwParams]> + ?Sized>(
    cloud: &ParticleCloud,
    model: &M,
    key: Key,
) -> ParticleCloud {
    let mut next = cloud.clone();
    next.evolve_to(model, cloud.horizon + 1, key);
    next
}

/// Histogram of the cloud at `time`.
pub fn counts_of(cloud: &ParticleCloud, time: u64) -> Result<EnvState> {
    let types = cloud
        .particles
        .iter()
        .map(|p| p.kind as usize + 1)
        .max()
        .unwrap_or(1);
    cloud.counts_at(time, types)
}

/// Monotone pair of clouds: the high cloud is the low cloud plus an
/// independent Poisson layer of density `hi.rho - lo.rho`. Shared particles
/// follow identical paths, so the low counts never exceed the high ones.
pub fn couple_monotone(
    lo: &ApcrwParams,
    hi: &ApcrwParams,
    window: Window,
    horizon: u64,
    key: Key,
) -> Result<(ParticleCloud, ParticleCloud)> {
    if lo.rho > hi.rho {
        return Err(invalid(
            "rho",
            format!("low density {} exceeds high density {}", lo.rho, hi.rho),
        ));
    }
    if lo.alpha != hi.alpha || lo.q != hi.q {
        return Err(invalid("alpha/q", "coupled clouds must share alpha and q"));
    }
    let base = sample_initial(lo, window, key.tag("base"))?;
    let extra = poisson_counts(hi.rho - lo.rho, window, key.tag("extra"));
    let mut low = ParticleCloud::from_state(&base);
    let n_low = low.len();
    let mut both = low.clone();
    for (i, &c) in extra.iter().enumerate() {
        let x = (window.lo + i as i64) as i32;
        for _ in 0..c {
            both.particles.push(Particle {
                kind: 0,
                path: vec![x],
            });
        }
    }
    both.evolve_to(lo, horizon, key);
    low.particles = both.particles[..n_low].to_vec();
    low.horizon = both.horizon;
    Ok((low, both))
}

/// Worst deviation of interval counts from `rho * ell`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub ell: usize,
    pub worst_interval: (i64, i64),
    pub max_deviation: f64,
    pub max_excess: f64,
    pub max_deficit: f64,
    pub pass: bool,
}

/// Scan all length-`ell` subintervals of the state window.
pub fn empirical_density_report(
    state: &EnvState,
    ell: usize,
    rho: f64,
    eps: f64,
) -> Result<DensityReport> {
    let w = state.window;
    if ell == 0 || ell > w.len() {
        return Err(invalid("ell", format!("{ell} must lie in 1..={}", w.len())));
    }
    let c = state.merged();
    let target = rho * ell as f64;
    let mut sum: u64 = c[..ell].iter().map(|&v| v as u64).sum();
    let (mut exc, mut def, mut worst, mut at) = (f64::MIN, f64::MIN, -1.0, 0usize);
    for start in 0..=(c.len() - ell) {
        if start > 0 {
            sum = sum + c[start + ell - 1] as u64 - c[start - 1] as u64;
        }
        let d = (sum as f64 - target) / ell as f64;
        exc = exc.max(d);
        def = def.max(-d);
        if d.abs() > worst {
            worst = d.abs();
            at = start;
        }
    }
    let lo = w.lo + at as i64;
    Ok(DensityReport {
        ell,
        worst_interval: (lo, lo + ell as i64 - 1),
        max_deviation: worst,
        max_excess: exc,
        max_deficit: def,
        pass: worst < eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(rho: f64) -> ApcrwParams {
        ApcrwParams {
            rho,
            alpha: 0.5,
            q: 0.6,
        }
    }

    #[test]
    fn deterministic_right_step() {
        let w = Window::new(-3, 3).unwrap();
        let mut st = EnvState::empty(w, 1, 0);
        st.counts[0][3] = 1;
        let det = ApcrwParams {
            rho: 1.0,
            alpha: 1.0,
            q: 1.0,
        };
        for s in 0..20 {
            let nx = step_counts(&st, &det, Key::new(s));
            assert_eq!(nx.total_at(1), 1);
            assert_eq!(nx.total(), 1);
        }
    }

    #[test]
    fn conservation_with_overflow() {
        let w = Window::new(0, 9).unwrap();
        let mut st = sample_initial(&p(3.0), w, Key::new(1)).unwrap();
        let before = st.total();
        for s in 0..50 {
            st = step_counts(&st, &p(3.0), Key::new(2).derive(s));
            assert_eq!(st.total() + st.overflow, before);
        }
        assert!(st.overflow > 0);
    }

    #[test]
    fn frozen_particles() {
        let w = Window::new(-5, 5).unwrap();
        let st = sample_initial(&p(1.0), w, Key::new(3)).unwrap();
        let mut cloud = ParticleCloud::from_state(&st);
        let frozen = ApcrwParams {
            rho: 1.0,
            alpha: 0.0,
            q: 0.5,
        };
        cloud.evolve_to(&frozen, 30, Key::new(4));
        for part in &cloud.particles {
            assert!(part.path.iter().all(|&y| y == part.path[0]));
        }
    }

    #[test]
    fn counts_of_single_particle() {
        let w = Window::new(-4, 4).unwrap();
        let mut st = EnvState::empty(w, 1, 0);
        st.counts[0][6] = 1;
        let cloud = ParticleCloud::from_state(&st);
        let c = counts_of(&cloud, 0).unwrap();
        assert_eq!(c, st);
        assert!(counts_of(&cloud, 1).is_err());
        let empty = ParticleCloud::from_state(&EnvState::empty(w, 1, 0));
        assert_eq!(counts_of(&empty, 0).unwrap().total(), 0);
    }

    #[test]
    fn step_particles_matches_evolve() {
        let w = Window::new(-10, 10).unwrap();
        let st = sample_initial(&p(1.0), w, Key::new(5)).unwrap();
        let c0 = ParticleCloud::from_state(&st);
        let mut a = c0.clone();
        a.evolve_to(&p(1.0), 3, Key::new(6));
        let mut b = c0;
        for _ in 0..3 {
            b = step_particles(&b, &p(1.0), Key::new(6));
        }
        assert_eq!(a, b);
    }

    #[test]
    fn equal_densities_give_identical_clouds() {
        let w = Window::new(-20, 20).unwrap();
        let (a, b) = couple_monotone(&p(1.0), &p(1.0), w, 40, Key::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupling_rejects_reversed_densities() {
        let w = Window::new(-2, 2).unwrap();
        assert!(couple_monotone(&p(2.0), &p(1.0), w, 3, Key::new(0)).is_err());
    }

    #[test]
    fn sample_rejects_nonpositive_rho() {
        let w = Window::new(0, 3).unwrap();
        assert!(sample_initial(
            &ApcrwParams {
                rho: 0.0,
                alpha: 0.5,
                q: 0.5
            },
            w,
            Key::new(0)
        )
        .is_err());
    }

    #[test]
    fn density_report_examples() {
        let w = Window::new(0, 99).unwrap();
        let zero = EnvState::empty(w, 1, 0);
        let r = empirical_density_report(&zero, 10, 1.0, 0.5).unwrap();
        assert!(!r.pass);
        assert_eq!(r.max_deviation, 1.0);
        let mut one = EnvState::empty(w, 1, 0);
        one.counts[0].iter_mut().for_each(|c| *c = 1);
        let r = empirical_density_report(&one, 10, 1.0, 0.11).unwrap();
        assert!(r.pass);
    }
}
