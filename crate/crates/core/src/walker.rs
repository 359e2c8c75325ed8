//! The driven walker, the arrow field and monotone walk couplings.

use crate::env::{EnvState, ParticleCloud, Window};
use crate::error::{invalid, Error, Result};
use crate::rng::UniformField;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Right-jump probabilities on occupied and empty sites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    pub p_occ: f64,
    pub p_vac: f64,
}

impl WalkParams {
    /// Checked constructor for the standard convention `0 < p_vac < p_occ < 1`.
    pub fn new(p_occ: f64, p_vac: f64) -> Result<Self> {
        let w = WalkParams { p_occ, p_vac };
        if !(p_occ > 0.0 && p_occ < 1.0) {
            return Err(invalid("p_occ", format!("{p_occ} not in (0, 1)")));
        }
        if !(p_vac > 0.0 && p_vac < 1.0) {
            return Err(invalid("p_vac", format!("{p_vac} not in (0, 1)")));
        }
        if p_vac >= p_occ {
            return Err(invalid(
                "p_vac",
                format!("convention requires p_occ > p_vac, got p_occ = {p_occ}, p_vac = {p_vac}"),
            ));
        }
        Ok(w)
    }

    /// Environment-blind walker with right probability `p`.
    pub fn blind(p: f64) -> Self {
        WalkParams { p_occ: p, p_vac: p }
    }

    #[inline]
    pub fn threshold(&self, occupied: bool) -> f64 {
        if occupied {
            self.p_occ
        } else {
            self.p_vac
        }
    }
}

/// Jump `+1` when `u` is at most the threshold for the site's occupancy.
#[inline]
pub fn arrow(occupied: bool, u: f64, params: &WalkParams) -> i64 {
    if u <= params.threshold(occupied) {
        1
    } else {
        -1
    }
}

/// A space-time point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticePoint {
    pub x: i64,
    pub n: i64,
}

impl LatticePoint {
    pub fn new(x: i64, n: i64) -> Self {
        LatticePoint { x, n }
    }

    pub fn origin() -> Self {
        LatticePoint { x: 0, n: 0 }
    }

    /// `true` for the sublattice reached from `(1, 1)`, i.e. odd `x + n`.
    pub fn shifted(&self) -> bool {
        (self.x + self.n).rem_euclid(2) == 1
    }
}

/// Walker positions `X_0..X_n` from a start point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: LatticePoint,
    pub positions: Vec<i64>,
}

impl Trajectory {
    pub fn new(start: LatticePoint) -> Self {
        Trajectory {
            start,
            positions: vec![start.x],
        }
    }

    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn end(&self) -> i64 {
        *self.positions.last().unwrap()
    }

    pub fn displacement(&self) -> i64 {
        self.end() - self.start.x
    }

    /// Position at absolute time `n`.
    pub fn at_time(&self, n: i64) -> Option<i64> {
        let k = n - self.start.n;
        (k >= 0)
            .then(|| self.positions.get(k as usize).copied())
            .flatten()
    }

    /// Unit steps and constant parity of `X_k + time`.
    pub fn is_valid(&self) -> bool {
        self.positions.first() == Some(&self.start.x)
            && self.positions.windows(2).all(|w| (w[1] - w[0]).abs() == 1)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# apcrw trajectory v1 start_x={} start_n={}",
            self.start.x, self.start.n
        )?;
        writeln!(w, "step,position")?;
        for (k, x) in self.positions.iter().enumerate() {
            writeln!(w, "{k},{x}")?;
        }
        Ok(())
    }
}

/// A site queried by a walker. Bit `i` of `mask` selects layer `i` of a
/// layered environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub site: i64,
    pub mask: u32,
}

/// Mask selecting layers `0..=top`.
pub fn nested_mask(top: u32) -> u32 {
    if top >= 31 {
        u32::MAX
    } else {
        (1u32 << (top + 1)) - 1
    }
}

/// Occupancy oracle consumed by walkers.
///
/// Calls happen at increasing times and all probes of one time arrive in a
/// single call.
pub trait Environment {
    fn counts(&mut self, t: u64, probes: &[Probe], out: &mut Vec<u32>) -> Result<()>;
}

/// Precomputed count states, one sequence per layer. A probe sees the sum of
/// the layers selected by its mask.
#[derive(Clone, Debug)]
pub struct TabulatedEnv {
    layers: Vec<Vec<EnvState>>,
    t0: u64,
    check_domination: bool,
}

impl TabulatedEnv {
    pub fn new(states: Vec<EnvState>) -> Self {
        let t0 = states.first().map(|s| s.time).unwrap_or(0);
        TabulatedEnv {
            layers: vec![states],
            t0,
            check_domination: false,
        }
    }

    /// Layered table; with `check_domination` each query verifies that counts
    /// are non-decreasing from one layer to the next at every probed site.
    pub fn layered(layers: Vec<Vec<EnvState>>, check_domination: bool) -> Self {
        let t0 = layers
            .first()
            .and_then(|l| l.first())
            .map(|s| s.time)
            .unwrap_or(0);
        TabulatedEnv {
            layers,
            t0,
            check_domination,
        }
    }

    /// Tabulate clouds over their common recorded range.
    pub fn from_clouds(clouds: &[&ParticleCloud], check_domination: bool) -> Result<Self> {
        let mut layers = Vec::with_capacity(clouds.len());
        for c in clouds {
            let mut seq = Vec::with_capacity((c.horizon - c.t0 + 1) as usize);
            for t in c.t0..=c.horizon {
                seq.push(crate::env::counts_of(c, t)?);
            }
            layers.push(seq);
        }
        Ok(Self::layered(layers, check_domination))
    }

    fn state(&self, layer: usize, t: u64) -> Result<&EnvState> {
        let seq = &self.layers[layer];
        let i = t.checked_sub(self.t0).ok_or(Error::TimeOutOfRange {
            time: t,
            horizon: self.t0,
        })? as usize;
        seq.get(i).ok_or(Error::TimeOutOfRange {
            time: t,
            horizon: self.t0 + seq.len() as u64 - 1,
        })
    }
}

impl Environment for TabulatedEnv {
    fn counts(&mut self, t: u64, probes: &[Probe], out: &mut Vec<u32>) -> Result<()> {
        out.clear();
        for pr in probes {
            let mut total = 0;
            for v in 0..self.layers.len().min(32) {
                if pr.mask & (1 << v) == 0 {
                    continue;
                }
                let st = self.state(v, t)?;
                if !st.window.contains(pr.site) {
                    let w = st.window;
                    return Err(Error::WindowTooSmall {
                        site: pr.site,
                        time: t,
                        lo: w.lo,
                        hi: w.hi,
                    });
                }
                total += st.total_at(pr.site);
            }
            if self.check_domination {
                let mut prev = 0;
                for v in 0..self.layers.len() {
                    let c = self.state(v, t)?.total_at(pr.site);
                    if c < prev {
                        return Err(Error::RegionViolation {
                            site: pr.site,
                            time: t,
                        });
                    }
                    prev = c;
                }
            }
            out.push(total);
        }
        Ok(())
    }
}

/// A walker to drive: start point and the environment layers it sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkerSpec {
    pub start: LatticePoint,
    pub mask: u32,
}

/// Drive several walkers through one environment with one uniform field.
/// All walkers must start at the same time.
pub fn run_walks<E: Environment + ?Sized>(
    env: &mut E,
    walkers: &[WalkerSpec],
    n_steps: u64,
    params: &WalkParams,
    ufield: &UniformField,
) -> Result<Vec<Trajectory>> {
    let Some(first) = walkers.first() else {
        return Ok(Vec::new());
    };
    let n0 = first.start.n;
    if walkers.iter().any(|w| w.start.n != n0) {
        return Err(invalid("start", "all walkers must start at the same time"));
    }
    if n0 < 0 {
        return Err(invalid("start", "start time must be nonnegative"));
    }
    let mut trajs: Vec<Trajectory> = walkers.iter().map(|w| Trajectory::new(w.start)).collect();
    for t in &mut trajs {
        t.positions.reserve(n_steps as usize);
    }
    let mut probes: Vec<Probe> = walkers
        .iter()
        .map(|w| Probe {
            site: w.start.x,
            mask: w.mask,
        })
        .collect();
    let mut counts = Vec::with_capacity(walkers.len());
    for k in 0..n_steps as i64 {
        let t = n0 + k;
        env.counts(t as u64, &probes, &mut counts)?;
        for ((pr, tr), &c) in probes.iter_mut().zip(trajs.iter_mut()).zip(&counts) {
            let u = ufield.at(pr.site, t);
            pr.site += arrow(c > 0, u, params);
            tr.positions.push(pr.site);
        }
    }
    Ok(trajs)
}

/// Single walker.
pub fn run_walk<E: Environment + ?Sized>(
    env: &mut E,
    start: LatticePoint,
    mask: u32,
    n_steps: u64,
    params: &WalkParams,
    ufield: &UniformField,
) -> Result<Trajectory> {
    Ok(run_walks(env, &[WalkerSpec { start, mask }], n_steps, params, ufield)?.remove(0))
}

/// Two walkers with ordered starts on a shared field, the lower one seeing a
/// dominated environment. The returned trajectories satisfy `lo <= hi` at
/// every step whenever the domination holds where the walkers go; a crossing
/// is reported as a region violation.
pub fn run_coupled_walks<E: Environment + ?Sized>(
    env: &mut E,
    lo: WalkerSpec,
    hi: WalkerSpec,
    n_steps: u64,
    params: &WalkParams,
    ufield: &UniformField,
) -> Result<(Trajectory, Trajectory)> {
    if lo.start.n != hi.start.n {
        return Err(invalid("start", "coupled walks need a common start time"));
    }
    if lo.start.x > hi.start.x {
        return Err(invalid(
            "start",
            "lower walker must start weakly left of the upper walker",
        ));
    }
    if (hi.start.x - lo.start.x) % 2 != 0 {
        return Err(invalid("start", "coupled starts must share parity"));
    }
    let mut v = run_walks(env, &[lo, hi], n_steps, params, ufield)?;
    let h = v.pop().unwrap();
    let l = v.pop().unwrap();
    for (k, (a, b)) in l.positions.iter().zip(&h.positions).enumerate() {
        if a > b {
            return Err(Error::RegionViolation {
                site: *a,
                time: (lo.start.n + k as i64) as u64,
            });
        }
    }
    Ok((l, h))
}

/// Environment with no particles anywhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct EmptyEnv;

impl Environment for EmptyEnv {
    fn counts(&mut self, _t: u64, probes: &[Probe], out: &mut Vec<u32>) -> Result<()> {
        out.clear();
        out.resize(probes.len(), 0);
        Ok(())
    }
}

/// Windowed helper used by exact-window checks.
pub fn reachable_window(start: LatticePoint, n_steps: u64) -> Window {
    Window::around(start.x, n_steps as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Key;

    #[test]
    fn arrow_examples() {
        let w = WalkParams::new(0.8, 0.3).unwrap();
        assert_eq!(arrow(true, 0.0, &w), 1);
        assert_eq!(arrow(false, 1.0, &w), -1);
        assert_eq!(arrow(false, 0.5, &w), -1);
        assert_eq!(arrow(true, 0.5, &w), 1);
    }

    #[test]
    fn rejects_reversed_convention() {
        let e = WalkParams::new(0.3, 0.9).unwrap_err().to_string();
        assert!(e.contains("p_occ > p_vac"), "{e}");
    }

    #[test]
    fn empty_env_all_right() {
        let w = WalkParams {
            p_occ: 1.0,
            p_vac: 1.0,
        };
        let tr = run_walk(
            &mut EmptyEnv,
            LatticePoint::origin(),
            1,
            50,
            &w,
            &UniformField::new(Key::new(1)),
        )
        .unwrap();
        assert_eq!(tr.end(), 50);
        assert!(tr.is_valid());
    }

    #[test]
    fn walkers_on_same_point_merge() {
        let w = WalkParams::new(0.8, 0.3).unwrap();
        let f = UniformField::new(Key::new(2));
        let specs = [
            WalkerSpec {
                start: LatticePoint::new(-4, 0),
                mask: 1,
            },
            WalkerSpec {
                start: LatticePoint::new(6, 0),
                mask: 1,
            },
        ];
        let v = run_walks(&mut EmptyEnv, &specs, 2000, &w, &f).unwrap();
        let mut met = false;
        for (a, b) in v[0].positions.iter().zip(&v[1].positions) {
            if met {
                assert_eq!(a, b);
            }
            met |= a == b;
        }
    }

    #[test]
    fn lattice_parity() {
        assert!(!LatticePoint::new(2, 4).shifted());
        assert!(LatticePoint::new(1, 4).shifted());
        assert!(LatticePoint::new(-1, 0).shifted());
    }
}
