//! Many-to-one coupling of a walker in a plain environment of density `rho`
//! with a walker in an environment of density `rho + eps` refreshed every `L`
//! steps.
//!
//! The first block uses the monotone coupling (the denser environment is the
//! sparser one plus an independent layer, both walkers read one uniform
//! field). At every later refresh the construction checks the empirical
//! densities (G1), recouples the two environments with soft local times over
//! `floor(f(L) / 2)` steps (G2), then moves paired particles together and
//! drives both walkers with shared time-indexed uniforms while checking that
//! the domination holds near the walkers (G3). On any failure the pair
//! carries on with independent randomness.

use crate::engine::{JumpLaws, LazyCloud, Seed};
use crate::env::{poisson_counts, ApcrwParams, EnvState, Window, EXACT_BUFFER};
use crate::error::{invalid, Result};
use crate::kernels::{exact_kernel, KernelTable};
use crate::par::map_replicas;
use crate::rng::{Key, StreamRng, UniformField};
use crate::slt::{soft_local_time_on, PoissonStrip};
use crate::stats::{Distribution, Frequency};
use crate::walker::{arrow, run_walk, run_walks, LatticePoint, WalkParams, WalkerSpec};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManyToOneParams {
    /// Environment of the first walker; `model.rho` is its density.
    pub model: ApcrwParams,
    pub walk: WalkParams,
    pub eps: f64,
    pub l: u64,
    pub n: u64,
    /// `f(L) = L^f_exponent`.
    pub f_exponent: f64,
}

/// Which hypotheses of the coupling bound held for these parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeFlags {
    pub eps_at_least_f_pow: bool,
    pub rho_above_f_pow: bool,
    pub n_multiple_of_l: bool,
    pub f_at_most_l: bool,
    pub recouple_time_positive: bool,
}

impl ManyToOneParams {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(invalid("eps", format!("{} must be positive", self.eps)));
        }
        if self.l == 0 || self.n == 0 {
            return Err(invalid("L", "L and n must be at least 1"));
        }
        if !(self.f_exponent > 0.0 && self.f_exponent <= 1.0) {
            return Err(invalid(
                "f_exponent",
                format!("{} not in (0, 1]", self.f_exponent),
            ));
        }
        Ok(())
    }

    pub fn f(&self) -> f64 {
        (self.l as f64).powf(self.f_exponent)
    }

    /// Duration of the soft-local-time recoupling.
    pub fn recouple_time(&self) -> u64 {
        (self.f() / 2.0).floor() as u64
    }

    fn refreshes(&self) -> f64 {
        (self.n as f64 / self.l as f64 - 1.0).ceil().max(0.0)
    }

    /// Gap level of the bad event: `-ceil(n / L - 1) f(L)`.
    pub fn threshold(&self) -> f64 {
        -self.refreshes() * self.f()
    }

    /// `(ceil(n / L) - 1)^2 exp(-f(L)^(1/40))`.
    pub fn bound_rhs(&self) -> f64 {
        let k = (self.n as f64 / self.l as f64).ceil() - 1.0;
        k * k * (-self.f().powf(1.0 / 40.0)).exp()
    }

    /// Interval lengths used by the density check.
    pub fn density_lengths(&self) -> (usize, usize) {
        let m = self.f().powf(0.25).floor() as usize;
        ((m / 2).max(1), m.max(1))
    }

    pub fn regime(&self) -> RegimeFlags {
        let fp = self.f().powf(-1.0 / 40.0);
        RegimeFlags {
            eps_at_least_f_pow: self.eps >= fp,
            rho_above_f_pow: self.model.rho > fp,
            n_multiple_of_l: self.n % self.l == 0,
            f_at_most_l: self.f() <= self.l as f64,
            recouple_time_positive: self.recouple_time() > 0,
        }
    }
}

/// Per-replica outcome. Failure fields count refresh epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub replica: u64,
    pub min_gap: i64,
    pub g1_fail: u32,
    pub g2_fail: u32,
    pub g3_fail: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub rho: f64,
    pub eps: f64,
    pub l: u64,
    pub n: u64,
    pub f_l: f64,
    pub recouple_time: u64,
    pub replicas: u64,
    /// Replicas with at least one failure of each kind.
    pub failures_g1: u64,
    pub failures_g2: u64,
    pub failures_g3: u64,
    pub threshold: f64,
    pub bound_rhs: f64,
    pub threshold_frequency: Frequency,
    pub min_gap_distribution: Distribution,
    pub regime: RegimeFlags,
    pub rows: Vec<CouplingRow>,
}

impl CouplingReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# apcrw coupling v1")?;
        writeln!(w, "replica,min_gap,g1_fail,g2_fail,g3_fail")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.replica, r.min_gap, r.g1_fail, r.g2_fail, r.g3_fail
            )?;
        }
        Ok(())
    }

    /// Failure epochs summed over replicas.
    pub fn failure_epochs(&self) -> u64 {
        self.rows
            .iter()
            .map(|r| (r.g1_fail + r.g2_fail + r.g3_fail) as u64)
            .sum()
    }
}

/// Run the coupling over `replicas` independent replicas.
pub fn many_to_one_experiment(
    p: &ManyToOneParams,
    replicas: u64,
    key: Key,
) -> Result<CouplingReport> {
    p.validate()?;
    if replicas == 0 {
        return Err(invalid("replicas", "at least one replica required"));
    }
    let rows = map_replicas(replicas, key, |r, k| {
        let mut row = couple_replica(p, k)?;
        row.replica = r;
        Ok(row)
    })?;
    let threshold = p.threshold();
    let hits = rows
        .iter()
        .filter(|r| (r.min_gap as f64) <= threshold)
        .count() as u64;
    let gaps: Vec<f64> = rows.iter().map(|r| r.min_gap as f64).collect();
    Ok(CouplingReport {
        rho: p.model.rho,
        eps: p.eps,
        l: p.l,
        n: p.n,
        f_l: p.f(),
        recouple_time: p.recouple_time(),
        replicas,
        failures_g1: rows.iter().filter(|r| r.g1_fail > 0).count() as u64,
        failures_g2: rows.iter().filter(|r| r.g2_fail > 0).count() as u64,
        failures_g3: rows.iter().filter(|r| r.g3_fail > 0).count() as u64,
        threshold,
        bound_rhs: p.bound_rhs(),
        threshold_frequency: Frequency::new(hits, replicas),
        min_gap_distribution: Distribution::of(&gaps),
        regime: p.regime(),
        rows,
    })
}

/// All intervals of `c1`, `c2` (same window) with lengths in `lens` satisfy
/// `c1(I) <= (rho + eps/4)|I|` and `c2(I) >= (rho + 3 eps/4)|I|`.
pub fn density_check(c1: &[u32], c2: &[u32], rho: f64, eps: f64, lens: (usize, usize)) -> bool {
    let prefix = |c: &[u32]| {
        let mut s = Vec::with_capacity(c.len() + 1);
        s.push(0u64);
        for &v in c {
            s.push(s.last().unwrap() + v as u64);
        }
        s
    };
    let (s1, s2) = (prefix(c1), prefix(c2));
    let (hi1, lo2) = (rho + eps / 4.0, rho + 3.0 * eps / 4.0);
    for len in lens.0..=lens.1.min(c1.len()) {
        let (cap, floor) = (hi1 * len as f64, lo2 * len as f64);
        for a in 0..=(c1.len() - len) {
            if (s1[a + len] - s1[a]) as f64 > cap || ((s2[a + len] - s2[a]) as f64) < floor {
                return false;
            }
        }
    }
    true
}

#[inline]
fn step_of(u: f64, probs: (f64, f64, f64)) -> i64 {
    if u < probs.0 {
        -1
    } else if u < probs.0 + probs.1 {
        0
    } else {
        1
    }
}

/// Kernels for `0..=t` steps.
fn kernel_ladder(model: &ApcrwParams, t: u64) -> Result<Vec<KernelTable>> {
    let one = exact_kernel(1, model.alpha, model.q, true)?;
    let mut v = vec![exact_kernel(0, model.alpha, model.q, true)?];
    for r in 1..=t as usize {
        let next = v[r - 1].convolve(&one);
        v.push(next);
    }
    Ok(v)
}

/// Lazy-walk path from `from` to `to` in `ladder.len() - 1` steps, drawn from
/// the bridge law one step at a time.
fn bridge(
    from: i64,
    to: i64,
    ladder: &[KernelTable],
    probs: (f64, f64, f64),
    rng: &mut StreamRng,
) -> Vec<i64> {
    let t = ladder.len() - 1;
    let mut path = Vec::with_capacity(t + 1);
    let mut y = from;
    path.push(y);
    let w = [probs.0, probs.1, probs.2];
    for r in (1..=t).rev() {
        let need = to - y;
        let k = &ladder[r - 1];
        let m: Vec<f64> = (0..3)
            .map(|j| w[j] * k.mass_at(need - (j as i64 - 1)))
            .collect();
        let total: f64 = m.iter().sum();
        let u = rng.unit() * total;
        let j = if u < m[0] {
            -1
        } else if u < m[0] + m[1] {
            0
        } else {
            1
        };
        y += j;
        path.push(y);
    }
    path
}

struct Replica<'a> {
    p: &'a ManyToOneParams,
    key: Key,
    laws: JumpLaws,
    w1: Window,
    cloud: LazyCloud,
    field1: UniformField,
    path1: Vec<i64>,
    path2: Vec<i64>,
    fails: [u32; 3],
}

fn couple_replica(p: &ManyToOneParams, key: Key) -> Result<CouplingRow> {
    let n = p.n;
    let l = p.l.min(n);
    let laws = JumpLaws::new(&[p.model]);
    let w1 = Window::around(0, 6 * n as i64 + EXACT_BUFFER);
    let w0 = Window::around(0, 2 * l as i64 + EXACT_BUFFER);
    let mut seeds = Vec::new();
    for (layer, (rate, win)) in [(p.model.rho, w1), (p.eps, w0)].into_iter().enumerate() {
        let c = poisson_counts(rate, win, key.tag("init").derive(layer as u64));
        for (i, &m) in c.iter().enumerate() {
            for _ in 0..m {
                seeds.push(Seed {
                    pos: win.lo + i as i64,
                    kind: 0,
                    layer: layer as u8,
                });
            }
        }
    }
    let mut cloud = LazyCloud::from_seeds(laws.clone(), &seeds, w1, 0, n, key.tag("eta1-moves"));
    let field1 = UniformField::new(key.tag("arrows"));
    let walkers = [
        WalkerSpec {
            start: LatticePoint::origin(),
            mask: 0b01,
        },
        WalkerSpec {
            start: LatticePoint::origin(),
            mask: 0b11,
        },
    ];
    let mut tr = run_walks(&mut cloud, &walkers, l, &p.walk, &field1)?;
    cloud.retain_layers(0b01);
    let path2 = tr.pop().unwrap().positions;
    let path1 = tr.pop().unwrap().positions;
    let mut rep = Replica {
        p,
        key,
        laws,
        w1,
        cloud,
        field1,
        path1,
        path2,
        fails: [0; 3],
    };
    let mut s0 = l;
    let mut epoch = 1;
    while s0 < n {
        let seg = l.min(n - s0);
        rep.refresh(epoch, s0, seg)?;
        s0 += seg;
        epoch += 1;
    }
    let min_gap = rep
        .path1
        .iter()
        .zip(&rep.path2)
        .map(|(a, b)| b - a)
        .min()
        .unwrap_or(0);
    Ok(CouplingRow {
        replica: 0,
        min_gap,
        g1_fail: rep.fails[0],
        g2_fail: rep.fails[1],
        g3_fail: rep.fails[2],
    })
}

impl Replica<'_> {
    fn x1(&self) -> i64 {
        *self.path1.last().unwrap()
    }

    fn x2(&self) -> i64 {
        *self.path2.last().unwrap()
    }

    fn refresh(&mut self, epoch: u64, s0: u64, seg: u64) -> Result<()> {
        let p = self.p;
        let n = p.n as i64;
        let h = 7 * p.l as i64;
        let check = Window::around(0, 5 * n);
        let span = Window::around(0, 5 * n + 8 * h);
        let rho2 = p.model.rho + p.eps;
        let eta2 = poisson_counts(rho2, span, self.key.tag("eta2").derive(epoch));
        let eta1 = self.cloud.state_at(s0, check, 0b01)?;
        let off = (check.lo - span.lo) as usize;
        let ok = density_check(
            &eta1.counts[0],
            &eta2[off..off + check.len()],
            p.model.rho,
            p.eps,
            p.density_lengths(),
        );
        let sites2 = |win: Window| -> Vec<i64> {
            let mut v = Vec::new();
            for x in win.sites() {
                for _ in 0..eta2[(x - span.lo) as usize] {
                    v.push(x);
                }
            }
            v
        };
        if !ok {
            self.fails[0] += 1;
            let near = sites2(Window::around(self.x2(), 2 * seg as i64 + EXACT_BUFFER));
            return self.independent(epoch, s0, seg, None, near);
        }
        let t = p.recouple_time().min(seg);
        let (x1, x2) = (self.x1(), self.x2());
        let c2 = x2 - 2 * t as i64;
        let eta2_near = sites2(Window::around(c2, h));
        self.recouple(epoch, s0, seg, t, x1, c2, eta2_near)
    }

    /// Continue both walkers with independent randomness. `eta1` replaces the
    /// first environment's particles when given.
    fn independent(
        &mut self,
        epoch: u64,
        s: u64,
        steps: u64,
        eta1: Option<Vec<i64>>,
        eta2: Vec<i64>,
    ) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        if let Some(pos) = eta1 {
            self.rebuild_eta1(epoch, s, &pos);
        }
        let start1 = LatticePoint::new(self.x1(), s as i64);
        let t1 = run_walk(
            &mut self.cloud,
            start1,
            0b01,
            steps,
            &self.p.walk,
            &self.field1,
        )?;
        let seeds: Vec<Seed> = eta2
            .iter()
            .map(|&x| Seed {
                pos: x,
                kind: 0,
                layer: 0,
            })
            .collect();
        let win = Window::around(self.x2(), 2 * steps as i64 + EXACT_BUFFER);
        let mut c2 = LazyCloud::from_seeds(
            self.laws.clone(),
            &seeds,
            win,
            s,
            s + steps,
            self.key.tag("eta2-moves").derive(epoch),
        );
        let field2 = UniformField::new(self.key.tag("free-arrows").derive(epoch));
        let t2 = run_walk(
            &mut c2,
            LatticePoint::new(self.x2(), s as i64),
            0b01,
            steps,
            &self.p.walk,
            &field2,
        )?;
        self.path1.extend_from_slice(&t1.positions[1..]);
        self.path2.extend_from_slice(&t2.positions[1..]);
        Ok(())
    }

    fn rebuild_eta1(&mut self, epoch: u64, s: u64, pos: &[i64]) {
        let seeds: Vec<Seed> = pos
            .iter()
            .map(|&x| Seed {
                pos: x,
                kind: 0,
                layer: 0,
            })
            .collect();
        self.cloud = LazyCloud::from_seeds(
            self.laws.clone(),
            &seeds,
            self.w1,
            s,
            self.p.n,
            self.key.tag("eta1-moves").derive(epoch),
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn recouple(
        &mut self,
        epoch: u64,
        s0: u64,
        seg: u64,
        t: u64,
        x1: i64,
        c2: i64,
        eta2: Vec<i64>,
    ) -> Result<()> {
        let p = self.p;
        let h = 7 * p.l as i64;
        let probs = p.model.step_probs();
        let k = self.key.tag("recouple").derive(epoch);
        self.cloud.materialize(s0)?;
        let mut eta1: Vec<i64> = self.cloud.particles().map(|s| s.pos).collect();
        eta1.sort_unstable();
        let rel = Window::around(0, h);
        let to_state = |pos: &[i64], centre: i64| {
            let mut st = EnvState::empty(rel, 1, s0);
            for &x in pos {
                if let Some(i) = rel.index(x - centre) {
                    st.counts[0][i] += 1;
                }
            }
            st
        };
        let ladder = kernel_ladder(&p.model, t)?;
        let strip = PoissonStrip::new(Window::around(0, h + t as i64), k.tag("strip"));
        let (mut s1, mut s2) = (strip.clone(), strip);
        let slt1 = soft_local_time_on(&to_state(&eta1, x1), &ladder[t as usize], &mut s1)?;
        let slt2 = soft_local_time_on(&to_state(&eta2, c2), &ladder[t as usize], &mut s2)?;
        let mut brng = k.tag("bridges").stream();
        let mut free = k.tag("free").stream();
        // Paths over [s0, s0 + t]. Particles are in site order, matching the
        // order in which the soft local times were built.
        let mut paths1 = Vec::with_capacity(eta1.len());
        let mut j = 0;
        for &x in &eta1 {
            if rel.contains(x - x1) {
                let z = slt1.endpoints[j] + x1;
                j += 1;
                paths1.push(bridge(x, z, &ladder, probs, &mut brng));
            } else {
                let mut path = vec![x];
                for _ in 0..t {
                    let y = *path.last().unwrap() + step_of(free.unit(), probs);
                    path.push(y);
                }
                paths1.push(path);
            }
        }
        let paths2: Vec<Vec<i64>> = eta2
            .iter()
            .zip(&slt2.endpoints)
            .map(|(&x, &z)| bridge(x, z + c2, &ladder, probs, &mut brng))
            .collect();
        let field2 = UniformField::new(self.key.tag("free-arrows").derive(epoch));
        for s in 0..t as usize {
            let now = (s0 + s as u64) as i64;
            let (y1, y2) = (self.x1(), self.x2());
            let o1 = paths1.iter().any(|q| q[s] == y1);
            let o2 = paths2.iter().any(|q| q[s] == y2);
            self.path1
                .push(y1 + arrow(o1, self.field1.at(y1, now), &p.walk));
            self.path2.push(y2 + arrow(o2, field2.at(y2, now), &p.walk));
        }
        let end1: Vec<i64> = paths1.iter().map(|q| q[t as usize]).collect();
        let end2: Vec<i64> = paths2.iter().map(|q| q[t as usize]).collect();
        let s_mid = s0 + t;
        let inner = Window::around(0, 3 * p.l as i64);
        let count = |pos: &[i64], centre: i64| {
            let mut c = vec![0u32; inner.len()];
            for &x in pos {
                if let Some(i) = inner.index(x - centre) {
                    c[i] += 1;
                }
            }
            c
        };
        let (a1, a2) = (count(&end1, x1), count(&end2, c2));
        if a1.iter().zip(&a2).any(|(u, v)| u > v) {
            self.fails[1] += 1;
            return self.independent(epoch, s_mid, seg - t, Some(end1), end2);
        }
        self.paired(epoch, s_mid, seg - t, x1, c2, &end1, &end2)
    }

    /// Move matched particles together and drive both walkers with shared
    /// time-indexed uniforms, in the frame where the environments are compared.
    #[allow(clippy::too_many_arguments)]
    fn paired(
        &mut self,
        epoch: u64,
        s: u64,
        steps: u64,
        x1: i64,
        c2: i64,
        end1: &[i64],
        end2: &[i64],
    ) -> Result<()> {
        const A: u8 = 1;
        const B: u8 = 2;
        const C: u8 = 4;
        let p = self.p;
        let probs = p.model.step_probs();
        let inner = Window::around(0, 3 * p.l as i64);
        let mut by_site: std::collections::BTreeMap<i64, u32> = std::collections::BTreeMap::new();
        let mut units: Vec<(i64, u8)> = Vec::with_capacity(end1.len() + end2.len());
        for &x in end1 {
            let r = x - x1;
            if inner.contains(r) {
                *by_site.entry(r).or_default() += 1;
            } else {
                units.push((r, B));
            }
        }
        for &x in end2 {
            let r = x - c2;
            match by_site.get_mut(&r) {
                Some(c) if *c > 0 => {
                    *c -= 1;
                    units.push((r, A));
                }
                _ => units.push((r, C)),
            }
        }
        let k = self.key.tag("paired").derive(epoch);
        let shared = k.tag("time-uniforms");
        let field2 = UniformField::new(self.key.tag("free-arrows").derive(epoch));
        let near = Window::around(0, p.l as i64);
        let mut coupled = true;
        let (mut c1, mut c2c) = (vec![0u32; near.len()], vec![0u32; near.len()]);
        for step in 0..=steps {
            let now = s + step;
            c1.iter_mut().for_each(|v| *v = 0);
            c2c.iter_mut().for_each(|v| *v = 0);
            for &(r, m) in &units {
                if let Some(i) = near.index(r) {
                    if m & (A | B) != 0 {
                        c1[i] += 1;
                    }
                    if m & (A | C) != 0 {
                        c2c[i] += 1;
                    }
                }
            }
            if coupled && c1.iter().zip(&c2c).any(|(a, b)| a > b) {
                coupled = false;
                self.fails[2] += 1;
            }
            if step == steps {
                break;
            }
            let (y1, y2) = (self.x1() - x1, self.x2() - c2);
            let o1 = units.iter().any(|&(r, m)| r == y1 && m & (A | B) != 0);
            let o2 = units.iter().any(|&(r, m)| r == y2 && m & (A | C) != 0);
            let (u1, u2) = if coupled {
                let u = shared.unit2(0, now as i64);
                (u, u)
            } else {
                (
                    self.field1.at(y1 + x1, now as i64),
                    field2.at(y2 + c2, now as i64),
                )
            };
            self.path1.push(y1 + x1 + arrow(o1, u1, &p.walk));
            self.path2.push(y2 + c2 + arrow(o2, u2, &p.walk));
            for (id, unit) in units.iter_mut().enumerate() {
                unit.0 += step_of(k.derive(id as u64).unit2(0, now as i64), probs);
            }
        }
        let end = s + steps;
        if end < p.n {
            let pos: Vec<i64> = units
                .iter()
                .filter(|u| u.1 & (A | B) != 0)
                .map(|u| u.0 + x1)
                .collect();
            self.rebuild_eta1(epoch, end, &pos);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l: u64, n: u64) -> ManyToOneParams {
        ManyToOneParams {
            model: ApcrwParams {
                rho: 1.0,
                alpha: 0.5,
                q: 0.6,
            },
            walk: WalkParams {
                p_occ: 0.8,
                p_vac: 0.3,
            },
            eps: 0.5,
            l,
            n,
            f_exponent: 0.1,
        }
    }

    #[test]
    fn single_block_never_inverts() {
        let r = many_to_one_experiment(&params(64, 64), 50, Key::new(3)).unwrap();
        assert!(r.rows.iter().all(|row| row.min_gap >= 0));
        assert_eq!(r.failures_g1, 0);
        assert_eq!(r.threshold, 0.0);
    }

    #[test]
    fn report_constants() {
        let p = params(256, 512);
        assert!((p.f() - 256f64.powf(0.1)).abs() < 1e-12);
        assert_eq!(p.recouple_time(), 0);
        assert!((p.threshold() + p.f()).abs() < 1e-12);
        assert!((p.bound_rhs() - (-p.f().powf(1.0 / 40.0)).exp()).abs() < 1e-12);
        assert_eq!(p.density_lengths(), (1, 1));
    }

    #[test]
    fn density_check_on_flat_profiles() {
        let a = vec![1u32; 20];
        let b = vec![2u32; 20];
        assert!(density_check(&a, &b, 1.0, 0.5, (2, 4)));
        assert!(!density_check(&b, &a, 1.0, 0.5, (2, 4)));
    }

    #[test]
    fn bridge_hits_endpoint() {
        let m = ApcrwParams {
            rho: 1.0,
            alpha: 0.5,
            q: 0.6,
        };
        let ladder = kernel_ladder(&m, 12).unwrap();
        let mut rng = Key::new(1).stream();
        for to in -12..=12 {
            let path = bridge(0, to, &ladder, m.step_probs(), &mut rng);
            assert_eq!(path.len(), 13);
            assert_eq!(*path.last().unwrap(), to);
            assert!(path.windows(2).all(|w| (w[1] - w[0]).abs() <= 1));
        }
    }

    #[test]
    fn recoupled_segment_keeps_order() {
        // Empty first environment: every check after the refresh passes, so
        // the shared uniforms keep the walkers in order up to the shift.
        let p = ManyToOneParams {
            f_exponent: 1.0,
            ..params(32, 64)
        };
        let key = Key::new(8);
        let laws = JumpLaws::new(&[p.model]);
        let w1 = Window::around(0, 6 * 64 + 2);
        let cloud = LazyCloud::from_seeds(laws.clone(), &[], w1, 32, 64, key);
        let mut rep = Replica {
            p: &p,
            key,
            laws,
            w1,
            cloud,
            field1: UniformField::new(key.tag("arrows")),
            path1: vec![0; 33],
            path2: vec![0; 33],
            fails: [0; 3],
        };
        let t = p.recouple_time();
        assert_eq!(t, 16);
        let eta2: Vec<i64> = (-200..200).step_by(3).collect();
        rep.recouple(1, 32, 32, t, 0, -(2 * t as i64), eta2)
            .unwrap();
        assert_eq!(rep.fails, [0, 0, 0]);
        assert_eq!(rep.path1.len(), 65);
        assert_eq!(rep.path2.len(), 65);
        // With shared uniforms and an empty first environment, a right step
        // of the first walker forces a right step of the second.
        for s in 48..64 {
            if rep.path1[s + 1] - rep.path1[s] == 1 {
                assert_eq!(rep.path2[s + 1] - rep.path2[s], 1, "step {s}");
            }
        }
    }
}
