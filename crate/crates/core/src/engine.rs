//! Event-driven particle cloud for walker experiments.
//!
//! A walker only ever looks at the sites it stands on, so a particle needs to
//! be known exactly only when it could be standing there. Each particle keeps
//! the last time its position was resolved and is woken again no earlier than
//! the first time it could meet a probe (distance halved, since both move at
//! most one site per step). On wake-up it jumps over the elapsed interval in
//! one draw from the exact multi-step kernel. The law of every particle path
//! sampled at its wake-up times is exactly that of the lazy walk.

use crate::env::{poisson_counts, ApcrwParams, EnvState, Window};
use crate::error::{invalid, Error, Result};
use crate::kernels::JumpTables;
use crate::rng::Key;
use crate::walker::{Environment, Probe};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Largest number of steps a particle is left unresolved.
pub const WAKE_CAP: u64 = 512;

/// Shared jump tables for the particle kinds of a model.
#[derive(Clone, Debug)]
pub struct JumpLaws {
    tables: Vec<Arc<JumpTables>>,
}

fn table_cache() -> &'static Mutex<HashMap<(u64, u64), Arc<JumpTables>>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64), Arc<JumpTables>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl JumpLaws {
    pub fn new(kinds: &[ApcrwParams]) -> Self {
        let tables = kinds
            .iter()
            .map(|p| {
                let k = (p.alpha.to_bits(), p.q.to_bits());
                let mut cache = table_cache().lock().unwrap();
                cache
                    .entry(k)
                    .or_insert_with(|| Arc::new(JumpTables::new(p.alpha, p.q, WAKE_CAP as usize)))
                    .clone()
            })
            .collect();
        JumpLaws { tables }
    }

    pub fn kinds(&self) -> usize {
        self.tables.len()
    }
}

/// Initial particle of a [`LazyCloud`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seed {
    pub pos: i64,
    pub kind: u16,
    pub layer: u8,
}

/// Event-driven cloud. Layers let several nested or disjoint environments
/// share particles; a probe counts particles whose layer bit is in its mask.
#[derive(Clone, Debug)]
pub struct LazyCloud {
    laws: JumpLaws,
    key: Key,
    pos: Vec<i64>,
    last: Vec<u64>,
    kind: Vec<u16>,
    layer: Vec<u8>,
    alive: Vec<bool>,
    ring: Vec<Vec<u32>>,
    next: u64,
    horizon: u64,
    window: Window,
}

impl LazyCloud {
    /// Particles placed explicitly at time `t0`. Probes are answered up to
    /// `horizon`; particles that cannot reach a probe before then are never
    /// resolved unless materialized.
    pub fn from_seeds(
        laws: JumpLaws,
        seeds: &[Seed],
        window: Window,
        t0: u64,
        horizon: u64,
        key: Key,
    ) -> Self {
        let n = seeds.len();
        let mut c = LazyCloud {
            laws,
            key: key.tag("jumps"),
            pos: seeds.iter().map(|s| s.pos).collect(),
            last: vec![t0; n],
            kind: seeds.iter().map(|s| s.kind).collect(),
            layer: seeds.iter().map(|s| s.layer).collect(),
            alive: vec![true; n],
            ring: vec![Vec::new(); WAKE_CAP as usize + 1],
            next: t0,
            horizon,
            window,
        };
        let slot = (t0 % c.ring.len() as u64) as usize;
        c.ring[slot] = (0..n as u32).collect();
        c
    }

    /// Product Poisson cloud. `rates[layer][kind]` is the density of each
    /// layer and particle kind.
    pub fn poisson(
        laws: JumpLaws,
        rates: &[Vec<f64>],
        window: Window,
        t0: u64,
        horizon: u64,
        key: Key,
    ) -> Self {
        let mut seeds = Vec::new();
        for (layer, row) in rates.iter().enumerate() {
            for (kind, &r) in row.iter().enumerate() {
                let counts = poisson_counts(
                    r,
                    window,
                    key.tag("init").derive(layer as u64).derive(kind as u64),
                );
                for (i, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        seeds.push(Seed {
                            pos: window.lo + i as i64,
                            kind: kind as u16,
                            layer: layer as u8,
                        });
                    }
                }
            }
        }
        Self::from_seeds(laws, &seeds, window, t0, horizon, key)
    }

    /// Single-layer product Poisson cloud for a model.
    pub fn stationary<M: AsRef<[ApcrwParams]> + ?Sized>(
        model: &M,
        window: Window,
        t0: u64,
        horizon: u64,
        key: Key,
    ) -> Self {
        let comps = model.as_ref();
        let rates = vec![comps.iter().map(|c| c.rho).collect::<Vec<_>>()];
        Self::poisson(JumpLaws::new(comps), &rates, window, t0, horizon, key)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Next time that can still be queried.
    pub fn next_time(&self) -> u64 {
        self.next
    }

    #[inline]
    fn advance(&mut self, i: usize, t: u64) {
        let id = i as i64;
        while self.last[i] < t {
            let k = (t - self.last[i]).min(WAKE_CAP);
            let to = self.last[i] + k;
            let u = self.key.unit2(id, to as i64);
            self.pos[i] += self.laws.tables[self.kind[i] as usize].displacement(k as usize, u);
            self.last[i] = to;
        }
    }

    #[inline]
    fn schedule(&mut self, i: usize, now: u64, dist: i64) {
        let wait = ((dist.max(0) as u64 + 1) / 2).clamp(1, WAKE_CAP);
        let due = now + wait;
        if due <= self.horizon {
            let r = self.ring.len() as u64;
            self.ring[(due % r) as usize].push(i as u32);
        }
    }

    fn check_time(&self, t: u64) -> Result<()> {
        if t < self.next {
            return Err(invalid(
                "time",
                format!("time {t} already resolved (next is {})", self.next),
            ));
        }
        Ok(())
    }

    /// Advance every live particle to time `t` and reset the wake-up calendar
    /// so that a probe query at `t` is still allowed.
    pub fn materialize(&mut self, t: u64) -> Result<()> {
        self.check_time(t)?;
        for b in &mut self.ring {
            b.clear();
        }
        let r = self.ring.len() as u64;
        for i in 0..self.pos.len() {
            if self.alive[i] {
                self.advance(i, t);
                self.ring[(t % r) as usize].push(i as u32);
            }
        }
        self.next = t;
        Ok(())
    }

    /// Positions of live particles after [`LazyCloud::materialize`].
    pub fn particles(&self) -> impl Iterator<Item = Seed> + '_ {
        (0..self.pos.len())
            .filter(|&i| self.alive[i])
            .map(|i| Seed {
                pos: self.pos[i],
                kind: self.kind[i],
                layer: self.layer[i],
            })
    }

    /// Counts at time `t` of the layers selected by `mask` on `window`.
    pub fn state_at(&mut self, t: u64, window: Window, mask: u32) -> Result<EnvState> {
        self.materialize(t)?;
        let kinds = self.laws.kinds().max(1);
        let mut st = EnvState::empty(window, kinds, t);
        for i in 0..self.pos.len() {
            if !self.alive[i] || mask & (1 << self.layer[i]) == 0 {
                continue;
            }
            match window.index(self.pos[i]) {
                Some(j) => st.counts[self.kind[i] as usize][j] += 1,
                None => st.overflow += 1,
            }
        }
        Ok(st)
    }

    /// Drop every particle whose layer is not in `mask`.
    pub fn retain_layers(&mut self, mask: u32) {
        for i in 0..self.pos.len() {
            if mask & (1 << self.layer[i]) == 0 {
                self.alive[i] = false;
            }
        }
    }
}

impl Environment for LazyCloud {
    fn counts(&mut self, t: u64, probes: &[Probe], out: &mut Vec<u32>) -> Result<()> {
        self.check_time(t)?;
        if t > self.horizon {
            return Err(Error::TimeOutOfRange {
                time: t,
                horizon: self.horizon,
            });
        }
        for p in probes {
            if !self.window.contains(p.site) {
                let w = self.window;
                return Err(Error::WindowTooSmall {
                    site: p.site,
                    time: t,
                    lo: w.lo,
                    hi: w.hi,
                });
            }
        }
        out.clear();
        out.resize(probes.len(), 0);
        let r = self.ring.len() as u64;
        for s in self.next..=t {
            let slot = (s % r) as usize;
            let bucket = std::mem::take(&mut self.ring[slot]);
            let lag = (t - s) as i64;
            for &iu in &bucket {
                let i = iu as usize;
                if !self.alive[i] {
                    continue;
                }
                self.advance(i, s);
                let y = self.pos[i];
                let mut d = i64::MAX;
                for (k, p) in probes.iter().enumerate() {
                    let dd = (y - p.site).abs();
                    d = d.min(dd);
                    if lag == 0 && dd == 0 && p.mask & (1 << self.layer[i]) != 0 {
                        out[k] += 1;
                    }
                }
                if probes.is_empty() {
                    d = 2 * WAKE_CAP as i64;
                }
                self.schedule(i, s, d - lag);
            }
            let mut bucket = bucket;
            bucket.clear();
            if self.ring[slot].is_empty() {
                self.ring[slot] = bucket;
            }
        }
        self.next = t + 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_initial, ParticleCloud};
    use crate::rng::UniformField;
    use crate::walker::{run_walk, LatticePoint, TabulatedEnv, WalkParams};

    fn model() -> ApcrwParams {
        ApcrwParams {
            rho: 1.0,
            alpha: 0.5,
            q: 0.6,
        }
    }

    #[test]
    fn materialized_particles_are_conserved() {
        let w = Window::around(0, 100);
        let mut c = LazyCloud::stationary(&model(), w, 0, 1000, Key::new(1));
        let n = c.len();
        let st = c.state_at(300, Window::around(0, 1000), 1).unwrap();
        assert_eq!(st.total() as usize, n);
    }

    #[test]
    fn probe_counts_match_materialized_state() {
        let w = Window::around(0, 60);
        let mut a = LazyCloud::stationary(&model(), w, 0, 100, Key::new(2));
        let mut b = a.clone();
        let probes: Vec<Probe> = (-5..=5).map(|s| Probe { site: s, mask: 1 }).collect();
        let mut out = Vec::new();
        for t in 0..40 {
            a.counts(t, &probes, &mut out).unwrap();
        }
        let st = b.state_at(39, w, 1).unwrap();
        // same key, same jump decomposition is not guaranteed, so compare law-free facts only
        assert_eq!(out.len(), probes.len());
        assert!(st.total() > 0);
    }

    #[test]
    fn lazy_walk_matches_eager_walk_in_law() {
        // mean displacement of the walker over many replicas, both engines
        let wp = WalkParams::new(0.8, 0.3).unwrap();
        let n = 30u64;
        let reps = 4000;
        let (mut sa, mut sb) = (0i64, 0i64);
        for r in 0..reps {
            let k = Key::new(10).derive(r);
            let f = UniformField::new(k.tag("u"));
            let w = Window::exact_for(0, n);
            let mut lazy = LazyCloud::stationary(&model(), w, 0, n, k.tag("lazy"));
            sa += run_walk(&mut lazy, LatticePoint::origin(), 1, n, &wp, &f)
                .unwrap()
                .end();
            let st = sample_initial(&model(), w, k.tag("eager")).unwrap();
            let mut cloud = ParticleCloud::from_state(&st);
            cloud.evolve_to(&model(), n, k.tag("eager"));
            let mut tab = TabulatedEnv::from_clouds(&[&cloud], false).unwrap();
            sb += run_walk(&mut tab, LatticePoint::origin(), 1, n, &wp, &f)
                .unwrap()
                .end();
        }
        let (ma, mb) = (sa as f64 / reps as f64, sb as f64 / reps as f64);
        // per-replica sd of X_30 is below 6
        assert!(
            (ma - mb).abs() < 4.0 * 6.0 * (2.0 / reps as f64).sqrt(),
            "{ma} vs {mb}"
        );
    }

    #[test]
    fn time_must_increase() {
        let w = Window::around(0, 10);
        let mut c = LazyCloud::stationary(&model(), w, 0, 10, Key::new(3));
        let mut out = Vec::new();
        c.counts(2, &[Probe { site: 0, mask: 1 }], &mut out)
            .unwrap();
        assert!(c
            .counts(2, &[Probe { site: 0, mask: 1 }], &mut out)
            .is_err());
        assert!(c
            .counts(11, &[Probe { site: 0, mask: 1 }], &mut out)
            .is_err());
    }
}
