//! Soft local times: coupling the endpoints of independent walkers with a
//! Poisson point process on sites times heights.

use crate::env::{empirical_density_report, ApcrwParams, EnvState, Window};
use crate::error::{invalid, Error, Result};
use crate::kernels::{exact_kernel, KernelTable};
use crate::par::map_replicas;
use crate::rng::{Key, StreamRng};
use crate::stats::Frequency;
use serde::{Deserialize, Serialize};

/// Kernel mass dropped on each side when restricting the search to the bulk.
pub const KERNEL_TAIL: f64 = 1e-15;

/// Columns of a Poisson point process of unit intensity on `window x (0, inf)`,
/// generated lazily from the bottom.
#[derive(Clone, Debug)]
pub struct PoissonStrip {
    window: Window,
    points: Vec<Vec<f64>>,
    rngs: Vec<StreamRng>,
    used: Vec<u32>,
}

impl PoissonStrip {
    pub fn new(window: Window, key: Key) -> Self {
        let k = key.tag("strip");
        PoissonStrip {
            window,
            points: vec![Vec::new(); window.len()],
            rngs: window
                .sites()
                .map(|z| k.derive(z as u64).stream())
                .collect(),
            used: vec![0; window.len()],
        }
    }

    fn point(&mut self, col: usize, j: usize) -> f64 {
        while self.points[col].len() <= j {
            let last = self.points[col].last().copied().unwrap_or(0.0);
            let e = self.rngs[col].exp1();
            self.points[col].push(last + e);
        }
        self.points[col][j]
    }

    /// Lowest point of column `col` not yet assigned.
    fn next_free(&mut self, col: usize) -> f64 {
        let j = self.used[col] as usize;
        self.point(col, j)
    }

    /// Number of points of the column at site `z` with height in `(0, level]`.
    pub fn count_below(&mut self, z: i64, level: f64) -> u32 {
        let col = self.window.index(z).expect("site inside strip");
        let mut j = 0;
        while self.point(col, j) <= level {
            j += 1;
        }
        j as u32
    }

    pub fn window(&self) -> Window {
        self.window
    }
}

/// Result of the greedy assignment of Poisson points to particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLocalTime {
    pub window: Window,
    pub g: Vec<f64>,
    pub xi: Vec<f64>,
    pub origins: Vec<i64>,
    pub endpoints: Vec<i64>,
    pub eta_t: EnvState,
}

impl SoftLocalTime {
    pub fn g_at(&self, z: i64) -> f64 {
        self.window.index(z).map(|i| self.g[i]).unwrap_or(0.0)
    }
}

fn origins_of(eta0: &EnvState) -> Vec<i64> {
    let merged = eta0.merged();
    let mut xs = Vec::with_capacity(eta0.total() as usize);
    for (i, &c) in merged.iter().enumerate() {
        for _ in 0..c {
            xs.push(eta0.window.lo + i as i64);
        }
    }
    xs
}

/// Run the xi-iteration on an existing strip. Particle `i` receives the
/// unused point minimising `(height - G(z)) / g_i(z)`.
pub fn soft_local_time_on(
    eta0: &EnvState,
    kernel: &KernelTable,
    strip: &mut PoissonStrip,
) -> Result<SoftLocalTime> {
    let w = strip.window();
    let origins = origins_of(eta0);
    let (a, b) = kernel.central_range(KERNEL_TAIL);
    let mut g = vec![0.0; w.len()];
    let mut xi = Vec::with_capacity(origins.len());
    let mut endpoints = Vec::with_capacity(origins.len());
    for &x in &origins {
        let (zlo, zhi) = (x + a, x + b);
        if !w.contains(zlo) {
            return Err(Error::IntensityOverflow { site: zlo });
        }
        if !w.contains(zhi) {
            return Err(Error::IntensityOverflow { site: zhi });
        }
        let mut best = f64::INFINITY;
        let mut arg = zlo;
        for z in zlo..=zhi {
            let m = kernel.mass_at(z - x);
            if m <= 0.0 {
                continue;
            }
            let col = (z - w.lo) as usize;
            let gap = (strip.next_free(col) - g[col]).max(0.0);
            let r = gap / m;
            if r < best {
                best = r;
                arg = z;
            }
        }
        for z in zlo..=zhi {
            let col = (z - w.lo) as usize;
            g[col] += best * kernel.mass_at(z - x);
        }
        strip.used[(arg - w.lo) as usize] += 1;
        xi.push(best);
        endpoints.push(arg);
    }
    let mut eta_t = EnvState::empty(w, 1, eta0.time + kernel.t);
    for (i, &u) in strip.used.iter().enumerate() {
        eta_t.counts[0][i] = u;
    }
    Ok(SoftLocalTime {
        window: w,
        g,
        xi,
        origins,
        endpoints,
        eta_t,
    })
}

/// Evolve `eta0` for `t` steps through soft local times on the strip
/// `window` (default: the state window widened by `t`).
pub fn soft_local_time_sample(
    eta0: &EnvState,
    t: u64,
    params: &ApcrwParams,
    window: Option<Window>,
    key: Key,
) -> Result<SoftLocalTime> {
    let w = window.unwrap_or(Window {
        lo: eta0.window.lo - t as i64,
        hi: eta0.window.hi + t as i64,
    });
    let kernel = exact_kernel(t, params.alpha, params.q, true)?;
    let mut strip = PoissonStrip::new(w, key);
    soft_local_time_on(eta0, &kernel, &mut strip)
}

/// Deterministic configuration with `floor(rho (x + 1)) - floor(rho x)`
/// particles at site `x`, so every interval holds its share up to one particle.
pub fn exact_density_state(rho: f64, window: Window) -> EnvState {
    let mut st = EnvState::empty(window, 1, 0);
    for (i, x) in window.sites().enumerate() {
        let c = (rho * (x + 1) as f64).floor() - (rho * x as f64).floor();
        st.counts[0][i] = c as u32;
    }
    st
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Outcome of the sandwich coupling on `[t, H - t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub rho: f64,
    pub eps: f64,
    pub t: u64,
    pub h: i64,
    pub region: (i64, i64),
    /// Lower field dominated by the evolved configuration on the region.
    pub success: bool,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub lower_violations: u64,
    pub upper_violations: u64,
    pub g: GSummary,
    pub ell: usize,
    pub density_lower_ok: bool,
    pub density_upper_ok: bool,
    pub t_below_half_h: bool,
}

/// Couple the `t`-step evolution of `eta0` (supported on `[0, H]`) with
/// product Poisson fields of densities `rho -+ eps` through one Poisson point
/// process: the fields count points below the levels `rho -+ eps`, the evolved
/// configuration counts points below the soft local time.
pub fn slt_domination_coupling(
    eta0: &EnvState,
    params: &ApcrwParams,
    eps: f64,
    t: u64,
    h: i64,
    key: Key,
) -> Result<DominationReport> {
    let kernel = exact_kernel(t, params.alpha, params.q, true)?;
    slt_domination_with_kernel(eta0, &kernel, params.rho, eps, h, key)
}

/// Same as [`slt_domination_coupling`] with a precomputed `t`-step kernel.
pub fn slt_domination_with_kernel(
    eta0: &EnvState,
    kernel: &KernelTable,
    rho: f64,
    eps: f64,
    h: i64,
    key: Key,
) -> Result<DominationReport> {
    let t = kernel.t;
    if eta0.window != (Window { lo: 0, hi: h }) {
        return Err(invalid(
            "eta0",
            format!("initial state must live on [0, {h}]"),
        ));
    }
    if !(eps > 0.0 && eps < rho) {
        return Err(invalid("eps", format!("{eps} must lie in (0, rho)")));
    }
    let region = Window {
        lo: t as i64,
        hi: h - t as i64,
    };
    if region.lo > region.hi {
        return Err(invalid(
            "t",
            format!("region [t, H - t] is empty for t = {t}, H = {h}"),
        ));
    }
    let ell = ((t as f64).sqrt().floor() as usize).clamp(1, eta0.window.len());
    let dens = empirical_density_report(eta0, ell, rho, eps)?;
    let mut strip = PoissonStrip::new(
        Window {
            lo: -(t as i64),
            hi: h + t as i64,
        },
        key,
    );
    let slt = soft_local_time_on(eta0, kernel, &mut strip)?;
    let (mut lv, mut uv) = (0u64, 0u64);
    let (mut gmin, mut gmax, mut gsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for z in region.sites() {
        let here = slt.eta_t.total_at(z);
        if strip.count_below(z, rho - eps) > here {
            lv += 1;
        }
        if here > strip.count_below(z, rho + eps) {
            uv += 1;
        }
        let gz = slt.g_at(z);
        gmin = gmin.min(gz);
        gmax = gmax.max(gz);
        gsum += gz;
    }
    Ok(DominationReport {
        rho,
        eps,
        t,
        h,
        region: (region.lo, region.hi),
        success: lv == 0,
        lower_ok: lv == 0,
        upper_ok: uv == 0,
        lower_violations: lv,
        upper_violations: uv,
        g: GSummary {
            min: gmin,
            mean: gsum / region.len() as f64,
            max: gmax,
        },
        ell,
        density_lower_ok: dens.max_deficit <= eps / 2.0,
        density_upper_ok: dens.max_excess <= eps / 2.0,
        t_below_half_h: 2 * (t as i64) < h,
    })
}

/// Success frequency of the domination coupling at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationRow {
    pub t: u64,
    pub h: i64,
    pub success: Frequency,
    pub upper_ok: Frequency,
    pub mean_lower_violations: f64,
    pub mean_g_min: f64,
}

/// Domination frequency over a grid of times, each replica starting from the
/// deterministic density-`rho` configuration on `[0, H]`.
pub fn slt_domination_study(
    params: &ApcrwParams,
    eps: f64,
    ts: &[u64],
    h: i64,
    replicas: u64,
    key: Key,
) -> Result<Vec<DominationRow>> {
    let eta0 = exact_density_state(params.rho, Window::new(0, h)?);
    let mut rows = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let kernel = exact_kernel(t, params.alpha, params.q, true)?;
        let reps = map_replicas(replicas, key.derive(i as u64), |_, k| {
            slt_domination_with_kernel(&eta0, &kernel, params.rho, eps, h, k)
        })?;
        let n = reps.len().max(1) as f64;
        rows.push(DominationRow {
            t,
            h,
            success: Frequency::new(reps.iter().filter(|r| r.success).count() as u64, replicas),
            upper_ok: Frequency::new(reps.iter().filter(|r| r.upper_ok).count() as u64, replicas),
            mean_lower_violations: reps.iter().map(|r| r.lower_violations as f64).sum::<f64>() / n,
            mean_g_min: reps.iter().map(|r| r.g.min).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

/// Endpoint histogram of a single particle moved by the sampler, against the
/// exact kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointLaw {
    pub t: u64,
    pub runs: u64,
    pub total_variation: f64,
    /// `(displacement, count, exact probability)`
    pub rows: Vec<(i64, u64, f64)>,
}

pub fn slt_endpoint_law(params: &ApcrwParams, t: u64, runs: u64, key: Key) -> Result<EndpointLaw> {
    let kernel = exact_kernel(t, params.alpha, params.q, true)?;
    let mut eta0 = EnvState::empty(Window::new(0, 0)?, 1, 0);
    eta0.counts[0][0] = 1;
    let strip_w = Window::around(0, t as i64);
    let ends = map_replicas(runs, key, |_, k| {
        let mut strip = PoissonStrip::new(strip_w, k);
        Ok(soft_local_time_on(&eta0, &kernel, &mut strip)?.endpoints[0])
    })?;
    let mut hist = vec![0u64; strip_w.len()];
    for e in ends {
        hist[strip_w.index(e).expect("endpoint inside strip")] += 1;
    }
    let rows: Vec<(i64, u64, f64)> = strip_w
        .sites()
        .zip(hist)
        .map(|(z, c)| (z, c, kernel.mass_at(z)))
        .collect();
    let tv = 0.5
        * rows
            .iter()
            .map(|&(_, c, m)| (c as f64 / runs as f64 - m).abs())
            .sum::<f64>();
    Ok(EndpointLaw {
        t,
        runs,
        total_variation: tv,
        rows,
    })
}
