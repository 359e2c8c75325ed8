//! Experiment orchestration: dispatch a validated config to its module, write
//! the data files and a manifest that digests them.

use crate::conditions::{stationarity_study, verify_conditions, ConditionsConfig};
use crate::config::{ExperimentConfig, ExperimentKind, SpeedValue};
use crate::coupling::{many_to_one_experiment, ManyToOneParams};
use crate::error::{Error, Result};
use crate::finite_range::{
    ballisticity_experiment, deviation_experiment, dyadic_convergence_study, estimate_speed,
    run_finite_range_walk, speed_curve, speed_from_displacements, CurveRow, FiniteRangeParams,
};
use crate::kernels::{exact_kernel, kernel_dump};
use crate::par::{map_replicas, replica_key};
use crate::renewal::{renewal_experiment, ConeParams, RenewalConfig};
use crate::rng::Key;
use crate::slt::{slt_domination_study, slt_endpoint_law};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Manifests list per-replica seeds up to this many replicas.
pub const MAX_LISTED_SEEDS: u64 = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub experiment: String,
    pub code_version: String,
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub seed_rule: String,
    pub replica_seeds: Vec<u64>,
    pub wall_time_s: f64,
    pub threads: usize,
    pub outputs: Vec<OutputFile>,
    pub warnings: Vec<String>,
    /// One-line results for the console.
    pub summary: Vec<String>,
}

/// Root key of an experiment: the master seed keyed by the experiment name.
pub fn experiment_key(cfg: &ExperimentConfig) -> Key {
    Key::new(cfg.seed).tag(cfg.experiment.as_str())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
    summary: Vec<String>,
}

impl Outputs {
    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        std::fs::write(self.dir.join(name), &bytes)?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn csv(&mut self, name: &str, kind: &str, columns: &str, body: String) -> Result<()> {
        let text = format!("# apcrw {kind} v1\n{columns}\n{body}");
        self.put(name, text.into_bytes())
    }

    fn json(&mut self, name: &str, kind: &str, mut value: serde_json::Value) -> Result<()> {
        if let Some(obj) = value.as_object_mut() {
            obj.insert("schema".into(), json!(format!("apcrw {kind} v1")));
        }
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.put(name, text.into_bytes())
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }
}

/// Shortest round-trip text; scientific notation outside `[1e-4, 1e15)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt_range(l: Option<u64>) -> String {
    l.map_or_else(|| "inf".to_string(), |v| v.to_string())
}

fn curve_csv(rows: &[CurveRow], tag: Option<&str>) -> String {
    let mut s = String::new();
    for r in rows {
        if let Some(t) = tag {
            let _ = write!(s, "{t},");
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.rho,
            opt_range(r.l),
            r.n,
            r.mean,
            r.stderr,
            r.ci_lo,
            r.ci_hi,
            r.replicas
        );
    }
    s
}

const CURVE_COLUMNS: &str = "rho,L,n,mean,stderr,ci_lo,ci_hi,replicas";

fn finite_range_params(cfg: &ExperimentConfig, l: Option<u64>) -> Result<FiniteRangeParams> {
    FiniteRangeParams::new(cfg.superposition()?, cfg.walk()?, l)
}

/// Run the experiment, write its files into `out` and return the manifest
/// (also written as `manifest.json`).
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let key = experiment_key(cfg);
    let kind = cfg.experiment;
    let mut o = Outputs {
        dir: out.to_path_buf(),
        files: Vec::new(),
        summary: Vec::new(),
    };
    let mut warnings = cfg.warnings.clone();
    match kind {
        ExperimentKind::Speed => {
            let p = finite_range_params(cfg, cfg.range(true)?)?;
            let xs = map_replicas(cfg.replicas, key, |_, k| {
                Ok(run_finite_range_walk(&p, cfg.n, k)?.displacement())
            })?;
            let mut body = String::new();
            for (r, x) in xs.iter().enumerate() {
                let _ = writeln!(body, "{r},{},{x}", replica_key(key, r as u64).seed_value());
            }
            o.csv("speed.csv", "speed", "replica,seed,displacement", body)?;
            let est = speed_from_displacements(&xs, cfg.n, p.snapshot());
            o.say(format!(
                "speed {:.6} +- {:.6} (n = {}, {} replicas)",
                est.mean, est.stderr, cfg.n, cfg.replicas
            ));
            o.json("speed.json", "speed", serde_json::to_value(&est)?)?;
        }
        ExperimentKind::SpeedCurve => {
            let p = finite_range_params(cfg, None)?;
            let rows = speed_curve(
                &p,
                &cfg.rho_grid,
                &cfg.range_grid()?,
                cfg.n,
                cfg.replicas,
                cfg.coupled,
                key,
            )?;
            o.csv(
                "speed_curve.csv",
                "speed-curve",
                CURVE_COLUMNS,
                curve_csv(&rows, None),
            )?;
            for r in &rows {
                o.say(format!(
                    "rho {} L {}: {:.6} +- {:.6}",
                    r.rho,
                    opt_range(r.l),
                    r.mean,
                    r.stderr
                ));
            }
        }
        ExperimentKind::Coupling => {
            let p = ManyToOneParams {
                model: cfg.model(),
                walk: cfg.walk()?,
                eps: cfg.eps,
                l: cfg.range(true)?.unwrap_or(1),
                n: cfg.n,
                f_exponent: cfg.f_exponent,
            };
            let rep = many_to_one_experiment(&p, cfg.replicas, key)?;
            let mut buf = Vec::new();
            rep.write_csv(&mut buf)?;
            o.put("coupling.csv", buf)?;
            o.say(format!(
                "threshold {:.3}: frequency {:.4} (bound {:.4}); G1/G2/G3 failures {}/{}/{}",
                rep.threshold,
                rep.threshold_frequency.p,
                rep.bound_rhs,
                rep.failures_g1,
                rep.failures_g2,
                rep.failures_g3
            ));
            let mut v = serde_json::to_value(&rep)?;
            if let Some(m) = v.as_object_mut() {
                m.remove("rows");
            }
            o.json("coupling.json", "coupling", v)?;
        }
        ExperimentKind::Dyadic => {
            let p = finite_range_params(cfg, None)?;
            let t = dyadic_convergence_study(
                &p,
                cfg.eps,
                &cfg.L_list,
                cfg.n,
                cfg.replicas,
                cfg.full,
                key,
            )?;
            let body = curve_csv(&t.rows, Some("lower")) + &curve_csv(&t.upper_rows, Some("upper"));
            o.csv(
                "dyadic.csv",
                "dyadic",
                &format!("series,{CURVE_COLUMNS}"),
                body,
            )?;
            for d in &t.diffs {
                o.say(format!(
                    "L {}: |v(2L) - v(L)| = {:.6} (2 se {:.6})",
                    d.0, d.1, d.2
                ));
            }
            o.say(format!(
                "crossing {:.6} <= {:.6}: {}",
                t.crossing_lhs, t.crossing_rhs, t.crossing_ok
            ));
            o.json("dyadic.json", "dyadic", serde_json::to_value(&t)?)?;
        }
        ExperimentKind::Deviation => {
            let p = finite_range_params(cfg, None)?;
            let v_ref = (
                cfg.v_minus.unwrap_or_default(),
                cfg.v_plus.unwrap_or_default(),
            );
            let rep = deviation_experiment(&p, cfg.delta, &cfg.n_list, v_ref, cfg.replicas, key)?;
            let mut body = String::new();
            for r in &rep.rows {
                let f = &r.frequency;
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{},{}",
                    r.n,
                    r.l,
                    f.hits,
                    f.trials,
                    f.p,
                    f.stderr,
                    num(r.reference)
                );
                o.say(format!(
                    "n {} L {}: {:.5} +- {:.5}",
                    r.n, r.l, f.p, f.stderr
                ));
            }
            o.csv(
                "deviation.csv",
                "deviation",
                "n,L,hits,trials,frequency,stderr,reference",
                body,
            )?;
            o.json("deviation.json", "deviation", serde_json::to_value(&rep)?)?;
        }
        ExperimentKind::Ballisticity => {
            let p = finite_range_params(cfg, cfg.range(false)?)?;
            let v_star = match &cfg.v_star {
                Some(SpeedValue::Value(v)) => *v,
                _ => {
                    let e = estimate_speed(
                        &p.at_rho(cfg.rho_star),
                        cfg.N,
                        cfg.replicas,
                        key.tag("v_star"),
                    )?;
                    o.say(format!(
                        "v_star = v({}) = {:.6} +- {:.6}",
                        cfg.rho_star, e.mean, e.stderr
                    ));
                    e.mean
                }
            };
            let rep = ballisticity_experiment(&p, v_star, &cfg.K_list, cfg.N, cfg.replicas, key)?;
            let mut body = String::new();
            for r in &rep.rows {
                let f = &r.frequency;
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    r.k, f.hits, f.trials, f.p, f.stderr, r.log_frequency
                );
                o.say(format!(
                    "K {}: {:.5} (log {:.3})",
                    r.k, f.p, r.log_frequency
                ));
            }
            o.csv(
                "ballisticity.csv",
                "ballisticity",
                "K,hits,trials,frequency,stderr,log_frequency",
                body,
            )?;
            o.json(
                "ballisticity.json",
                "ballisticity",
                serde_json::to_value(&rep)?,
            )?;
        }
        ExperimentKind::Renewal => {
            let cone = match (cfg.v_bar, &cfg.v_star) {
                (Some(vb), Some(SpeedValue::Value(vs))) => Some(ConeParams::new(vb, *vs)?),
                _ => None,
            };
            let rc = RenewalConfig {
                model: cfg.model(),
                walk: cfg.walk()?,
                n: cfg.n,
                replicas: cfg.replicas,
                cone,
                t: cfg.T,
                c: cfg.c,
                box_multiplier: cfg.box_multiplier,
                lookahead: cfg.lookahead,
            };
            let rep = renewal_experiment(&rc, key)?;
            let mut buf = Vec::new();
            rep.write_csv(&mut buf)?;
            o.put("renewal.csv", buf)?;
            if rep.auto_cone {
                warnings.push(format!(
                    "renewal: cones placed from the direct estimate (v_bar = {:.4}, v_star = {:.4})",
                    rep.cone.v_bar, rep.cone.v_star
                ));
            }
            o.say(format!(
                "{} increments; renewal {:.6} +- {:.6}, direct {:.6} +- {:.6}, agree {}",
                rep.increments.len(),
                rep.renewal.mean,
                rep.renewal.stderr,
                rep.direct.mean,
                rep.direct.stderr,
                rep.agreement
            ));
            o.say(format!(
                "lag-1 {:.4} (bound {:.4}); KS {:.4}, p = {:.4}",
                rep.lag1, rep.lag1_bound, rep.ks_statistic, rep.ks_pvalue
            ));
            let mut v = serde_json::to_value(&rep)?;
            if let Some(m) = v.as_object_mut() {
                m.remove("increments");
                m.remove("per_replica");
            }
            o.json("renewal.json", "renewal", v)?;
        }
        ExperimentKind::Stationarity => {
            let rep = stationarity_study(&cfg.model(), cfg.t, cfg.half_width, cfg.replicas, key)?;
            let mut body = String::new();
            for (r, s, s2) in &rep.per_replica {
                let _ = writeln!(body, "{r},{s},{s2}");
            }
            o.csv(
                "stationarity.csv",
                "stationarity",
                "replica,sum,sum_sq",
                body,
            )?;
            o.say(format!(
                "variance / mean = {:.5} over {} observations (mean {:.5})",
                rep.ratio, rep.observations, rep.mean
            ));
            let mut v = serde_json::to_value(&rep)?;
            if let Some(m) = v.as_object_mut() {
                m.remove("per_replica");
            }
            o.json("stationarity.json", "stationarity", v)?;
        }
        ExperimentKind::Kernel => {
            let table = exact_kernel(cfg.t, cfg.alpha, cfg.q, cfg.lazy)?;
            let mut body = String::new();
            for r in kernel_dump(&table) {
                let _ = writeln!(
                    body,
                    "{},{},{},{}",
                    r.offset,
                    num(r.mass),
                    num(r.asymptotic_value),
                    num(r.rel_error)
                );
            }
            o.csv(
                "kernel.csv",
                "kernel",
                "offset,mass,asymptotic,rel_error",
                body,
            )?;
            let expected =
                cfg.t as f64 * if cfg.lazy { cfg.alpha } else { 1.0 } * (2.0 * cfg.q - 1.0);
            o.say(format!(
                "t {}: total {:.15}, mean {:.10} (expected {:.10})",
                cfg.t,
                table.total(),
                table.mean(),
                expected
            ));
            o.json(
                "kernel.json",
                "kernel",
                json!({ "t": cfg.t, "alpha": cfg.alpha, "q": cfg.q, "lazy": cfg.lazy,
                        "total": table.total(), "mean": table.mean(), "expected_mean": expected }),
            )?;
        }
        ExperimentKind::Slt => {
            let m = cfg.model();
            let rows = slt_domination_study(
                &m,
                cfg.eps,
                &cfg.t_list,
                cfg.H,
                cfg.replicas,
                key.tag("domination"),
            )?;
            let mut body = String::new();
            for r in &rows {
                let s = &r.success;
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{},{},{}",
                    r.t,
                    r.h,
                    s.hits,
                    s.trials,
                    s.p,
                    s.stderr,
                    r.mean_lower_violations,
                    r.mean_g_min
                );
                o.say(format!(
                    "t {}: domination {:.4} +- {:.4}",
                    r.t, s.p, s.stderr
                ));
            }
            o.csv(
                "slt.csv",
                "slt",
                "t,H,hits,trials,success,stderr,mean_lower_violations,mean_g_min",
                body,
            )?;
            let law = slt_endpoint_law(&m, cfg.t, cfg.endpoint_runs, key.tag("endpoint"))?;
            let mut body = String::new();
            for (z, c, p) in &law.rows {
                let _ = writeln!(body, "{z},{c},{}", num(*p));
            }
            o.csv(
                "slt_endpoint.csv",
                "slt-endpoint",
                "offset,count,exact",
                body,
            )?;
            o.say(format!(
                "endpoint law at t {}: total variation {:.5} over {} runs",
                law.t, law.total_variation, law.runs
            ));
            o.json(
                "slt.json",
                "slt",
                json!({ "domination": rows, "endpoint": { "t": law.t, "runs": law.runs, "total_variation": law.total_variation } }),
            )?;
        }
        ExperimentKind::VerifyConditions => {
            let cc = ConditionsConfig {
                model: cfg.model(),
                eps: cfg.eps,
                replicas: cfg.replicas,
                p4_ells: cfg.p4_ell_list.clone(),
                c1_eps: cfg.c1_eps,
                c1_ells: cfg.c1_ell_list.clone(),
                c1_replicas: cfg.c1_replicas,
                c21_h: cfg.c21_H,
                c21_t: cfg.c21_t,
                c21_k: cfg.c21_k,
                c22_ts: cfg.c22_t_list.clone(),
                c22_h: cfg.c22_H,
                c22_replicas: cfg.c22_replicas,
                c3_rho: cfg.c3_rho,
                c3_ell: cfg.c3_ell,
            };
            let rep = verify_conditions(&cc, key)?;
            let mut body = String::new();
            for (name, pass, text) in rep.summary() {
                let _ = writeln!(
                    body,
                    "{name},{},\"{text}\"",
                    if pass { "pass" } else { "fail" }
                );
                o.say(format!(
                    "{name}: {} ({text})",
                    if pass { "pass" } else { "fail" }
                ));
            }
            o.csv(
                "conditions.csv",
                "conditions",
                "condition,result,observed",
                body,
            )?;
            o.json("conditions.json", "conditions", serde_json::to_value(&rep)?)?;
        }
    }
    let replica_seeds = if cfg.replicas <= MAX_LISTED_SEEDS {
        (0..cfg.replicas)
            .map(|r| replica_key(key, r).seed_value())
            .collect()
    } else {
        Vec::new()
    };
    let manifest = RunManifest {
        schema: "apcrw manifest v1".into(),
        experiment: kind.as_str().into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.snapshot(),
        master_seed: cfg.seed,
        seed_rule: format!(
            "root = Key::new(master_seed).tag(\"{kind}\"); replica r of a stage uses stage_key.derive(r); \
             replica_seeds lists root.derive(r) when replicas <= {MAX_LISTED_SEEDS}"
        ),
        replica_seeds,
        wall_time_s: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        outputs: o.files,
        warnings,
        summary: o.summary,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out.join("manifest.json"), text)?;
    Ok(manifest)
}

/// Recompute the digests of a manifest's outputs in `dir`; returns the files
/// whose content no longer matches.
pub fn check_digests(manifest: &RunManifest, dir: &Path) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for f in &manifest.outputs {
        let bytes = std::fs::read(dir.join(&f.file)).map_err(Error::Io)?;
        if sha256_hex(&bytes) != f.sha256 {
            bad.push(f.file.clone());
        }
    }
    Ok(bad)
}
