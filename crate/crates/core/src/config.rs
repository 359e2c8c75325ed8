//! Experiment configuration: a flat TOML table (or the `config` object of a
//! run manifest), validated and completed with defaults.

use crate::env::{ApcrwParams, SuperpositionParams};
use crate::error::{invalid, Error, Result};
use crate::walker::WalkParams;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Speed,
    SpeedCurve,
    Coupling,
    Dyadic,
    Deviation,
    Ballisticity,
    Renewal,
    Stationarity,
    Kernel,
    Slt,
    VerifyConditions,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::Speed,
        ExperimentKind::SpeedCurve,
        ExperimentKind::Coupling,
        ExperimentKind::Dyadic,
        ExperimentKind::Deviation,
        ExperimentKind::Ballisticity,
        ExperimentKind::Renewal,
        ExperimentKind::Stationarity,
        ExperimentKind::Kernel,
        ExperimentKind::Slt,
        ExperimentKind::VerifyConditions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Speed => "speed",
            ExperimentKind::SpeedCurve => "speed-curve",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::Dyadic => "dyadic",
            ExperimentKind::Deviation => "deviation",
            ExperimentKind::Ballisticity => "ballisticity",
            ExperimentKind::Renewal => "renewal",
            ExperimentKind::Stationarity => "stationarity",
            ExperimentKind::Kernel => "kernel",
            ExperimentKind::Slt => "slt",
            ExperimentKind::VerifyConditions => "verify-conditions",
        }
    }

    /// Kinds whose environment may be a superposition of several clouds.
    fn allows_components(self) -> bool {
        matches!(
            self,
            ExperimentKind::Speed
                | ExperimentKind::SpeedCurve
                | ExperimentKind::Dyadic
                | ExperimentKind::Deviation
                | ExperimentKind::Ballisticity
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// A refresh period: a positive integer or `"inf"` for the plain model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RangeValue {
    Finite(u64),
    Named(String),
}

impl RangeValue {
    pub fn resolve(&self, key: &'static str) -> Result<Option<u64>> {
        match self {
            RangeValue::Finite(0) => Err(invalid(key, "refresh period must be at least 1")),
            RangeValue::Finite(l) => Ok(Some(*l)),
            RangeValue::Named(s) if s == "inf" => Ok(None),
            RangeValue::Named(s) => Err(invalid(
                key,
                format!("expected a positive integer or \"inf\", got {s:?}"),
            )),
        }
    }
}

/// A number, or `"auto"` for an estimate at `rho_star`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeedValue {
    Value(f64),
    Named(String),
}

/// Every key a config file may hold.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "seed",
    "replicas",
    "rho",
    "alpha",
    "q",
    "p_occ",
    "p_vac",
    "components",
    "L",
    "n",
    "rho_grid",
    "L_grid",
    "coupled",
    "eps",
    "L_list",
    "full",
    "delta",
    "n_list",
    "v_minus",
    "v_plus",
    "v_star",
    "rho_star",
    "K_list",
    "N",
    "f_exponent",
    "v_bar",
    "T",
    "c",
    "box_multiplier",
    "lookahead",
    "t",
    "lazy",
    "half_width",
    "t_list",
    "H",
    "endpoint_runs",
    "p4_ell_list",
    "c1_eps",
    "c1_ell_list",
    "c1_replicas",
    "c21_H",
    "c21_t",
    "c21_k",
    "c22_t_list",
    "c22_H",
    "c22_replicas",
    "c3_rho",
    "c3_ell",
];

#[allow(non_snake_case)]
#[derive(Clone, Debug, Default, Deserialize)]
struct RawConfig {
    experiment: Option<ExperimentKind>,
    seed: Option<u64>,
    replicas: Option<u64>,
    rho: Option<f64>,
    alpha: Option<f64>,
    q: Option<f64>,
    p_occ: Option<f64>,
    p_vac: Option<f64>,
    components: Option<Vec<[f64; 3]>>,
    L: Option<RangeValue>,
    n: Option<u64>,
    rho_grid: Option<Vec<f64>>,
    L_grid: Option<Vec<RangeValue>>,
    coupled: Option<bool>,
    eps: Option<f64>,
    L_list: Option<Vec<u64>>,
    full: Option<bool>,
    delta: Option<f64>,
    n_list: Option<Vec<u64>>,
    v_minus: Option<f64>,
    v_plus: Option<f64>,
    v_star: Option<SpeedValue>,
    rho_star: Option<f64>,
    K_list: Option<Vec<f64>>,
    N: Option<u64>,
    f_exponent: Option<f64>,
    v_bar: Option<f64>,
    T: Option<u64>,
    c: Option<f64>,
    box_multiplier: Option<u64>,
    lookahead: Option<u64>,
    t: Option<u64>,
    lazy: Option<bool>,
    half_width: Option<i64>,
    t_list: Option<Vec<u64>>,
    H: Option<i64>,
    endpoint_runs: Option<u64>,
    p4_ell_list: Option<Vec<usize>>,
    c1_eps: Option<f64>,
    c1_ell_list: Option<Vec<usize>>,
    c1_replicas: Option<u64>,
    c21_H: Option<i64>,
    c21_t: Option<u64>,
    c21_k: Option<u64>,
    c22_t_list: Option<Vec<u64>>,
    c22_H: Option<i64>,
    c22_replicas: Option<u64>,
    c3_rho: Option<f64>,
    c3_ell: Option<u64>,
}

/// Validated configuration with every default filled in. Serializes to the
/// same flat key set it is read from, so a snapshot can be fed back in.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub replicas: u64,
    pub rho: f64,
    pub alpha: f64,
    pub q: f64,
    pub p_occ: f64,
    pub p_vac: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub L: Option<RangeValue>,
    pub n: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rho_grid: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub L_grid: Vec<RangeValue>,
    pub coupled: bool,
    pub eps: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub L_list: Vec<u64>,
    pub full: bool,
    pub delta: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub n_list: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_minus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_plus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_star: Option<SpeedValue>,
    pub rho_star: f64,
    pub K_list: Vec<f64>,
    pub N: u64,
    pub f_exponent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_bar: Option<f64>,
    pub T: u64,
    pub c: f64,
    pub box_multiplier: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lookahead: Option<u64>,
    pub t: u64,
    pub lazy: bool,
    pub half_width: i64,
    pub t_list: Vec<u64>,
    pub H: i64,
    pub endpoint_runs: u64,
    pub p4_ell_list: Vec<usize>,
    pub c1_eps: f64,
    pub c1_ell_list: Vec<usize>,
    pub c1_replicas: u64,
    pub c21_H: i64,
    pub c21_t: u64,
    pub c21_k: u64,
    pub c22_t_list: Vec<u64>,
    pub c22_H: i64,
    pub c22_replicas: u64,
    pub c3_rho: f64,
    pub c3_ell: u64,
    /// Regime notes produced during validation.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
}

impl ExperimentConfig {
    pub fn model(&self) -> ApcrwParams {
        ApcrwParams {
            rho: self.rho,
            alpha: self.alpha,
            q: self.q,
        }
    }

    pub fn superposition(&self) -> Result<SuperpositionParams> {
        if self.components.is_empty() {
            return Ok(SuperpositionParams::single(self.model()));
        }
        let parts: Vec<(f64, f64, f64)> =
            self.components.iter().map(|c| (c[0], c[1], c[2])).collect();
        SuperpositionParams::new(self.rho, &parts)
    }

    /// Walker parameters. Equal probabilities give the environment-blind
    /// control walker.
    pub fn walk(&self) -> Result<WalkParams> {
        if self.p_occ == self.p_vac && self.p_occ > 0.0 && self.p_occ < 1.0 {
            return Ok(WalkParams::blind(self.p_occ));
        }
        WalkParams::new(self.p_occ, self.p_vac)
    }

    /// The refresh period, `None` for the plain model. `required` turns an
    /// absent key into [`Error::MissingKey`].
    pub fn range(&self, required: bool) -> Result<Option<u64>> {
        match &self.L {
            Some(v) => v.resolve("L"),
            None if required => Err(Error::MissingKey {
                key: "L",
                experiment: self.experiment.as_str(),
            }),
            None => Ok(None),
        }
    }

    pub fn range_grid(&self) -> Result<Vec<Option<u64>>> {
        self.L_grid.iter().map(|v| v.resolve("L_grid")).collect()
    }

    /// Flat JSON snapshot of every key.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

fn missing(key: &'static str, kind: ExperimentKind) -> Error {
    Error::MissingKey {
        key,
        experiment: kind.as_str(),
    }
}

fn check_keys<'a>(keys: impl Iterator<Item = &'a String>) -> Result<()> {
    for k in keys {
        if !KNOWN_KEYS.contains(&k.as_str()) {
            return Err(Error::UnknownKey(k.clone()));
        }
    }
    Ok(())
}

/// Parse a TOML table, or a JSON run manifest whose `config` object is
/// replayed.
pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let raw: RawConfig = if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let cfg = v.get("config").cloned().unwrap_or(v);
        let obj = cfg
            .as_object()
            .ok_or_else(|| Error::Config("manifest `config` must be an object".into()))?;
        check_keys(obj.keys())?;
        serde_json::from_value(cfg.clone()).map_err(|e| Error::Config(e.to_string()))?
    } else {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        check_keys(table.keys())?;
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
    };
    finish(raw, overrides)
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

/// Configuration from flags alone.
pub fn config_from_flags(overrides: &Overrides) -> Result<ExperimentConfig> {
    finish(RawConfig::default(), overrides)
}

fn finish(raw: RawConfig, o: &Overrides) -> Result<ExperimentConfig> {
    let kind = match (o.experiment, raw.experiment) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!(
                "config is for experiment `{b}`, not `{a}`"
            )));
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(Error::Config("no experiment given".into())),
    };
    let seed = o.seed.or(raw.seed).ok_or_else(|| missing("seed", kind))?;
    let replicas = o.replicas.or(raw.replicas).unwrap_or(1000);
    let t_default = match kind {
        ExperimentKind::Stationarity => 200,
        ExperimentKind::Slt => 50,
        _ => 100,
    };
    let mut cfg = ExperimentConfig {
        experiment: kind,
        seed,
        replicas,
        rho: raw.rho.unwrap_or(1.0),
        alpha: raw.alpha.unwrap_or(0.5),
        q: raw.q.unwrap_or(0.6),
        p_occ: raw.p_occ.unwrap_or(0.8),
        p_vac: raw.p_vac.unwrap_or(0.3),
        components: raw.components.unwrap_or_default(),
        L: raw.L,
        n: raw.n.unwrap_or(1000),
        rho_grid: raw.rho_grid.unwrap_or_default(),
        L_grid: raw.L_grid.unwrap_or_default(),
        coupled: raw.coupled.unwrap_or(true),
        eps: raw.eps.unwrap_or(0.2),
        L_list: raw.L_list.unwrap_or_default(),
        full: raw.full.unwrap_or(false),
        delta: raw.delta.unwrap_or(0.1),
        n_list: raw.n_list.unwrap_or_default(),
        v_minus: raw.v_minus,
        v_plus: raw.v_plus,
        v_star: raw.v_star,
        rho_star: raw.rho_star.unwrap_or(1.0),
        K_list: raw.K_list.unwrap_or_else(|| vec![10.0, 20.0, 40.0]),
        N: raw.N.unwrap_or(10_000),
        f_exponent: raw.f_exponent.unwrap_or(0.1),
        v_bar: raw.v_bar,
        T: raw.T.unwrap_or(10_000),
        c: raw.c.unwrap_or(1.0),
        box_multiplier: raw.box_multiplier.unwrap_or(4),
        lookahead: raw.lookahead,
        t: raw.t.unwrap_or(t_default),
        lazy: raw.lazy.unwrap_or(true),
        half_width: raw.half_width.unwrap_or(500),
        t_list: raw.t_list.unwrap_or_else(|| vec![100, 400, 1600]),
        H: raw.H.unwrap_or(4000),
        endpoint_runs: raw.endpoint_runs.unwrap_or(100_000),
        p4_ell_list: raw.p4_ell_list.unwrap_or_else(|| vec![100, 200, 400]),
        c1_eps: raw.c1_eps.unwrap_or(0.5),
        c1_ell_list: raw.c1_ell_list.unwrap_or_else(|| vec![8, 16, 32]),
        c1_replicas: raw.c1_replicas.unwrap_or(100),
        c21_H: raw.c21_H.unwrap_or(200),
        c21_t: raw.c21_t.unwrap_or(50),
        c21_k: raw.c21_k.unwrap_or(1),
        c22_t_list: raw.c22_t_list.unwrap_or_else(|| vec![100, 400, 1600]),
        c22_H: raw.c22_H.unwrap_or(4000),
        c22_replicas: raw.c22_replicas.unwrap_or(100),
        c3_rho: raw.c3_rho.unwrap_or(0.5),
        c3_ell: raw.c3_ell.unwrap_or(2),
        warnings: Vec::new(),
    };
    validate(&mut cfg)?;
    Ok(cfg)
}

fn validate(cfg: &mut ExperimentConfig) -> Result<()> {
    use ExperimentKind as K;
    let kind = cfg.experiment;
    if cfg.replicas == 0 {
        return Err(invalid("replicas", "at least one replica required"));
    }
    cfg.model().validate()?;
    if cfg.p_vac > cfg.p_occ {
        return Err(invalid(
            "p_vac",
            format!(
                "the walker convention is p_occ > p_vac (faster right on occupied sites), got p_occ = {}, p_vac = {}",
                cfg.p_occ, cfg.p_vac
            ),
        ));
    }
    cfg.walk()?;
    if cfg.p_occ == cfg.p_vac {
        cfg.warnings.push(format!(
            "p_occ = p_vac = {}: the walker ignores the environment",
            cfg.p_occ
        ));
    }
    if !cfg.components.is_empty() {
        if !kind.allows_components() {
            return Err(Error::Config(format!(
                "`components` is not supported by experiment `{kind}`"
            )));
        }
        cfg.superposition()?;
    }
    if cfg.n == 0 {
        return Err(invalid("n", "at least one step required"));
    }
    match kind {
        K::Speed | K::Coupling => {
            let l = cfg.range(true)?;
            if kind == K::Coupling && l.is_none() {
                return Err(invalid("L", "the coupling needs a finite refresh period"));
            }
            if kind == K::Coupling {
                if cfg.replicas < 1 {
                    return Err(invalid("replicas", "at least one replica required"));
                }
                let p = crate::coupling::ManyToOneParams {
                    model: cfg.model(),
                    walk: cfg.walk()?,
                    eps: cfg.eps,
                    l: l.unwrap_or(1),
                    n: cfg.n,
                    f_exponent: cfg.f_exponent,
                };
                p.validate()?;
                let r = p.regime();
                let flags = [
                    (r.eps_at_least_f_pow, "eps < f(L)^(-1/40)"),
                    (r.rho_above_f_pow, "rho <= f(L)^(-1/40)"),
                    (r.n_multiple_of_l, "n is not a multiple of L"),
                    (r.f_at_most_l, "f(L) > L"),
                    (r.recouple_time_positive, "f(L) / 2 < 1: no recoupling time"),
                ];
                for (ok, msg) in flags {
                    if !ok {
                        cfg.warnings.push(format!("coupling regime: {msg}"));
                    }
                }
            }
        }
        K::SpeedCurve => {
            if cfg.rho_grid.is_empty() {
                return Err(missing("rho_grid", kind));
            }
            if cfg.L_grid.is_empty() {
                return Err(missing("L_grid", kind));
            }
            cfg.range_grid()?;
            for &r in &cfg.rho_grid {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(invalid("rho_grid", format!("{r} must be positive")));
                }
            }
        }
        K::Dyadic => {
            if cfg.L_list.is_empty() {
                return Err(missing("L_list", kind));
            }
        }
        K::Deviation => {
            if cfg.n_list.is_empty() {
                return Err(missing("n_list", kind));
            }
            if cfg.v_minus.is_none() {
                return Err(missing("v_minus", kind));
            }
            if cfg.v_plus.is_none() {
                return Err(missing("v_plus", kind));
            }
        }
        K::Ballisticity => {
            cfg.range(false)?;
            match &cfg.v_star {
                None => return Err(missing("v_star", kind)),
                Some(SpeedValue::Named(s)) if s != "auto" => {
                    return Err(invalid(
                        "v_star",
                        format!("expected a number or \"auto\", got {s:?}"),
                    ));
                }
                Some(SpeedValue::Value(v)) if !(-1.0..=1.0).contains(v) => {
                    return Err(invalid("v_star", format!("{v} not in [-1, 1]")));
                }
                _ => {}
            }
            if cfg.K_list.is_empty() {
                return Err(missing("K_list", kind));
            }
        }
        K::Renewal => {
            match (&cfg.v_bar, &cfg.v_star) {
                (Some(_), Some(SpeedValue::Value(_))) | (None, None) => {}
                (None, Some(SpeedValue::Named(s))) if s == "auto" => cfg.v_star = None,
                (None, Some(_)) => return Err(missing("v_bar", kind)),
                (Some(_), None) => return Err(missing("v_star", kind)),
                (Some(_), Some(SpeedValue::Named(s))) => {
                    return Err(invalid(
                        "v_star",
                        format!("renewal needs a numeric v_star with v_bar, got {s:?}"),
                    ));
                }
            }
            if cfg.replicas < 2 {
                return Err(invalid("replicas", "at least 2 replicas required"));
            }
        }
        K::Slt => {
            if !(cfg.eps > 0.0 && cfg.eps < cfg.rho) {
                return Err(invalid("eps", format!("{} must lie in (0, rho)", cfg.eps)));
            }
            for &t in &cfg.t_list {
                if 2 * t as i64 >= cfg.H {
                    cfg.warnings
                        .push(format!("slt: t = {t} is not below H / 2 = {}", cfg.H / 2));
                }
            }
        }
        K::VerifyConditions => {
            if !(cfg.eps > 0.0 && cfg.eps < cfg.rho) {
                return Err(invalid("eps", format!("{} must lie in (0, rho)", cfg.eps)));
            }
        }
        K::Stationarity | K::Kernel => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        parse_config_str(s, &Overrides::default())
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("experiment = \"stationarity\"\nrho = 1\nalpha = 0.5\nq = 0.6\np_occ = 0.8\np_vac = 0.3\nseed = 42").unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.t, 200);
        assert_eq!(c.replicas, 1000);
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn reversed_walker_is_rejected() {
        let e =
            parse("experiment = \"speed\"\nseed = 1\nL = 4\np_occ = 0.3\np_vac = 0.9").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("p_occ > p_vac"), "{msg}");
    }

    #[test]
    fn missing_range_is_named() {
        let e = parse("experiment = \"speed\"\nseed = 1").unwrap_err();
        assert!(
            matches!(
                e,
                Error::MissingKey {
                    key: "L",
                    experiment: "speed"
                }
            ),
            "{e}"
        );
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse("experiment = \"kernel\"\nseed = 1\nrhoo = 2").unwrap_err();
        assert!(matches!(e, Error::UnknownKey(ref k) if k == "rhoo"), "{e}");
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(
            parse("experiment = \"kernel\"").unwrap_err(),
            Error::MissingKey { key: "seed", .. }
        ));
    }

    #[test]
    fn snapshot_round_trips() {
        let c = parse(
            "experiment = \"speed-curve\"\nseed = 3\nrho_grid = [0.5, 1.0]\nL_grid = [8, \"inf\"]",
        )
        .unwrap();
        let back = parse_config_str(
            &serde_json::json!({ "config": c.snapshot() }).to_string(),
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(c, back);
        assert_eq!(back.range_grid().unwrap(), vec![Some(8), None]);
    }

    #[test]
    fn blind_walker_warns() {
        let c = parse("experiment = \"speed\"\nseed = 1\nL = \"inf\"\np_occ = 0.7\np_vac = 0.7")
            .unwrap();
        assert_eq!(c.warnings.len(), 1);
        assert_eq!(c.walk().unwrap(), WalkParams::blind(0.7));
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            experiment: Some(ExperimentKind::Kernel),
            seed: Some(9),
            replicas: Some(5),
        };
        let c = parse_config_str("seed = 1\nreplicas = 2", &o).unwrap();
        assert_eq!((c.seed, c.replicas), (9, 5));
        let o = Overrides {
            experiment: Some(ExperimentKind::Slt),
            ..Overrides::default()
        };
        assert!(parse_config_str("experiment = \"kernel\"\nseed = 1", &o).is_err());
    }
}
