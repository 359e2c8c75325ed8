use thiserror::Error;

/// Errors raised by the simulation engine and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {time} is outside the recorded horizon {horizon}")]
    TimeOutOfRange { time: u64, horizon: u64 },

    #[error("site {site} at time {time} is outside the simulated window [{lo}, {hi}]")]
    WindowTooSmall {
        site: i64,
        time: u64,
        lo: i64,
        hi: i64,
    },

    #[error("domination violated at site {site}, time {time}: coupling guarantee void")]
    RegionViolation { site: i64, time: u64 },

    #[error("soft local time support leaves the simulated strip at site {site}")]
    IntensityOverflow { site: i64 },

    #[error("no estimate: {found} regeneration increments, at least 2 required")]
    NoEstimate { found: usize },

    #[error("config: unknown key `{0}`")]
    UnknownKey(String),

    #[error("config: missing key `{key}` required by experiment `{experiment}`")]
    MissingKey {
        key: &'static str,
        experiment: &'static str,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("replica {replica} (seed {seed:#018x}): {source}")]
    Replica {
        replica: u64,
        seed: u64,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
