use thiserror::Error;

/// Errors raised by the escalation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid animal data: {0}")]
    AnimalData(String),

    #[error("improper beta prior on arm {arm}: shape parameters must both be positive (t={t}, v={v})")]
    ImproperPrior { arm: usize, t: u32, v: u32 },

    #[error("degenerate pseudo-dose geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("percentile fit did not converge on any start (best delta {best_delta:.6})")]
    FitFailure { best_delta: f64, best: [f64; 5] },

    #[error("no beta distribution matches mean {mean} and sd {sd}")]
    NoBetaMatch { mean: f64, sd: f64 },

    #[error("dose index {0} has no treated patients")]
    UndefinedDose(usize),

    #[error("degenerate data: both component marginal likelihoods vanish")]
    DegenerateData,

    #[error("trial state error: {0}")]
    State(String),

    #[error("protocol violation: expected dose index {expected}, got {got}")]
    ProtocolViolation { expected: usize, got: usize },

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("session schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
