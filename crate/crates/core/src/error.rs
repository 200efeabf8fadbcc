use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{key}`: {message}")]
    Domain { key: String, message: String },

    #[error("calibration infeasible: {0}")]
    Infeasible(String),

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("photon-number truncation: tail mass {tail:.3e} beyond n = {n_max} exceeds {limit:.0e}")]
    Truncation { n_max: usize, tail: f64, limit: f64 },

    #[error("herald click probability is zero")]
    ZeroHeraldProbability,

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("time tags on channel {0} are not sorted")]
    Unsorted(String),

    #[error("time-tag format: {0}")]
    Format(String),

    #[error("truncated time-tag file: expected {expected} records, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("timestamp overflow at pulse {0}")]
    Overflow(u64),

    #[error("fit did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("degenerate fit data: {0}")]
    Degenerate(String),

    #[error("config file not found: {}", .0.display())]
    ConfigNotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Domain {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "config-parse",
            Error::Domain { .. } => "domain",
            Error::Infeasible(_) => "infeasible",
            Error::NoRoot(_) => "no-root",
            Error::Truncation { .. } => "truncation",
            Error::ZeroHeraldProbability => "zero-herald-probability",
            Error::DivisionByZero(_) => "division-by-zero",
            Error::Unsorted(_) => "unsorted-input",
            Error::Format(_) => "tag-format",
            Error::Truncated { .. } => "tag-truncated",
            Error::Overflow(_) => "timestamp-overflow",
            Error::NonConvergence(_) => "non-convergence",
            Error::Degenerate(_) => "degenerate-data",
            Error::ConfigNotFound(_) => "config-not-found",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
