use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("sample covariance is not positive definite (smallest pivot {pivot:e})")]
    SingularCovariance { pivot: f64 },

    #[error("EM iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("theta coincides with theta*; the ratio is undefined")]
    ZeroDistance,

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{failed} of {reps} replications failed at grid point (m={m}, n={n}): {first}")]
    TooManyFailures {
        m: usize,
        n: usize,
        failed: usize,
        reps: usize,
        first: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed dataset file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (singular covariance, divergence)
    /// rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularCovariance { .. } | Error::Divergence { .. } => true,
            Error::TooManyFailures { .. } => true,
            _ => false,
        }
    }
}
