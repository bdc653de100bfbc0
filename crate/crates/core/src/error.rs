use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A linear system whose condition number exceeds the guard.
    #[error("ill-conditioned system: condition number {condition:.3e} exceeds {limit:.1e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("covariance lost positivity at step {step}")]
    NonPositiveCovariance { step: u64 },

    #[error("need at least {needed} points in the fit window, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("parameter regime not covered: {0}")]
    RegimeNotCovered(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::DimensionMismatch { .. }
            | Error::RegimeNotCovered(_)
            | Error::InsufficientPoints { .. }
            | Error::Config(_) => 2,
            Error::IllConditioned { .. } | Error::NonPositiveCovariance { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}
