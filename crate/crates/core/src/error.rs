//! Error type shared across the simulation crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    #[error("no stepsize in the grid converged on all seeds ({} points evaluated)", grid.len())]
    NoConvergingStepsize { grid: Vec<crate::harness::GridPoint> },

    #[error("stepsize {gamma} exceeds the critical stepsize {gamma_crit}")]
    StepsizeAboveCritical { gamma: f64, gamma_crit: f64 },

    #[error("mismatched log lengths: trace references gradient {index} but only {logged} were logged")]
    MismatchedLog { index: u64, logged: usize },
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
