use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the solver, sensitivity and optimization layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("grid mismatch between fields")]
    GridMismatch,

    #[error("non-physical state: {component} = {value} at point {index}")]
    InvalidState {
        component: &'static str,
        index: usize,
        value: f64,
    },

    #[error("integration failed at time iteration {step}: {source}")]
    IntegrationFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory replay mismatch at sub-step {substep}; the adjoint would be inconsistent")]
    ReplayMismatch { substep: usize },

    #[error("trajectory storage: {0}")]
    Storage(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch { expected, got });
    }
    Ok(())
}
