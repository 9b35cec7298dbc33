//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrossDiffError {
    #[error("newton iteration diverged: residual {residual:.3e} after {iterations} iterations")]
    NewtonDiverged { residual: f64, iterations: usize },

    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("cascade specs mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("config parse error: {0}")]
    ParseError(String),

    #[error("config validation error for `{field}`: {reason}")]
    ValidationError { field: String, reason: String },

    #[error("missing report: {0}")]
    MissingReport(String),

    #[error("output directory is locked by another run: {0}")]
    OutputLocked(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad field dump: {0}")]
    BadDump(String),
}

pub type Result<T> = std::result::Result<T, CrossDiffError>;

impl CrossDiffError {
    pub fn invalid(name: &str, reason: impl Into<String>) -> Self {
        CrossDiffError::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
