use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural precondition (sizes, signs, grid compatibility) failed.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Array or network shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A special-function evaluation did not reach its tolerance.
    #[error("evaluation of {what} did not converge after {terms} terms")]
    Evaluation { what: &'static str, terms: usize },

    /// The conjugate-gradient solve hit its iteration cap.
    #[error("CG failed to converge at time level {level}: relative residual {residual:.3e} after {iterations} iterations")]
    Solver {
        level: usize,
        iterations: usize,
        residual: f64,
    },

    /// Dense Cholesky failed even after jitter escalation.
    #[error("covariance factorization failed (last jitter {jitter:.1e})")]
    Factorization { jitter: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Training { epoch: usize, loss: f64 },

    #[error("inversion failed: {0}")]
    Inversion(String),

    #[error("invalid file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
