//! Error types shared by the numerical core.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Incompatible shapes passed to an operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix not positive definite: pivot {pivot:.3e} at index {index}")]
    NotPositiveDefinite { pivot: f64, index: usize },

    /// A singular system was passed to a direct solver.
    #[error("singular linear system at pivot column {column}")]
    Singular { column: usize },

    /// Non-finite values appeared during a numeric computation.
    #[error("non-finite value in {context}{}", layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    Numeric {
        context: &'static str,
        layer: Option<usize>,
    },

    /// A training loop diverged.
    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    /// A model variant does not support the requested call.
    #[error("model '{model}' does not support {call}")]
    Capability {
        model: &'static str,
        call: &'static str,
    },

    /// Model container serialization problems.
    #[error("container format error: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
