//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The conditioning event has zero density or probability. Scoring code
    /// maps this to an infinite score rather than an error.
    #[error("ill-defined conditional: {0}")]
    IllDefinedConditional(String),

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    /// A numeric routine failed to converge or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The score of this input is infinite by construction (for example a
    /// student-t law with too few degrees of freedom for a first moment).
    #[error("score is infinite: {0}")]
    InfiniteScore(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
