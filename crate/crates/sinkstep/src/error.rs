//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two inputs disagree, or an input has an unusable shape.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The Sinkhorn iteration lost numerical headroom and cannot continue.
    #[error("numerical divergence in sinkhorn iteration {iteration}: {detail}")]
    NumericalDivergence { iteration: usize, detail: String },

    /// The requested dimension is not supported by the operation.
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    /// Rejection sampling exhausted its budget without a valid sample.
    #[error("infeasible environment: {0}")]
    InfeasibleEnvironment(String),

    /// A matrix expected to be positive definite failed its factorization.
    #[error("factorization failure: {0}")]
    FactorizationFailure(String),

    /// Filesystem or serialization failure in the harness or CLI layers.
    #[error("io: {0}")]
    Io(String),
}

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

pub type Result<T> = std::result::Result<T, Error>;
