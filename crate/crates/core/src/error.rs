use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A local Hessian failed to factor. Carries the offending agent.
    #[error("numerical failure at agent {agent}: {reason}")]
    NumericalFailure { agent: usize, reason: String },

    /// A non-finite value appeared in the iterate.
    #[error("divergence at iteration {t}: non-finite entry in {quantity}")]
    Divergence { t: usize, quantity: &'static str },

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    ConvergenceFailure {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
