use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation precondition was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A discrete invariant check failed; the payload lists offending nodes.
    #[error("invariant violation: {reason} (first offending nodes: {nodes:?})")]
    InvariantViolation { reason: String, nodes: Vec<usize> },

    /// A linear solve failed (singular factorization or solver stagnation).
    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    /// A Cauchy-trace magnitude exceeded its tolerance gate.
    #[error("trace of order {order} has magnitude {magnitude:.3e}, above the tolerance {tolerance:.3e}")]
    InvalidTrace {
        order: usize,
        magnitude: f64,
        tolerance: f64,
    },

    /// Automatic parameter selection exhausted its search range.
    #[error("parameter selection failed: {0}")]
    ParameterSelection(String),

    /// Experiment configuration did not validate.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
