use alloc::string::String;

/// Errors raised by the discrete natural-model machinery.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("domain error at step {step}: {reason}")]
    Domain { step: usize, reason: &'static str },

    #[error("not a supermartingale at node {node}: drift increment {delta_a:e}")]
    NotSupermartingale { node: usize, delta_a: f64 },

    #[error("Hy(Z) violated at step {step}: predictable projection of 1-Z is {value:e}")]
    HyViolation { step: usize, value: f64 },

    #[error("invalid martingale family: {0}")]
    InvalidFamily(String),

    #[error("unsupported process: {0}")]
    UnsupportedProcess(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("solver inconsistency: {0}")]
    SolverInconsistency(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
