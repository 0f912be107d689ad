use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Normal equations could not be solved.
    #[error("singular Gram matrix in least-squares fit; use ridge > 0")]
    Singular,

    /// A numeric routine failed to converge.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Malformed input data; `line` is 1-based and counts the header.
    #[error("input error at line {line}: {message}")]
    Input { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GraspError>;

impl GraspError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GraspError::Domain(msg.into())
    }
}
