use thiserror::Error;

use crate::lanczos::PartialRun;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("index {index} out of range for dimension {dim}")]
    Index { index: usize, dim: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A non-finite Lanczos coefficient; the steps completed before it are kept.
    #[error("numerical breakdown at step {}: {reason}", partial.tridiagonal.k())]
    Breakdown {
        reason: String,
        partial: Box<PartialRun>,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("worker protocol error: {0}")]
    Protocol(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
