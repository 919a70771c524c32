use thiserror::Error;

/// Errors raised by the space-time solver library.
#[derive(Debug, Error)]
pub enum StmgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("mesh perturbation produced an inverted cell (cell {cell}); retry with another seed")]
    PerturbationFailure { cell: usize },

    #[error("numerical failure: {0}")]
    NumericFailure(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, StmgError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(StmgError::InvalidArgument(msg.into()))
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(StmgError::DimensionMismatch { expected, got })
    }
}
