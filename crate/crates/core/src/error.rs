use thiserror::Error;

/// Errors raised by problem construction, the solver and the oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LfdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("multipliers outside the feasible ball: {0}")]
    Infeasible(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("discrete problem required: {0}")]
    NotDiscrete(String),

    #[error("M ≤ 3 required for the grid oracle (got M = {0})")]
    TooManyNulls(usize),

    #[error("invalid discrete table: {0}")]
    InvalidTable(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LfdError>;

impl From<std::io::Error> for LfdError {
    fn from(e: std::io::Error) -> Self {
        LfdError::Io(e.to_string())
    }
}

impl From<csv::Error> for LfdError {
    fn from(e: csv::Error) -> Self {
        LfdError::InvalidTable(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(LfdError::DimensionMismatch { expected, got })
    }
}
