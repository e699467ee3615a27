//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StcError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("LMI infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("bracket failure: {0}")]
    BracketFailure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StcError>;

impl StcError {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            StcError::Config(_) | StcError::InvalidTopology(_) => 2,
            StcError::Infeasible(_) => 3,
            StcError::NumericalFailure(_) | StcError::BracketFailure(_) => 4,
            _ => 1,
        }
    }
}
