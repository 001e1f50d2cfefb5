//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the model engines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A distribution or model parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A state value lies outside the model's state space.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation that needs at least one observation received none.
    #[error("empty observation path")]
    EmptyPath,

    /// An iterative routine did not converge within its iteration budget.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// Not enough data to run a diagnostic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A parameter point fails the model's stability condition.
    #[error("instability: {0}")]
    Instability(String),
}

pub type Result<T> = std::result::Result<T, Error>;
