use thiserror::Error;

/// Errors raised by the lattice, operator and criterion layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid group model: {0}")]
    InvalidModel(String),

    #[error("functions live on different group models")]
    ModelMismatch,

    #[error("region is empty")]
    EmptyRegion,

    #[error("aperiodic element required: {0}")]
    Periodic(String),

    #[error("invalid norm exponent p = {0} (need 1 <= p < inf)")]
    InvalidExponent(f64),

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
