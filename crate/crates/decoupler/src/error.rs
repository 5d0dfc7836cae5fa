use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A register, matrix, or vector had a size incompatible with the operation.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A qubit or parameter index referenced something outside the register.
    #[error("invalid index: {0}")]
    InvalidIndex(String),

    /// An argument failed validation (empty blocks, zero shots, malformed input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix expected to be unitary (or a state expected to be normalized) was not.
    #[error("not unitary: {0}")]
    NotUnitary(String),

    /// A density operator failed hermiticity, trace, or positivity checks.
    #[error("invalid density operator: {0}")]
    InvalidDensity(String),

    /// A partition did not tile the register or referenced unknown blocks.
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// The shift rule was asked to differentiate an objective it does not cover.
    #[error("unsupported objective: {0}")]
    UnsupportedObjective(String),

    /// An objective or gradient produced a non-finite value.
    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure { iteration: u64, message: String },

    /// Configuration or serialized input could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
