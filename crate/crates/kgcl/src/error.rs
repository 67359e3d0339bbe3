//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A data file line did not match the expected format.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Input data violated a structural requirement (missing types,
    /// unknown entities, inconsistent splits, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor operands had incompatible shapes.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// An operation produced NaN or infinity.
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },

    /// Bad configuration value or unknown config key.
    #[error("config error: {0}")]
    Config(String),

    /// Triple corruption found no type-compatible replacement on either side.
    #[error("no valid corruption candidate for ({0}, {1}, {2})")]
    NoCorruptionCandidate(String, String, String),

    /// An operation was called outside its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
