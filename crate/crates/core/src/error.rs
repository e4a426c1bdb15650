//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor or matrix dimensions do not match what an operation requires.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input data is invalid (non-finite values, empty series, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A configuration value is out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric procedure failed (non-convergence, NaN gradient, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The staged training protocol was violated.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Container header is not parseable or has the wrong format tag.
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    /// Declared dimensions disagree with the payload or the manifest.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The payload ends before the declared number of bytes.
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
