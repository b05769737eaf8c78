//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the attempted operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A configuration value is out of its legal range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value was produced where a finite one is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A caller-supplied argument is invalid (empty sequence, bad length, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// An operation was called before its required state was established.
    #[error("state error: {0}")]
    State(String),

    /// A file's contents do not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// External-feature coverage gap: intervals with no weather row.
    #[error("coverage error: no weather data for {count} intervals (first: {first})")]
    Coverage { count: usize, first: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
