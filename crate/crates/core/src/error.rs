//! Error type shared by all modules.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CcoError>;

/// Errors emitted by mask construction, numeric kernels, streaming sessions
/// and the file formats.
#[derive(Debug, Clone, PartialEq)]
pub enum CcoError {
    /// Operand shapes are incompatible.
    Shape {
        context: &'static str,
        detail: String,
    },
    /// A parameter or configuration value is out of range.
    InvalidArgument {
        context: &'static str,
        detail: String,
    },
    /// A softmax row had no allowed entries.
    FullyMaskedRow { row: usize },
    /// A numeric kernel produced NaN or infinity.
    NonFinite { context: &'static str },
    /// Session configuration does not match the encoder stack.
    ConfigMismatch { detail: String },
    /// The streaming session was already flushed.
    SessionClosed,
    /// A weights or frames file could not be parsed.
    Format { offset: usize, detail: String },
    /// Underlying I/O failure.
    Io { detail: String },
}

impl fmt::Display for CcoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CcoError::Shape { context, detail } => {
                write!(f, "shape error in {context}: {detail}")
            }
            CcoError::InvalidArgument { context, detail } => {
                write!(f, "invalid argument in {context}: {detail}")
            }
            CcoError::FullyMaskedRow { row } => {
                write!(f, "softmax row {row} has no allowed entries")
            }
            CcoError::NonFinite { context } => {
                write!(f, "non-finite value produced by {context}")
            }
            CcoError::ConfigMismatch { detail } => write!(f, "config mismatch: {detail}"),
            CcoError::SessionClosed => write!(f, "stream session is already flushed"),
            CcoError::Format { offset, detail } => {
                write!(f, "format error at byte {offset}: {detail}")
            }
            CcoError::Io { detail } => write!(f, "io error: {detail}"),
        }
    }
}

impl std::error::Error for CcoError {}

impl From<std::io::Error> for CcoError {
    fn from(err: std::io::Error) -> Self {
        CcoError::Io {
            detail: err.to_string(),
        }
    }
}
