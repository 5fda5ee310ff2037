use thiserror::Error;

use crate::types::Label;

/// Errors raised by the decoding engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid token index {index} (vocabulary has {size} entries)")]
    InvalidToken { index: usize, size: usize },

    #[error("frame {frame} is beyond the lattice horizon of {limit} frames")]
    Horizon { frame: usize, limit: usize },

    #[error("search state error: {0}")]
    SearchState(String),

    #[error("no finished hypothesis at termination ({} partial hypotheses)", partial.len())]
    EmptyResult { partial: Vec<Vec<Label>> },

    #[error("training error: {0}")]
    Training(String),

    #[error("enumeration of {count} sequences exceeds the guard of {limit}")]
    EnumerationGuard { count: u128, limit: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
