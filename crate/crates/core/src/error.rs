use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A vector file could not be decoded.
    #[error("ingestion error in {path} at byte {offset}: {reason}")]
    Ingest {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    /// A search-log line could not be parsed.
    #[error("malformed search log line {line}: {reason}")]
    LogParse { line: usize, reason: String },

    /// An index file failed validation (bad magic, version, checksum or layout).
    #[error("corrupt index file: {0}")]
    CorruptIndex(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
