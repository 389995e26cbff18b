use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad stream format: {0}")]
    Format(String),

    #[error("bad magic bytes {found:02x?} (expected \"QTT1\")")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported stream version {0}")]
    BadVersion(u16),

    #[error("truncated stream: {0}")]
    Truncated(String),

    #[error("timestamp regression at record {position}: {previous} ps followed by {current} ps")]
    Unsorted {
        position: u64,
        previous: u64,
        current: u64,
    },

    #[error("incompatible stream headers: {0}")]
    IncompatibleHeaders(String),

    #[error("timestamp range overflow: {0}")]
    TimestampOverflow(String),

    #[error("correlation buffer holds {needed} events, cap is {cap}")]
    BufferCap { needed: usize, cap: usize },

    #[error("tomography dataset: {0}")]
    Dataset(String),

    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
