use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    /// A binary or text artifact failed validation.
    #[error("malformed {format} data at byte offset {offset}: {message}")]
    Format {
        format: &'static str,
        offset: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("level mismatch: {left} vs {right}")]
    LevelMismatch { left: u32, right: u32 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("requested rank {requested} exceeds achievable rank {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("{malformed} of {lines} lines malformed (more than 1%) in {path}")]
    TooManyMalformed {
        path: PathBuf,
        malformed: usize,
        lines: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("window id {0} not found in the supplied shards")]
    UnresolvedWindow(u64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            offset,
            message: message.into(),
        }
    }
}
