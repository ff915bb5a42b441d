use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ShapeError: {0}")]
    Shape(String),

    #[error("KTooLarge: k = {k} but the cloud only has {n} points (k must be < N)")]
    KTooLarge { k: usize, n: usize },

    #[error("InvalidCloud: {0}")]
    InvalidCloud(String),

    #[error("UnequalSizes: source has {source_len} points, target has {target_len}")]
    UnequalSizes { source_len: usize, target_len: usize },

    #[error("UnrecordedNode: node {0} is not on this tape")]
    UnrecordedNode(usize),

    #[error("NonFinite: {0}")]
    NonFinite(String),

    #[error("BadMagic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("TruncatedFile {path}: unexpected end of data at byte offset {offset}")]
    TruncatedFile { path: PathBuf, offset: u64 },

    #[error("NonFiniteValue in {path} at {location}")]
    NonFiniteValue { path: PathBuf, location: String },

    #[error("UnsupportedVersion in {path}: {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("Parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("Config error: {0}")]
    Config(String),

    #[error("Weights error: {0}")]
    Weights(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
