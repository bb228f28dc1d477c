use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training data error: {0}")]
    TrainingData(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("truncated file: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("{0} trailing bytes after end of data")]
    TrailingBytes(usize),

    #[error("weights do not match spec: {0}")]
    ShapeMismatch(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unsupported pixel depth: maxval {0} (only 1..=255 is supported)")]
    UnsupportedDepth(u32),

    #[error("pixel value {value} out of range at index {index}")]
    ValueOverflow { index: usize, value: f64 },

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
