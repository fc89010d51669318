use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("mask has no valid pixels")]
    EmptyMask,

    #[error("non-finite value {value} at pixel (x={x}, y={y}, c={c})")]
    NonFinite {
        x: usize,
        y: usize,
        c: usize,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nonpositive depth {value} at pixel index {pixel} ({which})")]
    NonPositiveDepth {
        which: &'static str,
        pixel: usize,
        value: f64,
    },

    #[error("too few pixels: need at least {needed}, got {got}")]
    TooFewPixels { needed: usize, got: usize },

    #[error("series are not aligned: {0}")]
    Misaligned(String),

    #[error("AUROC undefined: every pixel is {0}")]
    DegenerateLabels(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("manifest entry {entry}: field `{field}`: {message}")]
    ManifestEntry {
        entry: usize,
        field: &'static str,
        message: String,
    },

    #[error("manifest: field `{field}`: {message}")]
    Manifest {
        field: &'static str,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True when the error stems from user input (bad files, arguments)
    /// rather than an internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Misaligned(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
