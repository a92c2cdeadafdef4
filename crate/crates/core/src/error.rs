use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid splat: {0}")]
    InvalidSplat(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("image has zero area")]
    EmptyImage,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at iteration {iteration}; offending splats {splats:?}")]
    NonFiniteLoss { iteration: usize, splats: Vec<usize> },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("slot map inconsistency: {0}")]
    SlotMap(String),

    #[error(transparent)]
    Bitstream(#[from] BitstreamError),

    #[error("clip format: {0}")]
    ClipFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn in_frame(self, frame: usize) -> Self {
        Error::Frame {
            frame,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, looking through frame context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Frame { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Diagnostics produced by the strict bitstream reader.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("bad magic at offset 0: expected \"GSVC\", found {found:02x?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported version {version} at offset 4")]
    UnsupportedVersion { version: u16 },

    #[error("unsupported stream parameter at offset {offset}: {what}")]
    UnsupportedParameter { offset: usize, what: String },

    #[error("truncated stream at offset {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("out-of-range {what} at offset {offset}: {value} (limit {limit})")]
    OutOfRange {
        offset: usize,
        what: &'static str,
        value: u64,
        limit: u64,
    },

    #[error("malformed stream at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
}

impl BitstreamError {
    pub fn offset(&self) -> usize {
        match self {
            BitstreamError::BadMagic { .. } => 0,
            BitstreamError::UnsupportedVersion { .. } => 4,
            BitstreamError::UnsupportedParameter { offset, .. }
            | BitstreamError::Truncated { offset, .. }
            | BitstreamError::OutOfRange { offset, .. }
            | BitstreamError::Malformed { offset, .. } => *offset,
        }
    }
}
