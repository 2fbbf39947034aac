use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: expected {expected} bytes, found {actual}")]
    Truncation { expected: usize, actual: usize },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mask {source_index} is empty")]
    EmptyMask { source_index: u32 },

    #[error("unsupported upsampling mode: {0}")]
    UnsupportedMode(String),

    #[error("missing prior: {0}")]
    MissingPrior(&'static str),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("malformed frame at byte {offset}: {reason}")]
    Frame { offset: usize, reason: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("no acknowledgment within {0:?}")]
    AckTimeout(std::time::Duration),

    #[error("server startup failed: {0}")]
    Startup(String),

    #[error("no masks survived filtering")]
    NoMasksSurvived,
}

impl Error {
    /// Stable name used in CLI diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::Format(_) => "FormatError",
            Error::Truncation { .. } => "TruncationError",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::Io(_) => "IoError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Shape(_) => "ShapeError",
            Error::EmptyMask { .. } => "EmptyMaskError",
            Error::UnsupportedMode(_) => "UnsupportedMode",
            Error::MissingPrior(_) => "MissingPrior",
            Error::Encoding(_) => "EncodingError",
            Error::Frame { .. } => "FrameError",
            Error::Transport(_) => "TransportError",
            Error::AckTimeout(_) => "AckTimeout",
            Error::Startup(_) => "StartupError",
            Error::NoMasksSurvived => "NoMasksSurvived",
        }
    }

    pub(crate) fn frame(offset: usize, reason: impl Into<String>) -> Self {
        Error::Frame {
            offset,
            reason: reason.into(),
        }
    }
}
