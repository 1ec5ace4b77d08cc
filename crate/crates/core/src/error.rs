use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding one of the binary or text formats.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed input: {0}")]
    Malformed(String),
}

impl DecodeError {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        DecodeError::Malformed(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a structural invariant (non-finite values,
    /// mismatched row counts, non-orthonormal rotation).
    #[error("validation error: {0}")]
    Validation(String),
    /// Parameters are inconsistent with each other.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("empty build: no traversal covers anchor at arclength {anchor_arclength} m")]
    EmptyBuild { anchor_arclength: f64 },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
    #[error(transparent)]
    DecodeBytes(#[from] DecodeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn decode_at(path: impl Into<PathBuf>, source: DecodeError) -> Self {
        Error::Decode {
            path: path.into(),
            source,
        }
    }

    /// The decode failure behind this error, if any.
    pub fn decode_error(&self) -> Option<&DecodeError> {
        match self {
            Error::Decode { source, .. } | Error::DecodeBytes(source) => Some(source),
            _ => None,
        }
    }
}
