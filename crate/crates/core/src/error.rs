use thiserror::Error;

/// Errors raised by the library.
///
/// Checkpoint corruption is split into distinct variants so callers can tell
/// a bad magic from a short read or a header/payload disagreement.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("checkpoint magic mismatch: expected \"FLWF\", found {found:?}")]
    MagicMismatch { found: [u8; 4] },

    #[error("checkpoint format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("checkpoint shape/length mismatch: header declares {declared} values, payload holds {actual}")]
    PayloadLengthMismatch { declared: usize, actual: usize },

    #[error("checkpoint header is not valid JSON: {0}")]
    HeaderParse(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
