use std::io;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("protocol error (code {code}): {message}")]
    Protocol { code: u16, message: String },

    #[error("refused: {0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn protocol(code: u16, msg: impl Into<String>) -> Self {
        Error::Protocol {
            code,
            message: msg.into(),
        }
    }
}
