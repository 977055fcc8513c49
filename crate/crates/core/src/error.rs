use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed an out-of-range index, mismatched shape or invalid value.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A loss, gradient or value became non-finite.
    #[error("non-finite {what} at iteration {iteration}")]
    Numeric { what: &'static str, iteration: u64 },

    /// Malformed binary or text input.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
