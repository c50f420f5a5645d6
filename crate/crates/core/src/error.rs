//! Crate-wide error type.

/// Errors produced by the numeric core and the edit pipeline.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A scalar argument is outside its valid range.
    #[error("{op}: {detail}")]
    Parameter { op: &'static str, detail: String },

    /// An edit request or run configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An underlying read or write failed. The message is kept instead of
    /// the `std::io::Error` itself so this type stays `Clone`.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn parameter(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
