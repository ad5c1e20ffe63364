use thiserror::Error;

/// Errors produced by the depth-refinement library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("no valid pixels: {0}")]
    EmptyOverlap(String),

    #[error("non-finite gradient at indices {0:?}")]
    NonFiniteGradient(Vec<usize>),

    #[error("optimization diverged at iteration {iteration}: loss {loss} exceeds {limit}")]
    Diverged { iteration: usize, loss: f64, limit: f64 },

    #[error("unknown camera id {0}")]
    UnknownCamera(usize),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }
}
