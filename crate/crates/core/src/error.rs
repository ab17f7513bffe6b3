use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, dimensions, or parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed binary file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A non-finite loss or gradient during optimization.
    #[error("training error at batch {batch}: {message}")]
    Training { batch: u64, message: String },

    /// The adaptive solver could not satisfy its tolerance.
    #[error("solver diverged at s = {coord}: {message}")]
    Divergence { coord: f64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
