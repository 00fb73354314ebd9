use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the matching pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A coordinate or patch fell outside its parent image.
    #[error("{what} out of bounds: {value} exceeds limit {limit}")]
    OutOfBounds {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    /// Incompatible image or tensor dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A scalar argument violated its contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite value where finite data is required.
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    /// Malformed file contents.
    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    /// I/O failure, tagged with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training aborted with a diagnostic snapshot.
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: u32, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }
}
