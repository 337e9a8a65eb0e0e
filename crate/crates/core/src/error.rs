use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes that cannot be combined.
    #[error("shape error: {0}")]
    Shape(String),
    /// A call that violates an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),
    /// An out-of-range numeric parameter (e.g. a non-positive std).
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad input data: unknown labels, undecodable images, duplicate rows.
    #[error("data error: {0}")]
    Data(String),
    /// Malformed checkpoint; `offset` is the byte where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Non-finite loss or gradient during training.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool:
    /// 1 usage, 2 data, 3 I/O, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Usage(_) | Error::Parameter(_) | Error::Config(_) => 1,
            Error::Data(_) | Error::Format { .. } => 2,
            Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}
