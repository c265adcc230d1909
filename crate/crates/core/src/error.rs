use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file did not match its declared format; `field` names the offending part.
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },
    #[error("value domain error: {0}")]
    Domain(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("segment consistency error: {0}")]
    Consistency(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at step {step}: {message}")]
    Divergence { step: u64, message: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }
}
