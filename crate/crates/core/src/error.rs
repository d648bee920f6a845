use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed dataset: {reason} ({path})")]
    MalformedDataset { path: PathBuf, reason: String },

    #[error("checkpoint incompatible: {0}")]
    CheckpointIncompatible(String),

    #[error("training failure: {0}")]
    TrainingFailure(String),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error on {path}: {reason}")]
    Png { path: PathBuf, reason: String },

    #[error("json error on {path}: {reason}")]
    Json { path: PathBuf, reason: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
