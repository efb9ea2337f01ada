use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("geotransform mismatch: {0}")]
    TransformMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("fit rejected: {0}")]
    FitRejected(String),

    #[error("stage '{stage}' failed for building {building}: {source}")]
    Stage {
        stage: String,
        building: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str, building: u32) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            building,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
