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

    #[error("wave file {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: need at least {needed} frames, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("bad container format: {0}")]
    Format(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (utterances {utterances:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        utterances: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
