use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("cannot read {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported audio codec: {codec}")]
    UnsupportedCodec { codec: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient frames: need more than {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("lattice coordinate overflow: {0}")]
    Overflow(String),

    #[error("speaker {speaker:?}: {source}")]
    Speaker {
        speaker: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn speaker(speaker: &str, source: Error) -> Self {
        Error::Speaker {
            speaker: speaker.to_string(),
            source: Box::new(source),
        }
    }
}
