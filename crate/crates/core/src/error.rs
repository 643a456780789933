use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the augmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no interactions")]
    NoInteractions,

    #[error("{dropped} of {total} interactions reference unknown items; are the interaction and item files mismatched?")]
    UnresolvedInteractions { dropped: usize, total: usize },

    #[error("invalid item: {0}")]
    InvalidItem(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty context")]
    EmptyContext,

    #[error("k = {k} exceeds the {available} rankable items")]
    TooManyRequested { k: usize, available: usize },

    #[error("model direction mismatch: expected {expected}, got {actual}")]
    Direction {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("llm transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing artifact {path}: run stage `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("stage `{stage}` failed (manifest {manifest}): {message}")]
    Stage {
        stage: String,
        manifest: PathBuf,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
