use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line count mismatch: {left} has {left_count} lines but {right} has {right_count}")]
    LineCountMismatch {
        left: PathBuf,
        left_count: usize,
        right: PathBuf,
        right_count: usize,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("target of length {target_len} cannot be aligned to {frames} frames (needs at least {required})")]
    Infeasible {
        frames: usize,
        target_len: usize,
        required: usize,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("missing score for example {0}")]
    MissingScore(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
