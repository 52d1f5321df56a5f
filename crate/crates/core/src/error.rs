use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Record {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("lexicon: {0}")]
    Lexicon(String),

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("model: {0}")]
    Model(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("probe: {0}")]
    Probe(String),

    #[error("stats: {0}")]
    Stats(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing stage output: {stage} (expected {path})")]
    MissingStage { stage: String, path: PathBuf },

    #[error("stale stage output {path}: written by config {found}, current config is {expected}")]
    StaleStage {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingStage { .. } | Error::StaleStage { .. } => 3,
            Error::Numerical(_) => 4,
            _ => 1,
        }
    }
}
