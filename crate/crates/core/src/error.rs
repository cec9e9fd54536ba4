use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty sentence")]
    EmptySentence,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    #[error("BoW vocabulary is empty after filtering (mode {mode})")]
    EmptyBowVocab { mode: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint {expected:#018x}, got {actual:#018x}")]
    VocabHashMismatch { expected: u64, actual: u64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error("no sentences with label {0}")]
    NoSamplesForLabel(u8),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
