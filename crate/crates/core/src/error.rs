use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown score {0}")]
    UnknownScore(f64),

    #[error("invalid class index {index} (scale has {levels} levels)")]
    InvalidClass { index: usize, levels: usize },

    #[error("invalid scale: {0}")]
    InvalidScale(String),

    #[error("{path}:{line}: malformed manifest record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing referenced file {0}")]
    MissingFile(PathBuf),

    #[error("corrupt tensor header: {0}")]
    CorruptHeader(String),

    #[error("truncated tensor: header declares {expected} values, payload holds {found}")]
    TruncatedTensor { expected: usize, found: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("all rows masked in {0}")]
    AllMasked(&'static str),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing label for aspect {0} on instance {1}")]
    MissingLabel(String, String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
