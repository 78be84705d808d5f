use std::path::PathBuf;

/// Errors surfaced by ril-core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(char),
    #[error("non-finite gradient entry at flat index {index}")]
    NonFiniteGradient { index: usize },
    #[error("no cached teacher responses for question {0}")]
    MissingTeacherResponses(u64),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("malformed judge verdict: {0:?}")]
    MalformedVerdict(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed record in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
