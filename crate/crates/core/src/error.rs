use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("patch center ({0}, {1}) outside the admissible range")]
    CenterOutOfRange(usize, usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training of head {head} diverged: {reason}")]
    Diverged { head: usize, reason: String },

    #[error("no positive examples available for head {0}")]
    NoPositives(usize),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shearlet system fingerprint mismatch (model {model}, system {system})")]
    FingerprintMismatch { model: String, system: String },

    #[error("phantom sampling gave up after {0} attempts")]
    SamplingFailed(usize),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
