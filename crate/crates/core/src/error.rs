use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty vector")]
    EmptyVector,

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("non-finite function value at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid ranking: {0}")]
    InvalidRanking(String),

    #[error("oracle limited to K ≤ {max} (got K = {k})")]
    OracleTooLarge { k: usize, max: usize },

    #[error("at least one dispreferred candidate is required")]
    NoNegatives,

    #[error("cold-start context unsupported: empty history")]
    ColdStart,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown loss kind `{0}` (expected one of sft, bpr, softmax, dpo, sdpo)")]
    UnknownLossKind(String),

    #[error("user {user}: cannot draw {requested} negatives from {available} non-interacted items")]
    InsufficientNegatives {
        user: u64,
        requested: usize,
        available: usize,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no interactions")]
    EmptyInput(PathBuf),

    #[error("malformed binary file: {0}")]
    Format(String),

    #[error("reference policy required for loss `{0}`")]
    MissingReference(String),

    #[error("non-finite loss at sample {sample} (user {user}, epoch {epoch})")]
    NonFiniteLoss { sample: usize, user: u64, epoch: usize },

    #[error("empty test set")]
    EmptyTestSet,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
