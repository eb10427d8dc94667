//! Shared error type for all engine modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {0}: malformed record")]
    MalformedLine(usize),
    #[error("line {0}: no query tokens between markers")]
    EmptyQuery(usize),
    #[error("corpus contains no usable records")]
    EmptyCorpus,
    #[error("not enough classes to build the requested split")]
    TooFewClasses,
    #[error("class {0:?} has too few samples")]
    ClassTooSmall(String),
    #[error("no embedding stored for utterance {0:?}")]
    MissingEmbedding(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend cannot be re-trained")]
    BackendNotTrainable,
    #[error("masked-token loss needs at least one target")]
    EmptyTargets,
    #[error("utterance consists only of stopwords")]
    AllStopwords,
    #[error("contrastive loss needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("need at least {needed} classes, only {available} available")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {0:?} has too few samples for the requested episode")]
    InsufficientSamples(String),
    #[error("zero-norm vector passed to a norm-dividing similarity")]
    ZeroNormVector,
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("confusion matrix has no entries")]
    EmptyConfusion,
    #[error("attention received an all-masked key set")]
    AllMasked,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
