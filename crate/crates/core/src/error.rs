//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("{segment} too long: {len} tokens exceeds limit {limit}")]
    SequenceTooLong {
        segment: &'static str,
        len: usize,
        limit: usize,
    },

    #[error("expected {expected} in-context examples, got {got}")]
    ExampleCountMismatch { expected: usize, got: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("token id {id} out of range for vocab of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceOverflow { len: usize, max: usize },

    #[error("sequence has no embedding token")]
    MissingEmbToken,

    #[error("no item in batch has a non-empty thought span")]
    EmptyThoughtSpans,

    #[error("no candidate documents for contrastive loss")]
    NoCandidates,

    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),

    #[error("loss is not finite at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("greedy decoding requires k = 1, got k = {0}")]
    GreedyNeedsSingleSample(usize),

    #[error("layer index {layer} out of range for model with {n_layers} layers")]
    InvalidLayer { layer: usize, n_layers: usize },

    #[error("duplicate document id {0}")]
    DuplicateDocId(String),

    #[error("vector dimension {got} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("store is empty")]
    EmptyStore,

    #[error("corrupt {kind} file {path}: {reason}")]
    CorruptFile {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("unsupported {kind} file version {version} in {path}")]
    VersionMismatch {
        kind: &'static str,
        version: u32,
        path: PathBuf,
    },

    #[error("committee member {member} misconfigured: {reason}")]
    MemberMisconfigured { member: String, reason: String },

    #[error("generator error for query {query_id}: {reason}")]
    GeneratorFailed { query_id: String, reason: String },

    #[error("need {requested} example pairs but only {available} are available")]
    InsufficientPairs {
        requested: usize,
        available: usize,
    },

    #[error("query {0} is empty after tokenization")]
    EmptyQuery(String),

    #[error("query sets differ: {0}")]
    QuerySetMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown document id {0}")]
    UnknownDocId(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        CoreError::Parse {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
