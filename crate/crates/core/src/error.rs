use alloc::string::String;

use crate::llm::LlmError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown item id `{0}`")]
    UnknownItem(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("document `{0}` has no text to chunk")]
    EmptyDocument(String),
    #[error("text embeds to a zero vector: {0:?}")]
    DegenerateEmbedding(String),
    #[error("missing prompt placeholder `{0}`")]
    MissingPlaceholder(String),
    #[error("id sets differ between inputs")]
    IdSetMismatch,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("embedding backend: {0}")]
    Embedder(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}
