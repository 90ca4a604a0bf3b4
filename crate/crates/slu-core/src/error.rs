//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: invalid JSON: {msg}")]
    Json { line: usize, msg: String },

    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("duplicate example (id={id}, locale={locale})")]
    DuplicateExample { id: u64, locale: String },

    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("target vocab size {target} is smaller than the {chars} distinct characters in the corpus")]
    VocabTooSmall { target: usize, chars: usize },

    #[error("character {ch:?} is not covered by any piece and the UNK policy is disabled")]
    UncoveredChar { ch: char },

    #[error("invalid subword model: {0}")]
    BadSubwordModel(String),

    #[error("malformed brackets in {text:?}: {msg}")]
    MalformedBrackets { text: String, msg: String },

    #[error("encoded sequence of {len} pieces exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label index {index} out of range for inventory of size {size}")]
    LabelOutOfRange { index: usize, size: usize },

    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("misaligned evaluation inputs: {0}")]
    Misaligned(String),

    #[error("metric undefined on an empty dataset")]
    EmptyDataset,

    #[error("{0}")]
    Invalid(String),
}
