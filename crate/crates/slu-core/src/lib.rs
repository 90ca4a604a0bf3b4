//! Joint intent detection and slot filling for multilingual spoken-language
//! understanding, trained with consistency regularization.
//!
//! The crate provides the full desk-scale pipeline:
//!
//! - [`corpus`]: JSONL datasets of word-labelled utterances, label
//!   inventories, and cross-lingual parallel linking.
//! - [`subword`]: a unigram-LM subword segmenter with EM training, Viterbi
//!   decoding, and exact stochastic segmentation sampling.
//! - [`align`]: projection of slot annotations onto translations via
//!   plain-text and bracketed matching.
//! - [`model`]: a small self-attention encoder with intent and slot heads
//!   and exact analytic gradients.
//! - [`objective`]: task losses plus symmetric-KL consistency regularizers
//!   with stop-gradient semantics.
//! - [`augment`]: construction of augmented views (subword re-segmentation,
//!   machine-translation counterparts).
//! - [`trainer`]: the Adam training loop, checkpointing, and logs.
//! - [`metrics`]: span-level slot F1, intent accuracy, and exact-match
//!   accuracy.
//!
//! Everything is 64-bit, single-threaded by default, and deterministic for
//! a fixed seed: training twice with the same config produces bytewise
//! identical checkpoints and logs.

pub mod align;
pub mod augment;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod subword;
pub mod trainer;

pub use error::{CoreError, Result};
