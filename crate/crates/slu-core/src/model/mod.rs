//! A small trainable sequence encoder with an intent head and a slot head.
//!
//! Inputs are subword piece-id sequences prefixed with BOS. The intent
//! distribution comes from the BOS position; each word's slot distribution
//! comes from the position of its *first* subword piece, so re-segmenting a
//! word never changes how many slot distributions the model emits — the
//! property that lets two segmentations of one utterance be compared
//! word-by-word.
//!
//! The network is deliberately tiny (embeddings, a few pre-norm residual
//! self-attention blocks, linear heads) and runs entirely in 64-bit floats
//! with hand-written exact backpropagation, verified against central finite
//! differences in the test suite.

mod checkpoint;
mod net;
mod params;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use net::{backward, forward, forward_eval, forward_replay, ForwardCache, HeadGrads, Masks};
pub use params::{init_params, BlockParams, ModelConfig, ModelParams, Tensor};

use crate::error::{CoreError, Result};
use crate::subword::{Segmentation, BOS_ID};

/// An utterance ready for the encoder: piece ids plus the word-to-position
/// map for the slot head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    /// Piece-id sequence; position 0 is always BOS.
    pub piece_ids: Vec<usize>,
    /// For each word, the position of its first piece. Strictly increasing,
    /// starting at 1 (position 0 is BOS and belongs to no word).
    pub first_subword_index: Vec<usize>,
}

impl EncodedInput {
    pub fn word_count(&self) -> usize {
        self.first_subword_index.len()
    }

    /// Sequence length including BOS.
    pub fn len(&self) -> usize {
        self.piece_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.piece_ids.is_empty()
    }
}

/// Concatenate per-word segmentations into an encoder input.
///
/// Emits `[BOS]` followed by each word's pieces in order and records where
/// each word starts. Fails if any word has an empty segmentation or the
/// total length exceeds `l_max`.
pub fn encode_input(word_segments: &[Segmentation], l_max: usize) -> Result<EncodedInput> {
    let mut piece_ids = vec![BOS_ID];
    let mut first_subword_index = Vec::with_capacity(word_segments.len());
    for seg in word_segments {
        if seg.piece_ids.is_empty() {
            return Err(CoreError::Invalid("word with empty segmentation".into()));
        }
        first_subword_index.push(piece_ids.len());
        piece_ids.extend_from_slice(&seg.piece_ids);
    }
    if piece_ids.len() > l_max {
        return Err(CoreError::SequenceTooLong { len: piece_ids.len(), max: l_max });
    }
    Ok(EncodedInput { piece_ids, first_subword_index })
}

/// The model's output distributions for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SluDistributions {
    /// Probability vector over intents.
    pub intent_dist: Vec<f64>,
    /// One probability vector over slot labels per word.
    pub slot_dists: Vec<Vec<f64>>,
}
