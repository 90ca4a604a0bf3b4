//! Augmented training views and strategy sampling.
//!
//! Each training example can be paired with an augmented view of itself,
//! drawn per step from a configured distribution over two strategies:
//!
//! - *Subword sampling*: the same words re-segmented stochastically. Word
//!   count is preserved and the labels carry over, so both the intent and
//!   the per-word slot distributions can be regularized against the
//!   original view.
//! - *Machine translation*: the same utterance in another language, found
//!   by shared example id — either a full counterpart example or an
//!   intent-only translation. Word counts generally differ across
//!   languages, so only the intent distributions are comparable;
//!   `align_slots` is false.
//!
//! The original view always uses the canonical Viterbi segmentation; the
//! sampled or translated view supplies the variation.

use rand::{Rng, RngExt as _};
use serde::{Deserialize, Serialize};

use crate::align::{IntentOnlyRecord, Tokenizer};
use crate::corpus::{Example, ParallelIndex};
use crate::error::{CoreError, Result};
use crate::model::{encode_input, EncodedInput};
use crate::objective::AugmentKind;
use crate::subword::SubwordModel;

/// One augmented view of a training example.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub kind: AugmentKind,
    pub encoded: EncodedInput,
    /// Intent label of the view (translations share the source's intent by
    /// construction of the parallel data).
    pub intent: String,
    /// Per-word slot labels, present when the view is slot-labeled: always
    /// for subword sampling, for translations only when the counterpart is
    /// itself a labeled example.
    pub slots: Option<Vec<String>>,
    /// Whether per-word slot distributions line up with the original's.
    /// True exactly for subword-sampling views; gates slot-level
    /// consistency.
    pub align_slots: bool,
}

/// Probabilities of the two augmentation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyDistribution {
    pub machine_translation: f64,
    pub subword_sampling: f64,
}

impl StrategyDistribution {
    pub fn new(machine_translation: f64, subword_sampling: f64) -> Result<Self> {
        let dist = StrategyDistribution { machine_translation, subword_sampling };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("machine_translation", self.machine_translation),
            ("subword_sampling", self.subword_sampling),
        ] {
            if !p.is_finite() || p < 0.0 {
                return Err(CoreError::BadConfig(format!(
                    "strategy probability {name} must be finite and non-negative, got {p}"
                )));
            }
        }
        let sum = self.machine_translation + self.subword_sampling;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CoreError::BadConfig(format!(
                "strategy probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl Default for StrategyDistribution {
    fn default() -> Self {
        StrategyDistribution { machine_translation: 0.5, subword_sampling: 0.5 }
    }
}

/// Draw an augmentation strategy; machine translation falls back to subword
/// sampling when the example has no translation counterpart.
pub fn sample_strategy<R: Rng + ?Sized>(
    dist: &StrategyDistribution,
    mt_available: bool,
    rng: &mut R,
) -> AugmentKind {
    let drew_mt = rng.random::<f64>() < dist.machine_translation;
    if drew_mt && mt_available {
        AugmentKind::MachineTranslation
    } else {
        AugmentKind::SubwordSampling
    }
}

/// Encode words with their canonical Viterbi segmentations. This is the
/// original (un-augmented) view of any utterance.
pub fn encode_words(words: &[String], model: &SubwordModel, l_max: usize) -> Result<EncodedInput> {
    let segments = words
        .iter()
        .map(|w| model.segment(w))
        .collect::<Result<Vec<_>>>()?;
    encode_input(&segments, l_max)
}

/// Build a subword-sampling view: every word independently re-segmented by
/// a draw from the alpha-scaled segmentation distribution. Labels carry
/// over unchanged because the words do.
pub fn subword_augment<R: Rng + ?Sized>(
    example: &Example,
    model: &SubwordModel,
    alpha: f64,
    l_max: usize,
    rng: &mut R,
) -> Result<AugmentedView> {
    let segments = example
        .words
        .iter()
        .map(|w| model.sample(w, alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    let encoded = encode_input(&segments, l_max)?;
    Ok(AugmentedView {
        kind: AugmentKind::SubwordSampling,
        encoded,
        intent: example.intent.clone(),
        slots: Some(example.slots.clone()),
        align_slots: true,
    })
}

/// Build a machine-translation view by picking uniformly among the
/// example's cross-locale counterparts: labeled examples sharing its id in
/// other locales, plus intent-only translations of it.
///
/// Returns `Ok(None)` when the example has no usable counterpart — none
/// exists, or the chosen one does not fit the model's maximum sequence
/// length — so the caller can fall back to subword sampling.
pub fn mt_augment<R: Rng + ?Sized>(
    example: &Example,
    parallel: &ParallelIndex,
    intent_only_pool: &[IntentOnlyRecord],
    model: &SubwordModel,
    l_max: usize,
    rng: &mut R,
) -> Result<Option<AugmentedView>> {
    let counterparts = parallel.counterparts(example.id, &example.locale);
    let intent_only: Vec<&IntentOnlyRecord> = intent_only_pool
        .iter()
        .filter(|r| r.id == example.id && r.locale != example.locale)
        .collect();
    let n = counterparts.len() + intent_only.len();
    if n == 0 {
        return Ok(None);
    }
    let choice = rng.random_range(0..n);
    let (words, intent, slots) = if choice < counterparts.len() {
        let ex = counterparts[choice];
        (ex.words.clone(), ex.intent.clone(), Some(ex.slots.clone()))
    } else {
        let rec = intent_only[choice - counterparts.len()];
        let words = tokenize_text(&rec.text);
        if words.is_empty() {
            return Ok(None);
        }
        (words, rec.intent.clone(), None)
    };
    match encode_words(&words, model, l_max) {
        Ok(encoded) => Ok(Some(AugmentedView {
            kind: AugmentKind::MachineTranslation,
            encoded,
            intent,
            slots,
            align_slots: false,
        })),
        Err(CoreError::SequenceTooLong { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Split raw translation text into words: whitespace tokens when the text
/// has ASCII spaces, one word per character otherwise.
pub fn tokenize_text(text: &str) -> Vec<String> {
    match Tokenizer::for_text(text) {
        Tokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        Tokenizer::PerCharacter => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
    }
}

/// Whether any machine-translation counterpart exists for this example
/// (before length filtering), used to decide strategy fallback.
pub fn mt_available(
    example: &Example,
    parallel: &ParallelIndex,
    intent_only_pool: &[IntentOnlyRecord],
) -> bool {
    !parallel.counterparts(example.id, &example.locale).is_empty()
        || intent_only_pool
            .iter()
            .any(|r| r.id == example.id && r.locale != example.locale)
}
