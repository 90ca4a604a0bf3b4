//! Evaluation metrics: intent accuracy, span-level slot micro-F1, and
//! exact-match accuracy.
//!
//! A slot span is a maximal run of one non-`"O"` label; F1 counts a span as
//! matched only when start, end, and type all agree, pooled over the whole
//! dataset (micro-averaging). Exact-match accuracy requires the intent and
//! the entire per-word label sequence to be correct. When neither the gold
//! nor the predicted labeling contains any span, F1 is defined as 1.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{label_runs, Dataset, SlotSpan};
use crate::error::{CoreError, Result};
use crate::model::{encode_input, forward_eval, ModelParams};
use crate::subword::SubwordModel;

/// One utterance's labels, the unit the metric functions compare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledUtterance {
    pub intent: String,
    pub slots: Vec<String>,
}

/// Aggregate counts backing a [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsCounts {
    /// Utterances actually scored.
    pub utterances: usize,
    pub gold_spans: usize,
    pub predicted_spans: usize,
    pub matched_spans: usize,
    /// Utterances excluded because their encoding exceeded the model's
    /// maximum sequence length.
    pub skipped: usize,
}

/// The three evaluation metrics plus their underlying counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub intent_acc: f64,
    pub slot_f1: f64,
    pub ema: f64,
    pub counts: MetricsCounts,
}

impl MetricsReport {
    /// Report JSON with metric values rounded to six decimals (full
    /// precision stays in-process).
    pub fn to_json_string(&self) -> String {
        let rounded = MetricsReport {
            intent_acc: round6(self.intent_acc),
            slot_f1: round6(self.slot_f1),
            ema: round6(self.ema),
            counts: self.counts,
        };
        serde_json::to_string(&rounded).expect("report serialization cannot fail")
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Slot spans of a label sequence as a set of `(start, end, type)`.
pub fn extract_spans(labels: &[String]) -> BTreeSet<SlotSpan> {
    label_runs(labels).into_iter().collect()
}

fn check_aligned(predictions: usize, golds: usize) -> Result<()> {
    if predictions != golds {
        return Err(CoreError::Misaligned(format!(
            "{predictions} predictions for {golds} gold utterances"
        )));
    }
    if golds == 0 {
        return Err(CoreError::EmptyDataset);
    }
    Ok(())
}

/// Fraction of utterances with the correct intent.
pub fn intent_accuracy(predictions: &[LabeledUtterance], golds: &[LabeledUtterance]) -> Result<f64> {
    check_aligned(predictions.len(), golds.len())?;
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.intent == g.intent)
        .count();
    Ok(correct as f64 / golds.len() as f64)
}

/// Micro-averaged span F1 over the whole dataset: `2m / (g + p)` with
/// exact-boundary matching, or 1 when both span totals are zero.
pub fn slot_micro_f1(predictions: &[LabeledUtterance], golds: &[LabeledUtterance]) -> Result<f64> {
    check_aligned(predictions.len(), golds.len())?;
    let (gold, predicted, matched) = span_counts(predictions, golds)?;
    Ok(f1_from_counts(gold, predicted, matched))
}

fn span_counts(
    predictions: &[LabeledUtterance],
    golds: &[LabeledUtterance],
) -> Result<(usize, usize, usize)> {
    let mut gold_total = 0;
    let mut pred_total = 0;
    let mut matched = 0;
    for (i, (p, g)) in predictions.iter().zip(golds).enumerate() {
        if p.slots.len() != g.slots.len() {
            return Err(CoreError::Misaligned(format!(
                "utterance {i}: {} predicted labels for {} words",
                p.slots.len(),
                g.slots.len()
            )));
        }
        let pred_spans = extract_spans(&p.slots);
        let gold_spans = extract_spans(&g.slots);
        matched += pred_spans.intersection(&gold_spans).count();
        gold_total += gold_spans.len();
        pred_total += pred_spans.len();
    }
    Ok((gold_total, pred_total, matched))
}

fn f1_from_counts(gold: usize, predicted: usize, matched: usize) -> f64 {
    if gold + predicted == 0 {
        1.0
    } else {
        2.0 * matched as f64 / (gold + predicted) as f64
    }
}

/// Fraction of utterances with the correct intent *and* a fully correct
/// slot sequence.
pub fn exact_match_accuracy(
    predictions: &[LabeledUtterance],
    golds: &[LabeledUtterance],
) -> Result<f64> {
    check_aligned(predictions.len(), golds.len())?;
    for (i, (p, g)) in predictions.iter().zip(golds).enumerate() {
        if p.slots.len() != g.slots.len() {
            return Err(CoreError::Misaligned(format!(
                "utterance {i}: {} predicted labels for {} words",
                p.slots.len(),
                g.slots.len()
            )));
        }
    }
    let exact = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.intent == g.intent && p.slots == g.slots)
        .count();
    Ok(exact as f64 / golds.len() as f64)
}

/// Argmax decode for one utterance: Viterbi-segment each word, run an
/// eval-mode forward, and pick the highest-probability intent and per-word
/// slot labels. This is the single decode path shared by dataset evaluation
/// and file prediction.
pub fn predict_labels(
    params: &ModelParams,
    subword: &SubwordModel,
    words: &[String],
    intents: &[String],
    slots: &[String],
) -> Result<LabeledUtterance> {
    let segments = words
        .iter()
        .map(|w| subword.segment(w))
        .collect::<Result<Vec<_>>>()?;
    let input = encode_input(&segments, params.config.l_max)?;
    let (dists, _) = forward_eval(params, &input)?;
    let intent = intents
        .get(argmax(&dists.intent_dist))
        .ok_or_else(|| CoreError::Invalid("intent inventory smaller than model head".into()))?
        .clone();
    let mut labels = Vec::with_capacity(words.len());
    for dist in &dists.slot_dists {
        let label = slots
            .get(argmax(dist))
            .ok_or_else(|| CoreError::Invalid("slot inventory smaller than model head".into()))?;
        labels.push(label.clone());
    }
    Ok(LabeledUtterance { intent, slots: labels })
}

/// Index of the largest value; earliest wins ties, so decoding is
/// deterministic.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decode every example of `data` and score it against the gold labels.
///
/// Examples whose encoding exceeds the model's maximum sequence length are
/// excluded and reported in `counts.skipped`; every other error aborts.
pub fn evaluate(
    params: &ModelParams,
    subword: &SubwordModel,
    data: &Dataset,
    intents: &[String],
    slots: &[String],
) -> Result<MetricsReport> {
    let mut predictions = Vec::with_capacity(data.examples.len());
    let mut golds = Vec::with_capacity(data.examples.len());
    let mut skipped = 0usize;
    for example in &data.examples {
        match predict_labels(params, subword, &example.words, intents, slots) {
            Ok(pred) => {
                predictions.push(pred);
                golds.push(LabeledUtterance {
                    intent: example.intent.clone(),
                    slots: example.slots.clone(),
                });
            }
            Err(CoreError::SequenceTooLong { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let intent_acc = intent_accuracy(&predictions, &golds)?;
    let (gold_spans, predicted_spans, matched_spans) = span_counts(&predictions, &golds)?;
    let ema = exact_match_accuracy(&predictions, &golds)?;
    Ok(MetricsReport {
        intent_acc,
        slot_f1: f1_from_counts(gold_spans, predicted_spans, matched_spans),
        ema,
        counts: MetricsCounts {
            utterances: golds.len(),
            gold_spans,
            predicted_spans,
            matched_spans,
            skipped,
        },
    })
}
