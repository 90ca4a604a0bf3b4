//! Task losses and consistency regularizers.
//!
//! The training objective is
//!
//! ```text
//! L = L_I + lambda1 * L_S + lambda2 * R_I + lambda3 * R_S
//! ```
//!
//! where `L_I`/`L_S` are intent and slot cross-entropies on the original
//! view (averaged with the augmented view's when it carries labels), and
//! `R_I`/`R_S` are symmetric KL divergences between the two views'
//! distributions. The regularizers use stop-gradient semantics: each view is
//! pulled toward the other's distribution *treated as a constant*, so the
//! gradient on the logits of side Q from `KL(sg(P) || Q)` is `q - p`, and
//! symmetrically for P. Slot-level consistency applies only to
//! subword-sampling views, where both views have the same word count;
//! machine-translation views compare intent distributions only.
//!
//! All functions return exact analytic gradients on the logits alongside
//! the scalar values.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{HeadGrads, SluDistributions};

/// Floor applied to probabilities inside logarithms, preventing infinities
/// from underflowing distributions.
pub const PROB_FLOOR: f64 = 1e-12;

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Slot-loss coefficient.
    pub lambda1: f64,
    /// Intent-consistency weight.
    pub lambda2: f64,
    /// Slot-consistency weight.
    pub lambda3: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::BadConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which kind of augmented view a step used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    SubwordSampling,
    MachineTranslation,
}

/// The per-term decomposition of one example's objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_intent: f64,
    pub l_slot: f64,
    pub r_intent: f64,
    pub r_slot: f64,
    /// `l_intent + lambda1*l_slot + lambda2*r_intent + lambda3*r_slot`.
    pub total: f64,
    /// The intent-consistency term contributed (view present, lambda2 > 0).
    pub r_intent_active: bool,
    /// The slot-consistency term contributed (subword view, lambda3 > 0).
    pub r_slot_active: bool,
    /// Task losses included the augmented view's labels.
    pub augmented_task_loss: bool,
}

/// An augmented view's distributions plus whatever labels it carries, as
/// consumed by [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct AugmentedDists<'a> {
    pub dists: &'a SluDistributions,
    pub kind: AugmentKind,
    /// Intent label, when the view is labeled and the caller wants task loss
    /// on it.
    pub intent_label: Option<usize>,
    /// Per-word slot labels, when the view is slot-aligned.
    pub slot_labels: Option<&'a [usize]>,
}

/// Value and gradients of [`total_loss`].
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    /// Gradients on the original view's logits (weights folded in).
    pub original_grads: HeadGrads,
    /// Gradients on the augmented view's logits, when one was given.
    pub augmented_grads: Option<HeadGrads>,
}

/// Cross-entropy of a softmax distribution against a gold label.
///
/// Returns `-log dist[label]` and the gradient on the logits,
/// `dist - onehot(label)`.
pub fn cross_entropy(dist: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= dist.len() {
        return Err(CoreError::LabelOutOfRange { index: label, size: dist.len() });
    }
    let loss = -dist[label].max(PROB_FLOOR).ln();
    let mut grad = dist.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `KL(p || q) = sum_k p_k (log p_k - log q_k)`, with `0 log 0 := 0` and
/// `q_k` floored at [`PROB_FLOOR`] inside the logarithm.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "kl_div over lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            total += pk * (pk.ln() - qk.max(PROB_FLOOR).ln());
        }
    }
    Ok(total)
}

/// Symmetric KL with stop-gradient semantics.
///
/// Value: `KL(p || q) + KL(q || p)`. Gradients on the underlying logits
/// treat the *other* side's distribution as a constant target:
/// `grad_u_p = p - q` (from `KL(sg(q) || p)`) and `grad_u_q = q - p` (from
/// `KL(sg(p) || q)`). The two gradients always sum to zero.
pub fn symmetric_kl_stopgrad(p: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let value = kl_div(p, q)? + kl_div(q, p)?;
    let grad_u_p: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
    let grad_u_q: Vec<f64> = grad_u_p.iter().map(|g| -g).collect();
    Ok((value, grad_u_p, grad_u_q))
}

/// The combined objective for one example.
///
/// `L_I` and `L_S` are computed on the original view; when the augmented
/// view carries an intent label, `L_I` becomes the average of the two
/// views' intent cross-entropies (likewise `L_S` when it carries slot
/// labels). `R_I` applies whenever an augmented view exists; `R_S` applies
/// only to subword-sampling views, as the per-word mean of symmetric KL
/// between slot distributions. Slot losses are per-word means, keeping the
/// coefficients comparable across utterance lengths.
pub fn total_loss(
    original: &SluDistributions,
    intent_label: usize,
    slot_labels: &[usize],
    augmented: Option<AugmentedDists<'_>>,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    weights.validate()?;
    let word_count = original.slot_dists.len();
    if slot_labels.len() != word_count {
        return Err(CoreError::Misaligned(format!(
            "{} slot labels for {} words",
            slot_labels.len(),
            word_count
        )));
    }

    let mut original_grads = HeadGrads {
        intent_logits: vec![0.0; original.intent_dist.len()],
        slot_logits: original.slot_dists.iter().map(|d| vec![0.0; d.len()]).collect(),
    };
    let mut augmented_grads = augmented.map(|aug| HeadGrads {
        intent_logits: vec![0.0; aug.dists.intent_dist.len()],
        slot_logits: aug.dists.slot_dists.iter().map(|d| vec![0.0; d.len()]).collect(),
    });

    // Intent task loss, averaged with the augmented view's when labeled.
    let (ce_orig, g_orig) = cross_entropy(&original.intent_dist, intent_label)?;
    let aug_intent = match augmented {
        Some(aug) => match aug.intent_label {
            Some(label) => Some(cross_entropy(&aug.dists.intent_dist, label)?),
            None => None,
        },
        None => None,
    };
    let intent_weight = if aug_intent.is_some() { 0.5 } else { 1.0 };
    let mut l_intent = intent_weight * ce_orig;
    axpy(&mut original_grads.intent_logits, intent_weight, &g_orig);
    if let Some((ce_aug, g_aug)) = &aug_intent {
        l_intent += 0.5 * ce_aug;
        axpy(&mut augmented_grads.as_mut().unwrap().intent_logits, 0.5, g_aug);
    }

    // Slot task loss: per-word mean on the original view, averaged with the
    // augmented view's (over its own word count) when it is slot-aligned.
    let aug_slots = match augmented {
        Some(aug) => match aug.slot_labels {
            Some(labels) => {
                if labels.len() != aug.dists.slot_dists.len() {
                    return Err(CoreError::Misaligned(format!(
                        "augmented view has {} slot labels for {} words",
                        labels.len(),
                        aug.dists.slot_dists.len()
                    )));
                }
                Some(labels)
            }
            None => None,
        },
        None => None,
    };
    let slot_weight = if aug_slots.is_some() { 0.5 } else { 1.0 };
    let mut l_slot = 0.0;
    if word_count > 0 {
        let per_word = 1.0 / word_count as f64;
        for (w, (&label, dist)) in slot_labels.iter().zip(&original.slot_dists).enumerate() {
            let (ce, g) = cross_entropy(dist, label)?;
            l_slot += slot_weight * per_word * ce;
            axpy(
                &mut original_grads.slot_logits[w],
                weights.lambda1 * slot_weight * per_word,
                &g,
            );
        }
    }
    if let (Some(labels), Some(aug)) = (aug_slots, augmented) {
        let aug_wc = aug.dists.slot_dists.len();
        if aug_wc > 0 {
            let per_word = 1.0 / aug_wc as f64;
            let grads = augmented_grads.as_mut().unwrap();
            for (w, (&label, dist)) in labels.iter().zip(&aug.dists.slot_dists).enumerate() {
                let (ce, g) = cross_entropy(dist, label)?;
                l_slot += 0.5 * per_word * ce;
                axpy(&mut grads.slot_logits[w], weights.lambda1 * 0.5 * per_word, &g);
            }
        }
    }

    // Consistency terms.
    let mut r_intent = 0.0;
    let mut r_slot = 0.0;
    let mut r_intent_active = false;
    let mut r_slot_active = false;
    if let Some(aug) = augmented {
        let (value, g_p, g_q) =
            symmetric_kl_stopgrad(&original.intent_dist, &aug.dists.intent_dist)?;
        r_intent = value;
        r_intent_active = weights.lambda2 > 0.0;
        if r_intent_active {
            axpy(&mut original_grads.intent_logits, weights.lambda2, &g_p);
            axpy(
                &mut augmented_grads.as_mut().unwrap().intent_logits,
                weights.lambda2,
                &g_q,
            );
        }

        if aug.kind == AugmentKind::SubwordSampling {
            let aug_wc = aug.dists.slot_dists.len();
            if aug_wc != word_count {
                return Err(CoreError::Misaligned(format!(
                    "subword-sampling view has {aug_wc} words, original has {word_count}"
                )));
            }
            if word_count > 0 {
                let per_word = 1.0 / word_count as f64;
                r_slot_active = weights.lambda3 > 0.0;
                let grads = augmented_grads.as_mut().unwrap();
                for w in 0..word_count {
                    let (value, g_p, g_q) = symmetric_kl_stopgrad(
                        &original.slot_dists[w],
                        &aug.dists.slot_dists[w],
                    )?;
                    r_slot += per_word * value;
                    if r_slot_active {
                        axpy(
                            &mut original_grads.slot_logits[w],
                            weights.lambda3 * per_word,
                            &g_p,
                        );
                        axpy(&mut grads.slot_logits[w], weights.lambda3 * per_word, &g_q);
                    }
                }
            }
        }
    }

    let total = l_intent
        + weights.lambda1 * l_slot
        + weights.lambda2 * r_intent
        + weights.lambda3 * r_slot;
    Ok(TotalLoss {
        breakdown: LossBreakdown {
            l_intent,
            l_slot,
            r_intent,
            r_slot,
            total,
            r_intent_active,
            r_slot_active,
            augmented_task_loss: aug_intent.is_some() || aug_slots.is_some(),
        },
        original_grads,
        augmented_grads,
    })
}

/// `acc += scale * values`, the gradient-merge workhorse.
fn axpy(acc: &mut [f64], scale: f64, values: &[f64]) {
    for (a, v) in acc.iter_mut().zip(values) {
        *a += scale * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dists(intent: Vec<f64>, slots: Vec<Vec<f64>>) -> SluDistributions {
        SluDistributions { intent_dist: intent, slot_dists: slots }
    }

    #[test]
    fn cross_entropy_of_uniform_four_way() {
        let (loss, grad) = cross_entropy(&[0.25, 0.25, 0.25, 0.25], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[2] - (-0.75)).abs() < 1e-12);
        for &g in &[grad[0], grad[1], grad[3]] {
            assert!((g - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_onehot_is_zero() {
        let (loss, grad) = cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_grad_is_dist_minus_onehot() {
        let (_, grad) = cross_entropy(&[0.9, 0.1], 0).unwrap();
        assert!((grad[0] - (-0.1)).abs() < 1e-15);
        assert!((grad[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2).unwrap_err(),
            CoreError::LabelOutOfRange { index: 2, size: 2 }
        ));
    }

    #[test]
    fn kl_div_known_values() {
        assert_eq!(kl_div(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl_div(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((kl_div(&[0.9, 0.1], &[0.5, 0.5]).unwrap() - 0.368064).abs() < 1e-6);
        assert!(kl_div(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn symmetric_kl_matches_hand_computed_example() {
        let (value, g_p, g_q) = symmetric_kl_stopgrad(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((value - (0.368064 + 0.510826)).abs() < 1e-5);
        assert!((g_p[0] - 0.4).abs() < 1e-12 && (g_p[1] + 0.4).abs() < 1e-12);
        assert!((g_q[0] + 0.4).abs() < 1e-12 && (g_q[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn symmetric_kl_identical_inputs_vanish() {
        let p = [0.2, 0.3, 0.5];
        let (value, g_p, g_q) = symmetric_kl_stopgrad(&p, &p).unwrap();
        assert_eq!(value, 0.0);
        assert!(g_p.iter().all(|&g| g == 0.0));
        assert!(g_q.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn no_augmented_view_reduces_to_task_loss() {
        let original = dists(vec![0.7, 0.3], vec![vec![0.6, 0.4], vec![0.2, 0.8]]);
        let weights = LossWeights { lambda1: 2.0, lambda2: 3.0, lambda3: 5.0 };
        let out = total_loss(&original, 0, &[1, 1], None, &weights).unwrap();
        let b = out.breakdown;
        assert_eq!(b.r_intent, 0.0);
        assert_eq!(b.r_slot, 0.0);
        assert!(!b.r_intent_active && !b.r_slot_active && !b.augmented_task_loss);
        assert_eq!(b.total, b.l_intent + 2.0 * b.l_slot);
        assert!((b.l_intent - -(0.7f64.ln())).abs() < 1e-12);
        assert!((b.l_slot - 0.5 * (-(0.4f64.ln()) - 0.8f64.ln())).abs() < 1e-12);
        assert!(out.augmented_grads.is_none());
    }

    #[test]
    fn identical_augmented_distributions_zero_the_regularizers() {
        let original = dists(vec![0.7, 0.3], vec![vec![0.6, 0.4]]);
        let aug_dists = original.clone();
        let weights = LossWeights { lambda1: 1.0, lambda2: 2.0, lambda3: 3.0 };
        let aug = AugmentedDists {
            dists: &aug_dists,
            kind: AugmentKind::SubwordSampling,
            intent_label: None,
            slot_labels: None,
        };
        let out = total_loss(&original, 0, &[1], Some(aug), &weights).unwrap();
        assert_eq!(out.breakdown.r_intent, 0.0);
        assert_eq!(out.breakdown.r_slot, 0.0);
        assert_eq!(out.breakdown.total, out.breakdown.l_intent + out.breakdown.l_slot);
        // Regularizer gradients vanish too: the augmented side receives none.
        let aug_grads = out.augmented_grads.unwrap();
        assert!(aug_grads.intent_logits.iter().all(|&g| g == 0.0));
        assert!(aug_grads.slot_logits[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_intent_one_word_toy_matches_hand_sum() {
        // Hand-evaluated four-term objective on fixed distributions.
        let original = dists(vec![0.8, 0.2], vec![vec![0.7, 0.3]]);
        let aug_dists = dists(vec![0.6, 0.4], vec![vec![0.5, 0.5]]);
        let weights = LossWeights { lambda1: 1.0, lambda2: 2.0, lambda3: 3.0 };
        let aug = AugmentedDists {
            dists: &aug_dists,
            kind: AugmentKind::SubwordSampling,
            intent_label: None,
            slot_labels: None,
        };
        let out = total_loss(&original, 0, &[1], Some(aug), &weights).unwrap();

        let l_i = -(0.8f64.ln());
        let l_s = -(0.3f64.ln());
        let r_i = 0.8 * (0.8f64 / 0.6).ln()
            + 0.2 * (0.2f64 / 0.4).ln()
            + 0.6 * (0.6f64 / 0.8).ln()
            + 0.4 * (0.4f64 / 0.2).ln();
        let r_s = 0.7 * (0.7f64 / 0.5).ln()
            + 0.3 * (0.3f64 / 0.5).ln()
            + 0.5 * (0.5f64 / 0.7).ln()
            + 0.5 * (0.5f64 / 0.3).ln();
        let expected = l_i + 1.0 * l_s + 2.0 * r_i + 3.0 * r_s;
        assert!((out.breakdown.total - expected).abs() < 1e-12, "{}", out.breakdown.total);

        // Gradient assembly: task grad plus weighted consistency grad.
        let g = &out.original_grads;
        assert!((g.intent_logits[0] - (0.8 - 1.0 + 2.0 * (0.8 - 0.6))).abs() < 1e-12);
        assert!((g.intent_logits[1] - (0.2 + 2.0 * (0.2 - 0.4))).abs() < 1e-12);
        assert!((g.slot_logits[0][0] - (1.0 * 0.7 + 3.0 * (0.7 - 0.5))).abs() < 1e-12);
        let ga = out.augmented_grads.unwrap();
        assert!((ga.intent_logits[0] - 2.0 * (0.6 - 0.8)).abs() < 1e-12);
        assert!((ga.slot_logits[0][0] - 3.0 * (0.5 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn machine_translation_views_skip_slot_consistency() {
        // Different word counts are fine for MT because R_S is not computed.
        let original = dists(vec![0.8, 0.2], vec![vec![0.7, 0.3], vec![0.4, 0.6]]);
        let aug_dists = dists(vec![0.5, 0.5], vec![vec![0.9, 0.1]]);
        let weights = LossWeights { lambda1: 1.0, lambda2: 2.0, lambda3: 3.0 };
        let aug = AugmentedDists {
            dists: &aug_dists,
            kind: AugmentKind::MachineTranslation,
            intent_label: Some(0),
            slot_labels: None,
        };
        let out = total_loss(&original, 0, &[1, 0], Some(aug), &weights).unwrap();
        assert_eq!(out.breakdown.r_slot, 0.0);
        assert!(!out.breakdown.r_slot_active);
        assert!(out.breakdown.r_intent > 0.0);
        assert!(out.breakdown.augmented_task_loss);
        // Intent CE averaged across the two views.
        let expected_li = 0.5 * -(0.8f64.ln()) + 0.5 * -(0.5f64.ln());
        assert!((out.breakdown.l_intent - expected_li).abs() < 1e-12);
        // The augmented view's slot logits receive no gradient at all.
        let ga = out.augmented_grads.unwrap();
        assert!(ga.slot_logits[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn subword_views_must_match_word_counts() {
        let original = dists(vec![0.8, 0.2], vec![vec![0.7, 0.3], vec![0.4, 0.6]]);
        let aug_dists = dists(vec![0.5, 0.5], vec![vec![0.9, 0.1]]);
        let weights = LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 };
        let aug = AugmentedDists {
            dists: &aug_dists,
            kind: AugmentKind::SubwordSampling,
            intent_label: None,
            slot_labels: None,
        };
        assert!(matches!(
            total_loss(&original, 0, &[1, 0], Some(aug), &weights).unwrap_err(),
            CoreError::Misaligned(_)
        ));
    }

    #[test]
    fn slot_aligned_translation_averages_slot_loss_over_its_own_length() {
        let original = dists(vec![0.8, 0.2], vec![vec![0.7, 0.3]]);
        let aug_dists = dists(vec![0.6, 0.4], vec![vec![0.5, 0.5], vec![0.9, 0.1]]);
        let weights = LossWeights { lambda1: 1.0, lambda2: 0.0, lambda3: 0.0 };
        let aug = AugmentedDists {
            dists: &aug_dists,
            kind: AugmentKind::MachineTranslation,
            intent_label: Some(1),
            slot_labels: Some(&[0, 1]),
        };
        let out = total_loss(&original, 0, &[0], Some(aug), &weights).unwrap();
        let expected_ls =
            0.5 * -(0.7f64.ln()) + 0.5 * 0.5 * (-(0.5f64.ln()) - 0.1f64.ln());
        assert!((out.breakdown.l_slot - expected_ls).abs() < 1e-12);
        let ga = out.augmented_grads.unwrap();
        assert!(ga.slot_logits[0].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn zero_consistency_weights_reduce_to_task_loss_bitwise() {
        let original = dists(vec![0.8, 0.2], vec![vec![0.7, 0.3]]);
        let aug_dists = dists(vec![0.6, 0.4], vec![vec![0.5, 0.5]]);
        let weights0 = LossWeights { lambda1: 2.0, lambda2: 0.0, lambda3: 0.0 };
        let aug = AugmentedDists {
            dists: &aug_dists,
            kind: AugmentKind::SubwordSampling,
            intent_label: None,
            slot_labels: None,
        };
        let with_aug = total_loss(&original, 0, &[1], Some(aug), &weights0).unwrap();
        let without = total_loss(&original, 0, &[1], None, &weights0).unwrap();
        assert_eq!(with_aug.breakdown.total, without.breakdown.total);
        assert_eq!(with_aug.original_grads, without.original_grads);
        assert!(!with_aug.breakdown.r_intent_active);
        // The values are still reported for diagnostics.
        assert!(with_aug.breakdown.r_intent > 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_kl_is_nonnegative_symmetric_and_antisymmetric_in_grads(
            raw_p in proptest::collection::vec(1e-3..1.0f64, 2..8),
            raw_q in proptest::collection::vec(1e-3..1.0f64, 2..8),
        ) {
            let n = raw_p.len().min(raw_q.len());
            let norm = |v: &[f64]| {
                let s: f64 = v[..n].iter().sum();
                v[..n].iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let p = norm(&raw_p);
            let q = norm(&raw_q);
            let (v_pq, g_p, g_q) = symmetric_kl_stopgrad(&p, &q).unwrap();
            let (v_qp, _, _) = symmetric_kl_stopgrad(&q, &p).unwrap();
            prop_assert!(v_pq >= 0.0);
            prop_assert!((v_pq - v_qp).abs() < 1e-12);
            for (a, b) in g_p.iter().zip(&g_q) {
                prop_assert_eq!(*a, -*b);
            }
            let max_diff = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if max_diff < 1e-13 {
                prop_assert!(v_pq.abs() < 1e-12);
            }
        }

        #[test]
        fn total_is_monotone_in_each_lambda(
            bump_index in 0usize..3,
            bump in 0.1..5.0f64,
        ) {
            let original = dists(vec![0.8, 0.2], vec![vec![0.7, 0.3]]);
            let aug_dists = dists(vec![0.6, 0.4], vec![vec![0.5, 0.5]]);
            let base = LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0 };
            let mut bumped = base;
            match bump_index {
                0 => bumped.lambda1 += bump,
                1 => bumped.lambda2 += bump,
                _ => bumped.lambda3 += bump,
            }
            let aug = AugmentedDists {
                dists: &aug_dists,
                kind: AugmentKind::SubwordSampling,
                intent_label: None,
                slot_labels: None,
            };
            let lo = total_loss(&original, 0, &[1], Some(aug), &base).unwrap();
            let hi = total_loss(&original, 0, &[1], Some(aug), &bumped).unwrap();
            prop_assert!(hi.breakdown.total >= lo.breakdown.total);
        }
    }
}
