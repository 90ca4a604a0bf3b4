//! EM training of the unigram piece inventory.
//!
//! The procedure is exact expectation-maximization: expected piece counts
//! come from forward–backward posteriors over each text's full segmentation
//! lattice, and the M-step renormalizes counts into probabilities. This
//! guarantees the corpus log-likelihood never decreases between iterations,
//! which the test suite checks directly.
//!
//! Vocabulary reduction interleaves with EM: after the initial EM run, the
//! model is pruned down to the target size by repeatedly discarding the
//! multi-character pieces whose removal (with the survivors renormalized)
//! costs the least corpus log-likelihood — 20% of the removable pieces per
//! round. Single characters are never pruned, so coverage of the training
//! corpus is preserved. One final EM pass re-fits the surviving pieces.

use std::collections::{BTreeMap, BTreeSet};

use super::SubwordModel;
use crate::error::{CoreError, Result};

/// Probability floor for single-character pieces whose expected count
/// underflows; keeps coverage without affecting well-supported pieces.
const SINGLE_CHAR_FLOOR: f64 = 1e-12;

/// Diagnostics from a training run.
#[derive(Debug, Clone)]
pub struct UnigramTrainReport {
    /// Corpus log-likelihood measured at the start of each initial EM
    /// iteration (i.e. the likelihood of the parameters entering that
    /// iteration). Non-decreasing by construction.
    pub em_loglik: Vec<f64>,
    /// Corpus log-likelihood entering the single post-pruning EM pass.
    pub final_loglik: f64,
    /// Number of real pieces in the returned model.
    pub final_vocab: usize,
}

/// Train a unigram piece inventory on `texts`.
///
/// The seed vocabulary is every substring of length at most `max_piece_len`
/// occurring at least `min_freq` times, plus every single character
/// unconditionally. `target_vocab_size` counts real pieces (specials
/// excluded) and must be at least the number of distinct characters.
pub fn train_unigram(
    texts: &[String],
    target_vocab_size: usize,
    max_piece_len: usize,
    min_freq: u64,
    em_iters: usize,
) -> Result<SubwordModel> {
    train_unigram_with_report(texts, target_vocab_size, max_piece_len, min_freq, em_iters)
        .map(|(model, _)| model)
}

/// [`train_unigram`] plus per-iteration likelihood diagnostics.
pub fn train_unigram_with_report(
    texts: &[String],
    target_vocab_size: usize,
    max_piece_len: usize,
    min_freq: u64,
    em_iters: usize,
) -> Result<(SubwordModel, UnigramTrainReport)> {
    for (name, value) in [
        ("target_vocab_size", target_vocab_size),
        ("max_piece_len", max_piece_len),
        ("em_iters", em_iters),
    ] {
        if value == 0 {
            return Err(CoreError::Invalid(format!("{name} must be positive")));
        }
    }
    if min_freq == 0 {
        return Err(CoreError::Invalid("min_freq must be positive".into()));
    }

    // Dedupe the corpus; BTreeMap iteration keeps everything deterministic.
    let mut corpus: BTreeMap<&str, u64> = BTreeMap::new();
    for text in texts {
        if !text.is_empty() {
            *corpus.entry(text.as_str()).or_insert(0) += 1;
        }
    }
    if corpus.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    let char_count = corpus
        .keys()
        .flat_map(|t| t.chars())
        .collect::<BTreeSet<char>>()
        .len();
    if target_vocab_size < char_count {
        return Err(CoreError::VocabTooSmall { target: target_vocab_size, chars: char_count });
    }

    let mut pieces = seed_pieces(&corpus, max_piece_len, min_freq);

    let mut em_loglik = Vec::with_capacity(em_iters);
    for _ in 0..em_iters {
        let (loglik, refit) = em_step(&pieces, &corpus)?;
        em_loglik.push(loglik);
        pieces = refit;
    }

    while pieces.len() > target_vocab_size {
        let removable: Vec<usize> = (0..pieces.len())
            .filter(|&i| pieces[i].0.chars().count() > 1)
            .collect();
        if removable.is_empty() {
            break;
        }
        let base_loglik = corpus_loglik(&pieces, &corpus)?;
        // Log-likelihood lost by removing each candidate alone, with the
        // survivors renormalized. Can be negative for redundant pieces.
        let mut losses: Vec<(f64, usize)> = Vec::with_capacity(removable.len());
        for &i in &removable {
            let without = remove_and_renormalize(&pieces, &[i]);
            losses.push((base_loglik - corpus_loglik(&without, &corpus)?, i));
        }
        losses.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite likelihoods")
                .then_with(|| pieces[a.1].0.cmp(&pieces[b.1].0))
        });
        let per_round = removable.len().div_ceil(5);
        let n_remove = per_round.min(pieces.len() - target_vocab_size);
        let drop: Vec<usize> = losses[..n_remove].iter().map(|&(_, i)| i).collect();
        pieces = remove_and_renormalize(&pieces, &drop);
    }

    let (final_loglik, refit) = em_step(&pieces, &corpus)?;
    pieces = refit;

    let final_vocab = pieces.len();
    let model = SubwordModel::new(pieces)?;
    Ok((model, UnigramTrainReport { em_loglik, final_loglik, final_vocab }))
}

/// Substring counting for the seed vocabulary.
fn seed_pieces(
    corpus: &BTreeMap<&str, u64>,
    max_piece_len: usize,
    min_freq: u64,
) -> Vec<(String, f64)> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for (text, &n) in corpus {
        let chars: Vec<char> = text.chars().collect();
        for start in 0..chars.len() {
            let mut piece = String::new();
            for ch in chars[start..].iter().take(max_piece_len) {
                piece.push(*ch);
                *counts.entry(piece.clone()).or_insert(0) += n;
            }
        }
    }
    let weights: Vec<(String, f64)> = counts
        .into_iter()
        .filter(|(piece, count)| piece.chars().count() == 1 || *count >= min_freq)
        .map(|(piece, count)| (piece, count as f64))
        .collect();
    normalize(weights)
}

/// Convert positive weights to log-probabilities summing to one.
///
/// The division happens in log space: expected counts of rare pieces can
/// be subnormal, where the quotient `w / total` would underflow to zero
/// and yield an infinite log-probability.
fn normalize(weights: Vec<(String, f64)>) -> Vec<(String, f64)> {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let log_total = total.ln();
    weights
        .into_iter()
        .map(|(piece, w)| (piece, w.ln() - log_total))
        .collect()
}

/// One exact EM iteration. Returns the corpus log-likelihood of the *input*
/// parameters (a byproduct of the E-step) and the refit pieces.
fn em_step(
    pieces: &[(String, f64)],
    corpus: &BTreeMap<&str, u64>,
) -> Result<(f64, Vec<(String, f64)>)> {
    let model = SubwordModel::from_pieces_unchecked(pieces.to_vec());
    let mut expected: BTreeMap<String, f64> = BTreeMap::new();
    let mut loglik = 0.0;
    for (text, &n) in corpus {
        let lat = model.lattice(text)?;
        loglik += n as f64 * lat.marginal(1.0);
        let posteriors = lat.edge_posteriors(1.0);
        for (edge, post) in lat.edges().iter().zip(&posteriors) {
            *expected.entry(model.piece_string(edge.piece_id)).or_insert(0.0) +=
                n as f64 * post;
        }
    }
    let mut weights: Vec<(String, f64)> = Vec::with_capacity(pieces.len());
    for (piece, _) in pieces {
        let count = expected.get(piece).copied().unwrap_or(0.0);
        if count > 0.0 {
            weights.push((piece.clone(), count));
        } else if piece.chars().count() == 1 {
            // Never drop a single character: coverage is an invariant.
            weights.push((piece.clone(), SINGLE_CHAR_FLOOR));
        }
        // Multi-character pieces with zero posterior mass disappear.
    }
    Ok((loglik, normalize(weights)))
}

fn corpus_loglik(pieces: &[(String, f64)], corpus: &BTreeMap<&str, u64>) -> Result<f64> {
    let model = SubwordModel::from_pieces_unchecked(pieces.to_vec());
    let mut loglik = 0.0;
    for (text, &n) in corpus {
        loglik += n as f64 * model.lattice(text)?.marginal(1.0);
    }
    Ok(loglik)
}

/// Drop the pieces at `drop` (indices into `pieces`) and renormalize the
/// survivors to sum to one.
fn remove_and_renormalize(pieces: &[(String, f64)], drop: &[usize]) -> Vec<(String, f64)> {
    let drop: BTreeSet<usize> = drop.iter().copied().collect();
    let kept: Vec<(String, f64)> = pieces
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, p)| p.clone())
        .collect();
    let mass: f64 = kept.iter().map(|(_, lp)| lp.exp()).sum();
    let log_mass = mass.ln();
    kept.into_iter().map(|(piece, lp)| (piece, lp - log_mass)).collect()
}
