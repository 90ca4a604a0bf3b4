//! Segmentation lattice over character-boundary positions.
//!
//! Positions are Unicode scalar-value boundaries 0..m, never bytes, so CJK
//! text cannot be split inside a code point. Every edge covers the exact
//! substring of the piece it carries.

use rand::{Rng, RngExt as _};

use super::{SubwordModel, UNK_ID, UNK_LOGPROB};
use crate::error::{CoreError, Result};

/// One candidate piece occurrence covering chars `[start, end)`.
#[derive(Debug, Clone)]
pub struct Edge {
    pub start: usize,
    pub end: usize,
    /// Global piece id; [`UNK_ID`] for unknown single characters.
    pub piece_id: usize,
    pub logprob: f64,
}

#[derive(Debug, Clone)]
pub struct Lattice {
    chars: Vec<char>,
    edges: Vec<Edge>,
    /// Edge indices by start node.
    outgoing: Vec<Vec<usize>>,
    /// Edge indices by end node.
    incoming: Vec<Vec<usize>>,
}

impl Lattice {
    /// Build the lattice for `text`, inserting one edge per matching piece.
    ///
    /// Positions with no single-character piece get an UNK edge with the
    /// fixed penalty log-probability when the model's UNK policy is on,
    /// otherwise building fails on the first uncovered character.
    pub fn build(model: &SubwordModel, text: &str) -> Result<Self> {
        let chars: Vec<char> = text.chars().collect();
        let m = chars.len();
        let mut edges: Vec<Edge> = Vec::new();
        let mut outgoing = vec![Vec::new(); m + 1];
        let mut incoming = vec![Vec::new(); m + 1];
        let max_len = model.max_piece_chars().max(1);
        let mut buf = String::new();
        for start in 0..m {
            let mut has_single = false;
            buf.clear();
            for (len, ch) in chars[start..].iter().take(max_len).enumerate() {
                buf.push(*ch);
                if let Some((id, logprob)) = model.lookup(&buf) {
                    let end = start + len + 1;
                    if len == 0 {
                        has_single = true;
                    }
                    let idx = edges.len();
                    edges.push(Edge { start, end, piece_id: id, logprob });
                    outgoing[start].push(idx);
                    incoming[end].push(idx);
                }
            }
            if !has_single {
                if !model.unk_policy() {
                    return Err(CoreError::UncoveredChar { ch: chars[start] });
                }
                let idx = edges.len();
                edges.push(Edge {
                    start,
                    end: start + 1,
                    piece_id: UNK_ID,
                    logprob: UNK_LOGPROB,
                });
                outgoing[start].push(idx);
                incoming[start + 1].push(idx);
            }
        }
        Ok(Lattice { chars, edges, outgoing, incoming })
    }

    /// Number of character positions (nodes run 0..=len).
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// The substring covered by an edge.
    pub fn edge_text(&self, edge: &Edge) -> String {
        self.chars[edge.start..edge.end].iter().collect()
    }

    /// Best-scoring path as edge indices, left to right.
    ///
    /// Ties break toward fewer pieces, then the lexicographically smallest
    /// piece-id sequence.
    pub fn viterbi(&self) -> Vec<usize> {
        let m = self.len();
        // Suffix DP: best[i] describes the best path for chars[i..]. Taking
        // the smallest first piece id among (score, count)-optimal choices
        // yields the lexicographically smallest id sequence overall.
        #[derive(Clone, Copy)]
        struct Best {
            score: f64,
            count: usize,
            edge: Option<usize>,
        }
        let mut best = vec![
            Best { score: f64::NEG_INFINITY, count: usize::MAX, edge: None };
            m + 1
        ];
        best[m] = Best { score: 0.0, count: 0, edge: None };
        for i in (0..m).rev() {
            for &e in &self.outgoing[i] {
                let edge = &self.edges[e];
                let tail = best[edge.end];
                if tail.edge.is_none() && edge.end != m {
                    continue;
                }
                let score = edge.logprob + tail.score;
                let count = 1 + tail.count;
                let better = match best[i].edge {
                    None => true,
                    Some(cur) => {
                        let cur_id = self.edges[cur].piece_id;
                        score > best[i].score
                            || (score == best[i].score
                                && (count < best[i].count
                                    || (count == best[i].count && edge.piece_id < cur_id)))
                    }
                };
                if better {
                    best[i] = Best { score, count, edge: Some(e) };
                }
            }
        }
        let mut path = Vec::new();
        let mut node = 0;
        while node < m {
            let e = best[node].edge.expect("lattice is connected");
            path.push(e);
            node = self.edges[e].end;
        }
        path
    }

    /// Log-space forward scores at temperature `alpha`:
    /// `F[j] = logsumexp over edges (i -> j) of F[i] + alpha * logprob`.
    /// `F[m]` is the log partition function `log sum_s (prod p)^alpha`.
    pub fn forward_scores(&self, alpha: f64) -> Vec<f64> {
        let m = self.len();
        let mut fwd = vec![f64::NEG_INFINITY; m + 1];
        fwd[0] = 0.0;
        for j in 1..=m {
            let terms: Vec<f64> = self.incoming[j]
                .iter()
                .map(|&e| {
                    let edge = &self.edges[e];
                    fwd[edge.start] + alpha * edge.logprob
                })
                .collect();
            fwd[j] = logsumexp(&terms);
        }
        fwd
    }

    /// Backward scores: `B[i] = logsumexp over edges (i -> j) of alpha * logprob + B[j]`.
    pub fn backward_scores(&self, alpha: f64) -> Vec<f64> {
        let m = self.len();
        let mut bwd = vec![f64::NEG_INFINITY; m + 1];
        bwd[m] = 0.0;
        for i in (0..m).rev() {
            let terms: Vec<f64> = self.outgoing[i]
                .iter()
                .map(|&e| {
                    let edge = &self.edges[e];
                    alpha * edge.logprob + bwd[edge.end]
                })
                .collect();
            bwd[i] = logsumexp(&terms);
        }
        bwd
    }

    /// Log of the alpha-scaled partition function over all segmentations.
    pub fn marginal(&self, alpha: f64) -> f64 {
        *self.forward_scores(alpha).last().expect("node 0 exists")
    }

    /// Posterior probability of each edge appearing in a segmentation drawn
    /// from the alpha-scaled distribution, indexed like [`Self::edges`].
    pub fn edge_posteriors(&self, alpha: f64) -> Vec<f64> {
        let fwd = self.forward_scores(alpha);
        let bwd = self.backward_scores(alpha);
        let log_z = fwd[self.len()];
        self.edges
            .iter()
            .map(|e| (fwd[e.start] + alpha * e.logprob + bwd[e.end] - log_z).exp())
            .collect()
    }

    /// Precompute the per-node categorical tables for exact
    /// forward-filtering backward-sampling at temperature `alpha`.
    pub fn sampler(&self, alpha: f64) -> SegmentationSampler<'_> {
        let fwd = self.forward_scores(alpha);
        let mut choices = vec![Vec::new(); self.len() + 1];
        for (j, node_choices) in choices.iter_mut().enumerate().skip(1) {
            let mut cum = 0.0;
            let total: f64 = self.incoming[j]
                .iter()
                .map(|&e| {
                    let edge = &self.edges[e];
                    (fwd[edge.start] + alpha * edge.logprob - fwd[j]).exp()
                })
                .sum();
            for &e in &self.incoming[j] {
                let edge = &self.edges[e];
                cum += (fwd[edge.start] + alpha * edge.logprob - fwd[j]).exp() / total;
                node_choices.push((e, cum));
            }
        }
        SegmentationSampler { lattice: self, choices }
    }
}

/// Cached backward-sampling tables for one lattice and temperature.
pub struct SegmentationSampler<'a> {
    lattice: &'a Lattice,
    /// Per node, incoming edges with cumulative probabilities.
    choices: Vec<Vec<(usize, f64)>>,
}

impl SegmentationSampler<'_> {
    /// Draw one segmentation path (edge indices, left to right) with
    /// probability proportional to the alpha-scaled piece-probability
    /// product.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::new();
        let mut node = self.lattice.len();
        while node > 0 {
            let table = &self.choices[node];
            let u: f64 = rng.random();
            let mut chosen = table.last().expect("connected lattice").0;
            for &(e, cum) in table {
                if u < cum {
                    chosen = e;
                    break;
                }
            }
            path.push(chosen);
            node = self.lattice.edges[chosen].start;
        }
        path.reverse();
        path
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::NUM_SPECIALS;

    fn toy_model() -> SubwordModel {
        // p(a)=0.5, p(b)=0.3, p(ab)=0.2
        SubwordModel::new(vec![
            ("a".into(), 0.5f64.ln()),
            ("b".into(), 0.3f64.ln()),
            ("ab".into(), 0.2f64.ln()),
        ])
        .unwrap()
    }

    #[test]
    fn edges_cover_exact_substrings() {
        let model = toy_model();
        let lat = Lattice::build(&model, "ab").unwrap();
        for edge in lat.edges() {
            let covered = lat.edge_text(edge);
            let piece = model.piece_string(edge.piece_id);
            assert_eq!(covered, piece);
        }
    }

    #[test]
    fn viterbi_prefers_higher_product() {
        // log 0.2 > log(0.5 * 0.3) = log 0.15
        let model = toy_model();
        let lat = Lattice::build(&model, "ab").unwrap();
        let path = lat.viterbi();
        assert_eq!(path.len(), 1);
        assert_eq!(model.piece_string(lat.edges()[path[0]].piece_id), "ab");
    }

    #[test]
    fn viterbi_tie_breaks_fewest_pieces_then_lex_ids() {
        // Exact-binary logprobs so path scores tie bitwise:
        // "aab" via [aa, b] = -3 + -2 and via [a, ab] = -2 + -3.
        let model = SubwordModel::from_pieces_unchecked(vec![
            ("a".into(), -2.0),
            ("aa".into(), -3.0),
            ("ab".into(), -3.0),
            ("b".into(), -2.0),
        ]);
        let lat = Lattice::build(&model, "aab").unwrap();
        let path = lat.viterbi();
        let pieces: Vec<String> = path
            .iter()
            .map(|&e| model.piece_string(lat.edges()[e].piece_id))
            .collect();
        // ids: a < aa < ab < b, so [a, ab] beats [aa, b].
        assert_eq!(pieces, vec!["a", "ab"]);

        // Fewest pieces precedes the id comparison.
        let model = SubwordModel::from_pieces_unchecked(vec![
            ("a".into(), -2.0),
            ("b".into(), -2.0),
            ("ab".into(), -4.0),
        ]);
        let lat = Lattice::build(&model, "ab").unwrap();
        let path = lat.viterbi();
        assert_eq!(path.len(), 1);
        assert_eq!(
            model.piece_string(lat.edges()[path[0]].piece_id),
            "ab"
        );
    }

    #[test]
    fn marginal_matches_enumeration() {
        let model = toy_model();
        let lat = Lattice::build(&model, "ab").unwrap();
        // Two segmentations: [ab] (0.2) and [a,b] (0.15).
        assert!((lat.marginal(1.0) - 0.35f64.ln()).abs() < 1e-12);
        // alpha = 0 counts segmentations.
        assert!((lat.marginal(0.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unk_edges_only_when_needed() {
        let model = toy_model();
        let lat = Lattice::build(&model, "axb").unwrap();
        let unk_edges: Vec<_> = lat
            .edges()
            .iter()
            .filter(|e| e.piece_id == UNK_ID)
            .collect();
        assert_eq!(unk_edges.len(), 1);
        assert_eq!(unk_edges[0].start, 1);
        assert_eq!(unk_edges[0].end, 2);
        assert_eq!(unk_edges[0].logprob, UNK_LOGPROB);

        let mut strict = toy_model();
        strict.set_unk_policy(false);
        let err = Lattice::build(&strict, "axb").unwrap_err();
        assert!(matches!(err, CoreError::UncoveredChar { ch: 'x' }));
    }

    #[test]
    fn cjk_positions_are_scalar_values() {
        let model = SubwordModel::from_pieces_unchecked(vec![
            ("叫".into(), -1.0),
            ("我".into(), -1.0),
            ("叫我".into(), -1.5),
        ]);
        let lat = Lattice::build(&model, "叫我").unwrap();
        assert_eq!(lat.len(), 2);
        let path = lat.viterbi();
        assert_eq!(path.len(), 1);
        // Sorted pieces: 叫 < 叫我 < 我, so 叫我 is the second real piece.
        assert_eq!(lat.edges()[path[0]].piece_id, NUM_SPECIALS + 1);
    }
}
