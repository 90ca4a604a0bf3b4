//! Unigram-LM subword segmentation.
//!
//! A model is a finite piece inventory with log-probabilities summing to one.
//! Segmenting a string means choosing a path through the character lattice of
//! piece occurrences; the modes are best-path ([`SubwordModel::segment`]),
//! exact posterior sampling ([`SubwordModel::sample`]), and the total
//! log-probability over all paths ([`SubwordModel::marginal_logprob`]).
//!
//! Piece ids are global: 0, 1, 2 are reserved for the BOS, PAD, and UNK
//! symbols, and real pieces follow in lexicographic order of their strings.
//! Ids are therefore stable across save/load and safe to bake into model
//! checkpoints.

mod lattice;
mod train;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

pub use lattice::{Edge, Lattice, SegmentationSampler};
pub use train::{train_unigram, train_unigram_with_report, UnigramTrainReport};

use crate::error::{CoreError, Result};

/// Sequence-start symbol, prepended to every encoded input.
pub const BOS_ID: usize = 0;
/// Padding symbol (reserved for fixed-width batching).
pub const PAD_ID: usize = 1;
/// Unknown-character symbol.
pub const UNK_ID: usize = 2;
/// Number of reserved ids before the first real piece.
pub const NUM_SPECIALS: usize = 3;
/// Fixed per-character log-probability charged for an UNK edge.
pub const UNK_LOGPROB: f64 = -20.0;

const MODEL_HEADER: &str = "#unigram v1";

/// A trained unigram subword inventory.
///
/// Pieces are stored sorted by string; the global id of the piece at sorted
/// position `k` is `NUM_SPECIALS + k`.
#[derive(Debug, Clone)]
pub struct SubwordModel {
    /// `(piece, logprob)` sorted by piece string.
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_piece_chars: usize,
    unk_policy: bool,
}

/// One segmentation of a string: parallel piece ids and piece strings.
///
/// Concatenating `pieces` always reproduces the input text; for UNK ids the
/// stored piece string is the actual covered character, not a placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub piece_ids: Vec<usize>,
    pub pieces: Vec<String>,
}

impl Segmentation {
    /// The concatenation of the pieces, i.e. the segmented text.
    pub fn text(&self) -> String {
        self.pieces.concat()
    }
}

impl SubwordModel {
    /// Build a model from `(piece, logprob)` pairs.
    ///
    /// Pieces must be unique, non-empty, and their probabilities must sum to
    /// one within `1e-9`. The UNK policy defaults to on.
    pub fn new(pieces: Vec<(String, f64)>) -> Result<Self> {
        let model = Self::from_pieces_unchecked(pieces);
        let total: f64 = model.pieces.iter().map(|(_, lp)| lp.exp()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CoreError::BadSubwordModel(format!(
                "piece probabilities sum to {total}, expected 1"
            )));
        }
        Ok(model)
    }

    /// Build without checking normalization. Intended for toy inventories in
    /// tests and for intermediate states during training; panics on empty or
    /// duplicate pieces since those break the id scheme outright.
    pub fn from_pieces_unchecked(mut pieces: Vec<(String, f64)>) -> Self {
        assert!(!pieces.is_empty(), "piece inventory is empty");
        pieces.sort_by(|a, b| a.0.cmp(&b.0));
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 0;
        for (k, (piece, logprob)) in pieces.iter().enumerate() {
            assert!(!piece.is_empty(), "empty piece string");
            assert!(logprob.is_finite(), "non-finite logprob for {piece:?}");
            let dup = index.insert(piece.clone(), k);
            assert!(dup.is_none(), "duplicate piece {piece:?}");
            max_piece_chars = max_piece_chars.max(piece.chars().count());
        }
        SubwordModel { pieces, index, max_piece_chars, unk_policy: true }
    }

    /// Number of real pieces (excludes the three specials).
    pub fn num_pieces(&self) -> usize {
        self.pieces.len()
    }

    /// Total id space: specials plus real pieces.
    pub fn vocab_size(&self) -> usize {
        NUM_SPECIALS + self.pieces.len()
    }

    /// Longest piece length in characters.
    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    pub fn unk_policy(&self) -> bool {
        self.unk_policy
    }

    /// Enable or disable UNK edges; when disabled, segmenting a string with
    /// an uncoverable character is an error.
    pub fn set_unk_policy(&mut self, on: bool) {
        self.unk_policy = on;
    }

    /// `(global id, logprob)` of an exact piece string, if present.
    pub fn lookup(&self, piece: &str) -> Option<(usize, f64)> {
        self.index
            .get(piece)
            .map(|&k| (NUM_SPECIALS + k, self.pieces[k].1))
    }

    /// Display string for any global id, including the specials.
    pub fn piece_string(&self, id: usize) -> String {
        match id {
            BOS_ID => "<bos>".into(),
            PAD_ID => "<pad>".into(),
            UNK_ID => "<unk>".into(),
            _ => self.pieces[id - NUM_SPECIALS].0.clone(),
        }
    }

    /// Iterate `(global id, piece, logprob)` in id order.
    pub fn iter_pieces(&self) -> impl Iterator<Item = (usize, &str, f64)> + '_ {
        self.pieces
            .iter()
            .enumerate()
            .map(|(k, (piece, lp))| (NUM_SPECIALS + k, piece.as_str(), *lp))
    }

    /// Build the segmentation lattice for `text`.
    pub fn lattice(&self, text: &str) -> Result<Lattice> {
        Lattice::build(self, text)
    }

    /// Best segmentation by product of piece probabilities.
    ///
    /// Ties break toward fewer pieces, then the lexicographically smallest
    /// piece-id sequence, so the result is deterministic.
    pub fn segment(&self, text: &str) -> Result<Segmentation> {
        let lat = self.lattice(text)?;
        let path = lat.viterbi();
        Ok(self.path_to_segmentation(&lat, &path))
    }

    /// Draw a segmentation from the posterior over lattice paths with each
    /// edge weight raised to `alpha`.
    ///
    /// `alpha = 1` samples proportionally to segmentation probability;
    /// `alpha = 0` is uniform over all segmentations; values in between
    /// flatten the distribution. `alpha` must be finite and non-negative.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        text: &str,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Segmentation> {
        check_alpha(alpha)?;
        let lat = self.lattice(text)?;
        let path = lat.sampler(alpha).draw(rng);
        Ok(self.path_to_segmentation(&lat, &path))
    }

    /// Log of the sum over all segmentations of the product of piece
    /// probabilities, each raised to `alpha`.
    pub fn marginal_logprob(&self, text: &str, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(self.lattice(text)?.marginal(alpha))
    }

    fn path_to_segmentation(&self, lat: &Lattice, path: &[usize]) -> Segmentation {
        let mut piece_ids = Vec::with_capacity(path.len());
        let mut pieces = Vec::with_capacity(path.len());
        for &e in path {
            let edge = &lat.edges()[e];
            piece_ids.push(edge.piece_id);
            // For UNK this is the covered character itself, which keeps the
            // concatenation invariant.
            pieces.push(lat.edge_text(edge));
        }
        Segmentation { piece_ids, pieces }
    }

    /// Serialize as a TSV piece table (see [`SubwordModel::load`]).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(MODEL_HEADER);
        out.push('\n');
        for (piece, logprob) in &self.pieces {
            // f64 Display round-trips exactly, so load() restores the same
            // bits.
            writeln!(out, "{piece}\t{logprob}").expect("writing to String cannot fail");
        }
        out
    }

    /// Write the TSV piece table to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    /// Parse a TSV piece table: a `#unigram v1` header line, then one
    /// `piece<TAB>logprob` line per piece.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(MODEL_HEADER) => {}
            other => {
                return Err(CoreError::BadSubwordModel(format!(
                    "missing `{MODEL_HEADER}` header, found {other:?}"
                )))
            }
        }
        let mut pieces = Vec::new();
        let mut seen = HashMap::new();
        for (lineno, line) in lines.enumerate() {
            let lineno = lineno + 2;
            if line.is_empty() {
                continue;
            }
            let (piece, logprob) = line.split_once('\t').ok_or_else(|| {
                CoreError::BadSubwordModel(format!("line {lineno}: expected piece<TAB>logprob"))
            })?;
            if piece.is_empty() {
                return Err(CoreError::BadSubwordModel(format!("line {lineno}: empty piece")));
            }
            let logprob: f64 = logprob.parse().map_err(|_| {
                CoreError::BadSubwordModel(format!("line {lineno}: bad logprob {logprob:?}"))
            })?;
            if !logprob.is_finite() {
                return Err(CoreError::BadSubwordModel(format!(
                    "line {lineno}: non-finite logprob"
                )));
            }
            if let Some(first) = seen.insert(piece.to_string(), lineno) {
                return Err(CoreError::BadSubwordModel(format!(
                    "line {lineno}: duplicate piece {piece:?} (first at line {first})"
                )));
            }
            pieces.push((piece.to_string(), logprob));
        }
        if pieces.is_empty() {
            return Err(CoreError::BadSubwordModel("no pieces".into()));
        }
        SubwordModel::new(pieces)
    }

    /// Read a TSV piece table from `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tsv(&text)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(CoreError::Invalid(format!(
            "alpha must be finite and non-negative, got {alpha}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> SubwordModel {
        SubwordModel::new(vec![
            ("a".into(), 0.5f64.ln()),
            ("b".into(), 0.3f64.ln()),
            ("ab".into(), 0.2f64.ln()),
        ])
        .unwrap()
    }

    #[test]
    fn ids_are_lexicographic_after_specials() {
        let model = toy();
        assert_eq!(model.lookup("a").unwrap().0, 3);
        assert_eq!(model.lookup("ab").unwrap().0, 4);
        assert_eq!(model.lookup("b").unwrap().0, 5);
        assert_eq!(model.vocab_size(), 6);
        assert_eq!(model.piece_string(BOS_ID), "<bos>");
        assert_eq!(model.piece_string(PAD_ID), "<pad>");
        assert_eq!(model.piece_string(UNK_ID), "<unk>");
    }

    #[test]
    fn rejects_unnormalized_inventory() {
        let err = SubwordModel::new(vec![("a".into(), 0.5f64.ln()), ("b".into(), 0.4f64.ln())])
            .unwrap_err();
        assert!(matches!(err, CoreError::BadSubwordModel(_)));
    }

    #[test]
    fn segment_matches_best_path() {
        let model = toy();
        let seg = model.segment("ab").unwrap();
        assert_eq!(seg.pieces, vec!["ab"]);
        assert_eq!(seg.piece_ids, vec![4]);
        assert_eq!(seg.text(), "ab");
    }

    #[test]
    fn segment_compares_products_not_piece_counts() {
        // 0.4 > 0.6 * 0.6, so "aa" stays whole; "a" alone is trivial.
        let model =
            SubwordModel::new(vec![("a".into(), 0.6f64.ln()), ("aa".into(), 0.4f64.ln())])
                .unwrap();
        assert_eq!(model.segment("aa").unwrap().pieces, vec!["aa"]);
        assert_eq!(model.segment("a").unwrap().pieces, vec!["a"]);
    }

    #[test]
    fn unk_keeps_concatenation_invariant() {
        let model = toy();
        let seg = model.segment("axb").unwrap();
        assert_eq!(seg.pieces, vec!["a", "x", "b"]);
        assert_eq!(seg.piece_ids, vec![3, UNK_ID, 5]);
        assert_eq!(seg.text(), "axb");
    }

    #[test]
    fn marginal_logprob_sums_over_paths() {
        let model = toy();
        let got = model.marginal_logprob("ab", 1.0).unwrap();
        assert!((got - 0.35f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_alpha() {
        let model = toy();
        assert!(model.marginal_logprob("ab", -0.5).is_err());
        assert!(model.marginal_logprob("ab", f64::NAN).is_err());
        assert!(model.sample("ab", f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn sampling_roughly_tracks_posterior() {
        // Exact frequencies are asserted in the acceptance suite; this is a
        // coarse smoke check. P([ab]) = 0.2 / 0.35.
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut whole = 0usize;
        let n = 20_000;
        for _ in 0..n {
            let seg = model.sample("ab", 1.0, &mut rng).unwrap();
            if seg.pieces == ["ab"] {
                whole += 1;
            }
        }
        let freq = whole as f64 / n as f64;
        assert!((freq - 0.2 / 0.35).abs() < 0.02, "freq = {freq}");
    }

    #[test]
    fn alpha_zero_is_uniform_over_segmentations() {
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut whole = 0usize;
        let n = 20_000;
        for _ in 0..n {
            let seg = model.sample("ab", 0.0, &mut rng).unwrap();
            if seg.pieces == ["ab"] {
                whole += 1;
            }
        }
        let freq = whole as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "freq = {freq}");
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let model = toy();
        let text = model.to_tsv();
        let back = SubwordModel::from_tsv(&text).unwrap();
        assert_eq!(model.pieces, back.pieces);
        assert_eq!(text, back.to_tsv());
    }

    #[test]
    fn tsv_rejects_malformed_input() {
        assert!(SubwordModel::from_tsv("a\t-0.5").is_err()); // missing header
        assert!(SubwordModel::from_tsv("#unigram v1\n").is_err()); // no pieces
        assert!(SubwordModel::from_tsv("#unigram v1\na -0.5").is_err()); // no tab
        assert!(SubwordModel::from_tsv("#unigram v1\na\tx").is_err()); // bad number
        let dup = "#unigram v1\na\t-0.6931471805599453\na\t-0.6931471805599453";
        assert!(SubwordModel::from_tsv(dup).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subword.tsv");
        let model = toy();
        model.save(&path).unwrap();
        let back = SubwordModel::load(&path).unwrap();
        assert_eq!(model.pieces, back.pieces);
    }
}
