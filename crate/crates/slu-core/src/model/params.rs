//! Parameter containers, initialization, and tensor bookkeeping.

use rand::{Rng, RngExt as _};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Spread of the uniform initializer for embeddings and weight matrices.
const INIT_RANGE: f64 = 0.08;

/// Architecture and problem-size hyperparameters baked into a parameter set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Model width `d`.
    pub dim: usize,
    /// Number of residual blocks.
    pub blocks: usize,
    /// Maximum encoded sequence length, including the BOS position.
    pub l_max: usize,
    /// Piece-id space (specials included).
    pub vocab_size: usize,
    pub num_intents: usize,
    pub num_slots: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dim", self.dim),
            ("blocks", self.blocks),
            ("l_max", self.l_max),
            ("vocab_size", self.vocab_size),
            ("num_intents", self.num_intents),
            ("num_slots", self.num_slots),
        ] {
            if v == 0 {
                return Err(CoreError::BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// A dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    /// Entries drawn independently from `uniform(-INIT_RANGE, INIT_RANGE)`.
    fn uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * INIT_RANGE)
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(CoreError::ShapeMismatch(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The `r`-th length-`cols` row of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }
}

/// One pre-norm residual block: self-attention then feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
}

/// The full parameter set. The same struct doubles as a gradient container
/// (see [`ModelParams::zeros_like`]); tensor names and ordering are fixed by
/// [`ModelParams::named_tensors`] and shared by the optimizer and the
/// checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed_piece: Tensor,
    pub embed_pos: Tensor,
    pub blocks: Vec<BlockParams>,
    pub intent_w: Tensor,
    pub intent_b: Tensor,
    pub slot_w: Tensor,
    pub slot_b: Tensor,
}

/// Fresh parameters from a seeded stream.
///
/// Embeddings, attention/feed-forward weights, and head weights are
/// uniform(-0.08, 0.08); layer-norm gains are 1; every bias starts at 0.
/// The draw order is fixed, so one seed always yields one parameter set.
pub fn init_params<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParams> {
    config.validate()?;
    let d = config.dim;
    let hidden = 4 * d;
    let embed_piece = Tensor::uniform(&[config.vocab_size, d], rng);
    let embed_pos = Tensor::uniform(&[config.l_max, d], rng);
    let blocks = (0..config.blocks)
        .map(|_| BlockParams {
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: Tensor::uniform(&[d, d], rng),
            wk: Tensor::uniform(&[d, d], rng),
            wv: Tensor::uniform(&[d, d], rng),
            wo: Tensor::uniform(&[d, d], rng),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            ff_w1: Tensor::uniform(&[d, hidden], rng),
            ff_b1: Tensor::zeros(&[hidden]),
            ff_w2: Tensor::uniform(&[hidden, d], rng),
            ff_b2: Tensor::zeros(&[d]),
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        embed_piece,
        embed_pos,
        blocks,
        intent_w: Tensor::uniform(&[d, config.num_intents], rng),
        intent_b: Tensor::zeros(&[config.num_intents]),
        slot_w: Tensor::uniform(&[d, config.num_slots], rng),
        slot_b: Tensor::zeros(&[config.num_slots]),
    })
}

impl ModelParams {
    /// All-zero parameters for a config (checkpoint loading, optimizer
    /// moment buffers).
    pub fn zeros(config: &ModelConfig) -> Result<ModelParams> {
        config.validate()?;
        let d = config.dim;
        let hidden = 4 * d;
        Ok(ModelParams {
            config: config.clone(),
            embed_piece: Tensor::zeros(&[config.vocab_size, d]),
            embed_pos: Tensor::zeros(&[config.l_max, d]),
            blocks: (0..config.blocks)
                .map(|_| BlockParams {
                    ln1_gain: Tensor::zeros(&[d]),
                    ln1_bias: Tensor::zeros(&[d]),
                    wq: Tensor::zeros(&[d, d]),
                    wk: Tensor::zeros(&[d, d]),
                    wv: Tensor::zeros(&[d, d]),
                    wo: Tensor::zeros(&[d, d]),
                    ln2_gain: Tensor::zeros(&[d]),
                    ln2_bias: Tensor::zeros(&[d]),
                    ff_w1: Tensor::zeros(&[d, hidden]),
                    ff_b1: Tensor::zeros(&[hidden]),
                    ff_w2: Tensor::zeros(&[hidden, d]),
                    ff_b2: Tensor::zeros(&[d]),
                })
                .collect(),
            intent_w: Tensor::zeros(&[d, config.num_intents]),
            intent_b: Tensor::zeros(&[config.num_intents]),
            slot_w: Tensor::zeros(&[d, config.num_slots]),
            slot_b: Tensor::zeros(&[config.num_slots]),
        })
    }

    /// A same-shaped parameter set of zeros (a gradient accumulator).
    pub fn zeros_like(&self) -> ModelParams {
        let mut out = self.clone();
        for (_, tensor) in out.named_tensors_mut() {
            tensor.data_mut().fill(0.0);
        }
        out
    }

    /// All tensors with their canonical names, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed.piece".into(), &self.embed_piece),
            ("embed.pos".into(), &self.embed_pos),
        ];
        for (b, blk) in self.blocks.iter().enumerate() {
            out.push((format!("block{b}.ln1.gain"), &blk.ln1_gain));
            out.push((format!("block{b}.ln1.bias"), &blk.ln1_bias));
            out.push((format!("block{b}.attn.wq"), &blk.wq));
            out.push((format!("block{b}.attn.wk"), &blk.wk));
            out.push((format!("block{b}.attn.wv"), &blk.wv));
            out.push((format!("block{b}.attn.wo"), &blk.wo));
            out.push((format!("block{b}.ln2.gain"), &blk.ln2_gain));
            out.push((format!("block{b}.ln2.bias"), &blk.ln2_bias));
            out.push((format!("block{b}.ff.w1"), &blk.ff_w1));
            out.push((format!("block{b}.ff.b1"), &blk.ff_b1));
            out.push((format!("block{b}.ff.w2"), &blk.ff_w2));
            out.push((format!("block{b}.ff.b2"), &blk.ff_b2));
        }
        out.push(("head.intent.w".into(), &self.intent_w));
        out.push(("head.intent.b".into(), &self.intent_b));
        out.push(("head.slot.w".into(), &self.slot_w));
        out.push(("head.slot.b".into(), &self.slot_b));
        out
    }

    /// Mutable variant of [`Self::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embed.piece".into(), &mut self.embed_piece),
            ("embed.pos".into(), &mut self.embed_pos),
        ];
        for (b, blk) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{b}.ln1.gain"), &mut blk.ln1_gain));
            out.push((format!("block{b}.ln1.bias"), &mut blk.ln1_bias));
            out.push((format!("block{b}.attn.wq"), &mut blk.wq));
            out.push((format!("block{b}.attn.wk"), &mut blk.wk));
            out.push((format!("block{b}.attn.wv"), &mut blk.wv));
            out.push((format!("block{b}.attn.wo"), &mut blk.wo));
            out.push((format!("block{b}.ln2.gain"), &mut blk.ln2_gain));
            out.push((format!("block{b}.ln2.bias"), &mut blk.ln2_bias));
            out.push((format!("block{b}.ff.w1"), &mut blk.ff_w1));
            out.push((format!("block{b}.ff.b1"), &mut blk.ff_b1));
            out.push((format!("block{b}.ff.w2"), &mut blk.ff_w2));
            out.push((format!("block{b}.ff.b2"), &mut blk.ff_b2));
        }
        out.push(("head.intent.w".into(), &mut self.intent_w));
        out.push(("head.intent.b".into(), &mut self.intent_b));
        out.push(("head.slot.w".into(), &mut self.slot_w));
        out.push(("head.slot.b".into(), &mut self.slot_b));
        out
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Error naming the first non-finite tensor, if any.
    pub fn check_finite(&self) -> Result<()> {
        for (name, tensor) in self.named_tensors() {
            if tensor.data().iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite { context: format!("parameter {name}") });
            }
        }
        Ok(())
    }

    /// Add `rhs` entrywise (used for merging per-example gradients).
    pub fn add_assign(&mut self, rhs: &ModelParams) {
        let rhs_tensors = rhs.named_tensors();
        for ((_, mine), (_, theirs)) in self.named_tensors_mut().into_iter().zip(rhs_tensors) {
            for (m, t) in mine.data_mut().iter_mut().zip(theirs.data()) {
                *m += t;
            }
        }
    }

    /// Multiply every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for (_, tensor) in self.named_tensors_mut() {
            for v in tensor.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Euclidean norm over all entries (for global-norm clipping).
    pub fn global_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            dim: 8,
            blocks: 1,
            l_max: 16,
            vocab_size: 20,
            num_intents: 3,
            num_slots: 4,
        }
    }

    #[test]
    fn same_seed_same_params() {
        let config = small_config();
        let a = init_params(&config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_params(&config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let c = init_params(&config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn layer_norm_gains_start_at_one_biases_at_zero() {
        let params = init_params(&small_config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for blk in &params.blocks {
            assert!(blk.ln1_gain.data().iter().all(|&v| v == 1.0));
            assert!(blk.ln2_gain.data().iter().all(|&v| v == 1.0));
            assert!(blk.ln1_bias.data().iter().all(|&v| v == 0.0));
            assert!(blk.ln2_bias.data().iter().all(|&v| v == 0.0));
            assert!(blk.ff_b1.data().iter().all(|&v| v == 0.0));
            assert!(blk.ff_b2.data().iter().all(|&v| v == 0.0));
        }
        assert!(params.intent_b.data().iter().all(|&v| v == 0.0));
        assert!(params.slot_b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        // d=8, 1 block, V=20, L_max=16, 3 intents, 4 slots.
        let config = small_config();
        let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (d, v, l, i, s) = (8usize, 20usize, 16usize, 3usize, 4usize);
        // embeddings + per-block (two layer norms, four d*d projections,
        // d*4d + 4d*d feed-forward with biases) + two linear heads.
        let expected = v * d + l * d + (12 * d * d + 9 * d) + (d + 1) * (i + s);
        assert_eq!(params.num_params(), expected);
        assert_eq!(params.num_params(), 1191);
    }

    #[test]
    fn named_tensor_orders_agree() {
        let mut params = init_params(&small_config(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> =
            params.named_tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names[0], "embed.piece");
        assert_eq!(names[2], "block0.ln1.gain");
        assert_eq!(names.last().unwrap(), "head.slot.b");
    }

    #[test]
    fn zeros_like_and_norm_helpers() {
        let params = init_params(&small_config(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let zeros = params.zeros_like();
        assert_eq!(zeros.num_params(), params.num_params());
        assert_eq!(zeros.global_norm(), 0.0);

        let mut acc = params.zeros_like();
        acc.add_assign(&params);
        acc.add_assign(&params);
        acc.scale(0.5);
        assert_eq!(acc, params);
    }

    #[test]
    fn check_finite_names_the_offending_tensor() {
        let mut params = init_params(&small_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        params.blocks[0].wq.data_mut()[3] = f64::NAN;
        let err = params.check_finite().unwrap_err();
        assert!(err.to_string().contains("block0.attn.wq"), "{err}");
    }

    #[test]
    fn config_validation_rejects_zero_dims() {
        let mut config = small_config();
        config.dim = 0;
        assert!(config.validate().is_err());
        assert!(init_params(&config, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
