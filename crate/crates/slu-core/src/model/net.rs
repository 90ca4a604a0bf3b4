//! Forward and backward passes of the encoder.
//!
//! The forward pass caches every activation the exact reverse pass needs,
//! including the dropout masks, so a cached pass can be replayed bit-for-bit
//! under perturbed parameters — which is what the finite-difference gradient
//! checks do. All arithmetic is 64-bit; activations are flat row-major
//! `Vec<f64>` buffers with explicit dimensions.

use rand::{Rng, RngExt as _};

use super::params::{ModelParams, Tensor};
use super::{EncodedInput, SluDistributions};
use crate::error::{CoreError, Result};

const LN_EPS: f64 = 1e-5;

/// Dropout multipliers for one forward pass: each entry is `0` (dropped) or
/// `1 / keep_probability` (kept, inverted-dropout scaling).
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    /// Over the embedding output, `T x d`.
    embed: Vec<f64>,
    /// Over each block's attention-sublane output, `T x d`.
    attn: Vec<Vec<f64>>,
    /// Over each block's feed-forward-sublane output, `T x d`.
    ff: Vec<Vec<f64>>,
}

/// Gradients of the loss with respect to the head logits, the entry point
/// of the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    /// Over intent logits.
    pub intent_logits: Vec<f64>,
    /// Over each word's slot logits.
    pub slot_logits: Vec<Vec<f64>>,
}

impl HeadGrads {
    /// All-zero upstream for a model emitting `words` slot vectors.
    pub fn zeros(num_intents: usize, num_slots: usize, words: usize) -> Self {
        HeadGrads {
            intent_logits: vec![0.0; num_intents],
            slot_logits: vec![vec![0.0; num_slots]; words],
        }
    }
}

#[derive(Debug)]
struct BlockCache {
    ln1_normed: Vec<f64>,
    ln1_inv_std: Vec<f64>,
    h: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn_probs: Vec<f64>,
    attn_out: Vec<f64>,
    ln2_normed: Vec<f64>,
    ln2_inv_std: Vec<f64>,
    h2: Vec<f64>,
    f1: Vec<f64>,
}

/// Everything the backward pass and a bit-exact replay need.
#[derive(Debug)]
pub struct ForwardCache {
    input: EncodedInput,
    masks: Option<Masks>,
    blocks: Vec<BlockCache>,
    x_final: Vec<f64>,
    dim: usize,
    num_blocks: usize,
}

impl ForwardCache {
    pub fn input(&self) -> &EncodedInput {
        &self.input
    }

    /// The dropout masks used, if the pass ran in train mode.
    pub fn masks(&self) -> Option<&Masks> {
        self.masks.as_ref()
    }
}

/// One full forward pass.
///
/// In train mode with a positive dropout rate, masks are drawn from `rng`
/// (one Bernoulli per activation entry, in a fixed order) and recorded in
/// the cache. Eval mode draws nothing and is fully deterministic.
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    input: &EncodedInput,
    train_mode: bool,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<(SluDistributions, ForwardCache)> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(CoreError::BadConfig(format!(
            "dropout_rate must be in [0, 1), got {dropout_rate}"
        )));
    }
    let masks = if train_mode && dropout_rate > 0.0 {
        Some(sample_masks(
            input.len() * params.config.dim,
            params.config.blocks,
            dropout_rate,
            rng,
        ))
    } else {
        None
    };
    run(params, input.clone(), masks)
}

/// Deterministic forward pass with no dropout (inference / evaluation).
pub fn forward_eval(
    params: &ModelParams,
    input: &EncodedInput,
) -> Result<(SluDistributions, ForwardCache)> {
    run(params, input.clone(), None)
}

/// Re-run the forward computation of `cache` (same input, same dropout
/// masks) under `params`. With the original parameters this reproduces the
/// original outputs bit-for-bit; with perturbed parameters it is the
/// deterministic function the finite-difference oracle probes.
pub fn forward_replay(params: &ModelParams, cache: &ForwardCache) -> Result<SluDistributions> {
    let (dists, _) = run(params, cache.input.clone(), cache.masks.clone())?;
    Ok(dists)
}

fn sample_masks<R: Rng + ?Sized>(
    entries: usize,
    blocks: usize,
    rate: f64,
    rng: &mut R,
) -> Masks {
    let keep = 1.0 - rate;
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    };
    let embed = draw(entries);
    let attn = (0..blocks).map(|_| draw(entries)).collect();
    let ff = (0..blocks).map(|_| draw(entries)).collect();
    Masks { embed, attn, ff }
}

fn apply_mask(x: &mut [f64], mask: Option<&[f64]>) {
    if let Some(mask) = mask {
        for (v, m) in x.iter_mut().zip(mask) {
            *v *= m;
        }
    }
}

fn run(
    params: &ModelParams,
    input: EncodedInput,
    masks: Option<Masks>,
) -> Result<(SluDistributions, ForwardCache)> {
    let config = &params.config;
    let d = config.dim;
    let t = input.len();
    if t == 0 {
        return Err(CoreError::Invalid("empty input sequence".into()));
    }
    if t > config.l_max {
        return Err(CoreError::SequenceTooLong { len: t, max: config.l_max });
    }
    if input.piece_ids[0] != crate::subword::BOS_ID {
        return Err(CoreError::Invalid("input does not start with BOS".into()));
    }
    for &id in &input.piece_ids {
        if id >= config.vocab_size {
            return Err(CoreError::Invalid(format!(
                "piece id {id} out of range for vocab size {}",
                config.vocab_size
            )));
        }
    }
    let mut prev = 0usize; // BOS position; word positions start strictly after it
    for &pos in &input.first_subword_index {
        if pos <= prev || pos >= t {
            return Err(CoreError::Invalid(
                "first_subword_index must be strictly increasing within 1..len".into(),
            ));
        }
        prev = pos;
    }

    // Embedding: piece vector + position vector, then dropout.
    let mut x = vec![0.0; t * d];
    for (pos, &id) in input.piece_ids.iter().enumerate() {
        let piece = params.embed_piece.row(id);
        let position = params.embed_pos.row(pos);
        for c in 0..d {
            x[pos * d + c] = piece[c] + position[c];
        }
    }
    apply_mask(&mut x, masks.as_ref().map(|m| m.embed.as_slice()));
    check_finite(&x, "embeddings")?;

    let scale = 1.0 / (d as f64).sqrt();
    let mut block_caches = Vec::with_capacity(config.blocks);
    for (b, blk) in params.blocks.iter().enumerate() {
        // Attention sublane with pre-norm and residual.
        let (h, ln1_normed, ln1_inv_std) =
            layer_norm(&x, t, d, blk.ln1_gain.data(), blk.ln1_bias.data());
        let q = matmul(&h, t, d, blk.wq.data(), d);
        let k = matmul(&h, t, d, blk.wk.data(), d);
        let v = matmul(&h, t, d, blk.wv.data(), d);
        let mut scores = matmul_a_bt(&q, t, d, &k, t);
        for s in scores.iter_mut() {
            *s *= scale;
        }
        softmax_rows(&mut scores, t);
        let attn_probs = scores;
        let attn_out = matmul(&attn_probs, t, t, &v, d);
        let mut o = matmul(&attn_out, t, d, blk.wo.data(), d);
        apply_mask(&mut o, masks.as_ref().map(|m| m.attn[b].as_slice()));
        let x_mid: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();

        // Feed-forward sublane with pre-norm and residual.
        let (h2, ln2_normed, ln2_inv_std) =
            layer_norm(&x_mid, t, d, blk.ln2_gain.data(), blk.ln2_bias.data());
        let hidden = 4 * d;
        let mut f1 = matmul(&h2, t, d, blk.ff_w1.data(), hidden);
        add_bias(&mut f1, blk.ff_b1.data());
        for v in f1.iter_mut() {
            *v = v.max(0.0);
        }
        let mut f2 = matmul(&f1, t, hidden, blk.ff_w2.data(), d);
        add_bias(&mut f2, blk.ff_b2.data());
        apply_mask(&mut f2, masks.as_ref().map(|m| m.ff[b].as_slice()));
        let x_out: Vec<f64> = x_mid.iter().zip(&f2).map(|(a, b)| a + b).collect();
        check_finite(&x_out, &format!("block {b} output"))?;

        block_caches.push(BlockCache {
            ln1_normed,
            ln1_inv_std,
            h,
            q,
            k,
            v,
            attn_probs,
            attn_out,
            ln2_normed,
            ln2_inv_std,
            h2,
            f1,
        });
        x = x_out;
    }

    // Intent head reads BOS; slot head reads each word's first piece.
    let intent_logits = affine_row(&x[0..d], &params.intent_w, &params.intent_b);
    check_finite(&intent_logits, "intent logits")?;
    let intent_dist = softmax(&intent_logits);
    let mut slot_dists = Vec::with_capacity(input.word_count());
    for &pos in &input.first_subword_index {
        let logits = affine_row(&x[pos * d..(pos + 1) * d], &params.slot_w, &params.slot_b);
        check_finite(&logits, "slot logits")?;
        slot_dists.push(softmax(&logits));
    }

    let cache = ForwardCache {
        input,
        masks,
        blocks: block_caches,
        x_final: x,
        dim: d,
        num_blocks: config.blocks,
    };
    Ok((SluDistributions { intent_dist, slot_dists }, cache))
}

/// Exact gradients of every parameter given upstream gradients on the head
/// logits, reusing the cached activations and dropout masks.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    upstream: &HeadGrads,
) -> Result<ModelParams> {
    let config = &params.config;
    let d = config.dim;
    let t = cache.input.len();
    if cache.dim != d || cache.num_blocks != config.blocks {
        return Err(CoreError::ShapeMismatch(format!(
            "cache built for dim {} / {} blocks, params have dim {} / {} blocks",
            cache.dim, cache.num_blocks, d, config.blocks
        )));
    }
    if upstream.intent_logits.len() != config.num_intents {
        return Err(CoreError::ShapeMismatch(format!(
            "intent upstream has {} entries, model has {} intents",
            upstream.intent_logits.len(),
            config.num_intents
        )));
    }
    if upstream.slot_logits.len() != cache.input.word_count() {
        return Err(CoreError::ShapeMismatch(format!(
            "slot upstream has {} entries, input has {} words",
            upstream.slot_logits.len(),
            cache.input.word_count()
        )));
    }
    for g in &upstream.slot_logits {
        if g.len() != config.num_slots {
            return Err(CoreError::ShapeMismatch(format!(
                "slot upstream row has {} entries, model has {} slots",
                g.len(),
                config.num_slots
            )));
        }
    }

    let mut grads = params.zeros_like();
    let mut dx = vec![0.0; t * d];

    // Heads.
    accumulate_head(
        &cache.x_final[0..d],
        &upstream.intent_logits,
        &params.intent_w,
        &mut grads.intent_w,
        &mut grads.intent_b,
        &mut dx[0..d],
    );
    for (w, du) in upstream.slot_logits.iter().enumerate() {
        let pos = cache.input.first_subword_index[w];
        // Split-borrow dance: take the slot-head row out of dx.
        let row = &mut dx[pos * d..(pos + 1) * d];
        accumulate_head(
            &cache.x_final[pos * d..(pos + 1) * d],
            du,
            &params.slot_w,
            &mut grads.slot_w,
            &mut grads.slot_b,
            row,
        );
    }

    let scale = 1.0 / (d as f64).sqrt();
    for (b, (blk, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gblk = &mut grads.blocks[b];
        let hidden = 4 * d;
        let masks = cache.masks.as_ref();

        // Feed-forward sublane: x_out = x_mid + mask_ff . (relu(h2 W1 + b1) W2 + b2).
        let mut d_f2 = dx.clone();
        apply_mask(&mut d_f2, masks.map(|m| m.ff[b].as_slice()));
        add_colsum(gblk.ff_b2.data_mut(), &d_f2, t, d);
        add_matmul_at_b(gblk.ff_w2.data_mut(), &bc.f1, t, hidden, &d_f2, d);
        let mut d_u = matmul_a_bt(&d_f2, t, d, blk.ff_w2.data(), hidden);
        for (g, &act) in d_u.iter_mut().zip(&bc.f1) {
            if act <= 0.0 {
                *g = 0.0;
            }
        }
        add_colsum(gblk.ff_b1.data_mut(), &d_u, t, hidden);
        add_matmul_at_b(gblk.ff_w1.data_mut(), &bc.h2, t, d, &d_u, hidden);
        let d_h2 = matmul_a_bt(&d_u, t, hidden, blk.ff_w1.data(), d);
        let d_ln2_in = layer_norm_backward(
            &d_h2,
            &bc.ln2_normed,
            &bc.ln2_inv_std,
            t,
            d,
            blk.ln2_gain.data(),
            gblk.ln2_gain.data_mut(),
            gblk.ln2_bias.data_mut(),
        );
        // Residual: grad on x_mid is the pass-through plus the LN2 path.
        let d_x_mid: Vec<f64> = dx.iter().zip(&d_ln2_in).map(|(a, b)| a + b).collect();

        // Attention sublane: x_mid = x_in + mask_attn . ((A v) Wo).
        let mut d_o = d_x_mid.clone();
        apply_mask(&mut d_o, masks.map(|m| m.attn[b].as_slice()));
        add_matmul_at_b(gblk.wo.data_mut(), &bc.attn_out, t, d, &d_o, d);
        let d_attn_out = matmul_a_bt(&d_o, t, d, blk.wo.data(), d);
        let d_a = matmul_a_bt(&d_attn_out, t, d, &bc.v, t);
        let d_v = matmul_at_b(&bc.attn_probs, t, t, &d_attn_out, d);
        // Row-softmax backward.
        let mut d_scores = vec![0.0; t * t];
        for i in 0..t {
            let row = &bc.attn_probs[i * t..(i + 1) * t];
            let drow = &d_a[i * t..(i + 1) * t];
            let dot: f64 = row.iter().zip(drow).map(|(p, g)| p * g).sum();
            for j in 0..t {
                d_scores[i * t + j] = row[j] * (drow[j] - dot) * scale;
            }
        }
        let d_q = matmul(&d_scores, t, t, &bc.k, d);
        let d_k = matmul_at_b(&d_scores, t, t, &bc.q, d);
        add_matmul_at_b(gblk.wq.data_mut(), &bc.h, t, d, &d_q, d);
        add_matmul_at_b(gblk.wk.data_mut(), &bc.h, t, d, &d_k, d);
        add_matmul_at_b(gblk.wv.data_mut(), &bc.h, t, d, &d_v, d);
        let mut d_h = matmul_a_bt(&d_q, t, d, blk.wq.data(), d);
        for (g, v) in d_h.iter_mut().zip(matmul_a_bt(&d_k, t, d, blk.wk.data(), d)) {
            *g += v;
        }
        for (g, v) in d_h.iter_mut().zip(matmul_a_bt(&d_v, t, d, blk.wv.data(), d)) {
            *g += v;
        }
        let d_ln1_in = layer_norm_backward(
            &d_h,
            &bc.ln1_normed,
            &bc.ln1_inv_std,
            t,
            d,
            blk.ln1_gain.data(),
            gblk.ln1_gain.data_mut(),
            gblk.ln1_bias.data_mut(),
        );
        dx = d_x_mid.iter().zip(&d_ln1_in).map(|(a, b)| a + b).collect();
    }

    // Embedding gradients, back through the embedding dropout.
    apply_mask(&mut dx, cache.masks.as_ref().map(|m| m.embed.as_slice()));
    for (pos, &id) in cache.input.piece_ids.iter().enumerate() {
        let src = &dx[pos * d..(pos + 1) * d];
        for (g, v) in grads.embed_piece.row_mut(id).iter_mut().zip(src) {
            *g += v;
        }
        for (g, v) in grads.embed_pos.row_mut(pos).iter_mut().zip(src) {
            *g += v;
        }
    }

    Ok(grads)
}

/// Head backward: `logits = x_row W + b`. Accumulates into the weight and
/// bias gradients and adds `W du` into the input-row gradient.
fn accumulate_head(
    x_row: &[f64],
    du: &[f64],
    w: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
    dx_row: &mut [f64],
) {
    let cols = du.len();
    for (r, &xv) in x_row.iter().enumerate() {
        let wrow = w.row(r);
        let gwrow = gw.row_mut(r);
        let mut acc = 0.0;
        for c in 0..cols {
            gwrow[c] += xv * du[c];
            acc += wrow[c] * du[c];
        }
        dx_row[r] += acc;
    }
    for (g, &v) in gb.data_mut().iter_mut().zip(du) {
        *g += v;
    }
}

/// `logits = x_row W + b` for one row.
fn affine_row(x_row: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let cols = b.len();
    let mut out = b.data().to_vec();
    for (r, &xv) in x_row.iter().enumerate() {
        let wrow = w.row(r);
        for c in 0..cols {
            out[c] += xv * wrow[c];
        }
    }
    out
}

/// `(m x k)(k x n)` row-major matrix product.
fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `a b^T` where `a` is `m x k` and `b` is `n x k`; result `m x n`.
fn matmul_a_bt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T b` where `a` is `m x k` and `b` is `m x n`; result `k x n`.
fn matmul_at_b(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    add_matmul_at_b(&mut out, a, m, k, b, n);
    out
}

/// `out += a^T b` (shapes as in [`matmul_at_b`]).
fn add_matmul_at_b(out: &mut [f64], a: &[f64], m: usize, k: usize, b: &[f64], n: usize) {
    for t in 0..m {
        let arow = &a[t * k..(t + 1) * k];
        let brow = &b[t * n..(t + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Column sums of an `m x n` matrix added into `out` (length `n`).
fn add_colsum(out: &mut [f64], x: &[f64], m: usize, n: usize) {
    for r in 0..m {
        for (o, v) in out.iter_mut().zip(&x[r * n..(r + 1) * n]) {
            *o += v;
        }
    }
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    for row in x.chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Per-row layer normalization. Returns `(out, normed, inv_std)` where
/// `normed` is the pre-gain normalized activation the backward pass needs.
fn layer_norm(
    x: &[f64],
    t: usize,
    d: usize,
    gain: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; t * d];
    let mut normed = vec![0.0; t * d];
    let mut inv_stds = Vec::with_capacity(t);
    for r in 0..t {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();
        inv_stds.push(inv_std);
        for c in 0..d {
            let n = (row[c] - mean) * inv_std;
            normed[r * d + c] = n;
            out[r * d + c] = gain[c] * n + bias[c];
        }
    }
    (out, normed, inv_stds)
}

/// Exact layer-norm backward. Accumulates gain/bias gradients and returns
/// the gradient on the layer input.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    d_out: &[f64],
    normed: &[f64],
    inv_std: &[f64],
    t: usize,
    d: usize,
    gain: &[f64],
    d_gain: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; t * d];
    for r in 0..t {
        let dy = &d_out[r * d..(r + 1) * d];
        let nh = &normed[r * d..(r + 1) * d];
        for c in 0..d {
            d_gain[c] += dy[c] * nh[c];
            d_bias[c] += dy[c];
        }
        // d nh = dy . gain; dx = inv_std (d nh - mean(d nh) - nh mean(d nh . nh))
        let dnh: Vec<f64> = dy.iter().zip(gain).map(|(g, w)| g * w).collect();
        let m1 = dnh.iter().sum::<f64>() / d as f64;
        let m2 = dnh.iter().zip(nh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[r * d + c] = inv_std[r] * (dnh[c] - m1 - nh[c] * m2);
        }
    }
    dx
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / total).collect()
}

fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

fn check_finite(xs: &[f64], context: &str) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite { context: context.to_string() });
    }
    Ok(())
}
