//! The training loop: batching, strategy sampling, view assembly, the
//! combined objective, Adam updates, and dev-set checkpoint selection.
//!
//! Each step processes one shuffled batch. For every example the loop
//! builds the original view (canonical Viterbi segmentation) and one
//! augmented view — a subword re-sampling or a machine translation, drawn
//! from the configured strategy distribution — runs both forward with
//! independent dropout masks, and accumulates the combined objective's
//! gradients. One Adam update is applied per batch on the mean gradient.
//! Every `eval_every` steps the model is scored on the dev set; the
//! checkpoint with the highest dev exact-match accuracy (earliest on ties)
//! is returned.
//!
//! Everything is driven by a single seeded RNG stream, so a run is a pure
//! function of (config, data): identical inputs give bitwise-identical
//! logs and checkpoint bytes.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::IntentOnlyRecord;
use crate::augment::{
    encode_words, mt_augment, mt_available, sample_strategy, subword_augment, AugmentedView,
    StrategyDistribution,
};
use crate::corpus::{Dataset, Inventories, ParallelIndex};
use crate::error::{CoreError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{
    backward, forward, init_params, Checkpoint, EncodedInput, ModelConfig, ModelParams,
};
use crate::objective::{total_loss, AugmentKind, AugmentedDists, LossWeights};
use crate::subword::SubwordModel;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Everything a training run is parameterized by. Serializes as flat JSON;
/// missing keys take the defaults below, unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    /// Slot-loss coefficient.
    pub lambda1: f64,
    /// Intent-consistency coefficient.
    pub lambda2: f64,
    /// Slot-consistency coefficient.
    pub lambda3: f64,
    /// Subword sampling temperature (0 = uniform over segmentations).
    pub alpha: f64,
    pub strategy_distribution: StrategyDistribution,
    pub seed: u64,
    pub grad_clip_norm: f64,
    /// Include the augmented view's labels in the task losses (averaging
    /// the two views), not just in the consistency terms.
    pub task_loss_on_augmented: bool,
    /// Model width.
    pub dim: usize,
    /// Number of residual blocks.
    pub blocks: usize,
    /// Maximum encoded sequence length, BOS included.
    pub l_max: usize,
    /// Dev evaluation cadence, in optimizer steps.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            dropout_rate: 0.1,
            lambda1: 2.0,
            lambda2: 3.0,
            lambda3: 3.0,
            alpha: 0.2,
            strategy_distribution: StrategyDistribution::default(),
            seed: 0,
            grad_clip_norm: 5.0,
            task_loss_on_augmented: true,
            dim: 32,
            blocks: 2,
            l_max: 64,
            eval_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("dim", self.dim),
            ("blocks", self.blocks),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(CoreError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.l_max < 2 {
            return Err(CoreError::BadConfig(
                "l_max must be at least 2 (BOS plus one piece)".into(),
            ));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("grad_clip_norm", self.grad_clip_norm),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(CoreError::BadConfig(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::BadConfig(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(CoreError::BadConfig(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        self.weights().validate()?;
        self.strategy_distribution.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    /// The model shape this config trains, completed with the data-derived
    /// sizes.
    pub fn model_config(
        &self,
        vocab_size: usize,
        num_intents: usize,
        num_slots: usize,
    ) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            blocks: self.blocks,
            l_max: self.l_max,
            vocab_size,
            num_intents,
            num_slots,
        }
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(json)
            .map_err(|e| CoreError::BadConfig(format!("config JSON: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Adam moment accumulators, shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(OptimizerState {
            m: ModelParams::zeros(config)?,
            v: ModelParams::zeros(config)?,
            step: 0,
        })
    }
}

/// One Adam update: clip the gradient to `clip_norm` by global norm, then
/// apply the bias-corrected moment update at rate `lr`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    clip_norm: f64,
) -> Result<()> {
    if !lr.is_finite() || lr <= 0.0 || !clip_norm.is_finite() || clip_norm <= 0.0 {
        return Err(CoreError::BadConfig(format!(
            "adam requires positive finite lr and clip norm, got lr={lr} clip={clip_norm}"
        )));
    }
    if grads.config != params.config || state.m.config != params.config {
        return Err(CoreError::ShapeMismatch(
            "gradient / optimizer-state shapes do not match the parameters".into(),
        ));
    }
    grads.check_finite().map_err(|_| CoreError::NonFinite {
        context: "gradients before optimizer update".into(),
    })?;

    let norm = grads.global_norm();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    state.step += 1;
    let correction1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let correction2 = 1.0 - ADAM_BETA2.powi(state.step as i32);

    let mut p_tensors = params.named_tensors_mut();
    let mut m_tensors = state.m.named_tensors_mut();
    let mut v_tensors = state.v.named_tensors_mut();
    let g_tensors = grads.named_tensors();
    for (((_, p), (_, g)), ((_, m), (_, v))) in p_tensors
        .iter_mut()
        .zip(&g_tensors)
        .zip(m_tensors.iter_mut().zip(v_tensors.iter_mut()))
    {
        let (p, g) = (p.data_mut(), g.data());
        let (m, v) = (m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let g = g[i] * scale;
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Batch-mean loss terms for one optimizer step.
///
/// `total` is recombined from the logged term means
/// (`l_intent + λ1·l_slot + λ2·r_intent + λ3·r_slot`), so zero-weighted
/// terms contribute exactly zero to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// Examples in this batch.
    pub examples: usize,
    pub l_intent: f64,
    pub l_slot: f64,
    pub r_intent: f64,
    pub r_slot: f64,
    pub total: f64,
    /// Examples whose augmented view was a machine translation.
    pub mt_views: usize,
    /// Examples whose augmented view was a subword re-sampling.
    pub subword_views: usize,
}

/// One dev evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Optimizer step after which the evaluation ran.
    pub step: u64,
    pub report: MetricsReport,
}

/// Closing line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub evals: usize,
    /// Index (into the eval records) of the selected checkpoint: maximal
    /// dev exact-match accuracy, earliest on ties.
    pub best_eval: usize,
    pub best_step: u64,
    pub best_dev_ema: f64,
    /// Training examples excluded because their encoding exceeded `l_max`.
    pub skipped_examples: usize,
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    Step(StepRecord),
    Eval(EvalRecord),
    Summary(TrainSummary),
}

/// Full record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub summary: TrainSummary,
}

impl TrainLog {
    /// Serialize as JSONL: step and eval records interleaved in execution
    /// order, then the summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |event: &TrainEvent| {
            out.push_str(&serde_json::to_string(event).expect("log event serializes"));
            out.push('\n');
        };
        let mut next_eval = 0;
        for step in &self.steps {
            line(&TrainEvent::Step(step.clone()));
            while next_eval < self.evals.len() && self.evals[next_eval].step == step.step {
                line(&TrainEvent::Eval(self.evals[next_eval].clone()));
                next_eval += 1;
            }
        }
        for eval in &self.evals[next_eval..] {
            line(&TrainEvent::Eval(eval.clone()));
        }
        line(&TrainEvent::Summary(self.summary.clone()));
        out
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Index of the eval with maximal dev exact-match accuracy; earliest wins
/// ties.
pub fn select_best(evals: &[EvalRecord]) -> Result<usize> {
    if evals.is_empty() {
        return Err(CoreError::Invalid("no dev evaluations recorded".into()));
    }
    let mut best = 0;
    for (i, eval) in evals.iter().enumerate().skip(1) {
        if eval.report.ema > evals[best].report.ema {
            best = i;
        }
    }
    Ok(best)
}

/// The data a training run consumes.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    pub train: &'a Dataset,
    pub dev: &'a Dataset,
    pub subword: &'a SubwordModel,
    /// Cross-locale counterparts of the training examples (built over the
    /// training data), the machine-translation view pool.
    pub parallel: &'a ParallelIndex,
    /// Translations usable only for intent supervision.
    pub intent_only: &'a [IntentOnlyRecord],
}

/// A finished run: the selected checkpoint and the full log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

struct PreparedExample {
    /// Index into the training dataset.
    index: usize,
    encoded: EncodedInput,
    intent: usize,
    slots: Vec<usize>,
}

struct BestState {
    eval: usize,
    step: u64,
    ema: f64,
    params: ModelParams,
}

/// Run the full training loop.
///
/// Training examples whose canonical encoding exceeds `l_max` are skipped
/// and counted in the summary. The returned checkpoint is the dev-best one
/// per [`select_best`].
pub fn train(config: &TrainConfig, inputs: &TrainInputs<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    if inputs.train.is_empty() || inputs.dev.is_empty() {
        return Err(CoreError::EmptyDataset);
    }

    // Label inventories: union over train, dev, and the intent-only pool, so
    // every label any view can carry has an index.
    let mut inventories = Inventories::from_datasets([inputs.train, inputs.dev]);
    let mut intents: BTreeSet<String> = inventories.intents.iter().cloned().collect();
    intents.extend(inputs.intent_only.iter().map(|r| r.intent.clone()));
    inventories.intents = intents.into_iter().collect();

    let model_config = config.model_config(
        inputs.subword.vocab_size(),
        inventories.intents.len(),
        inventories.slots.len(),
    );
    let weights = config.weights();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(&model_config, &mut rng)?;
    let mut optimizer = OptimizerState::new(&model_config)?;

    // Canonical (Viterbi) encodings and label indices, computed once.
    let mut prepared: Vec<PreparedExample> = Vec::with_capacity(inputs.train.len());
    let mut skipped_examples = 0usize;
    for (index, ex) in inputs.train.examples.iter().enumerate() {
        match encode_words(&ex.words, inputs.subword, config.l_max) {
            Ok(encoded) => {
                let intent = lookup(&inventories.intents, &ex.intent, "intent")?;
                let slots = ex
                    .slots
                    .iter()
                    .map(|l| lookup(&inventories.slots, l, "slot"))
                    .collect::<Result<Vec<_>>>()?;
                prepared.push(PreparedExample { index, encoded, intent, slots });
            }
            Err(CoreError::SequenceTooLong { .. }) => skipped_examples += 1,
            Err(e) => return Err(e),
        }
    }
    if prepared.is_empty() {
        return Err(CoreError::EmptyDataset);
    }

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut evals: Vec<EvalRecord> = Vec::new();
    let mut best: Option<BestState> = None;
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = ModelParams::zeros(&model_config)?;
            let mut sums = [0.0f64; 4];
            let mut mt_views = 0usize;
            let mut subword_views = 0usize;

            for &pi in batch {
                let prep = &prepared[pi];
                let example = &inputs.train.examples[prep.index];

                let available = mt_available(example, inputs.parallel, inputs.intent_only);
                let strategy =
                    sample_strategy(&config.strategy_distribution, available, &mut rng);
                let view = build_view(config, inputs, example, prep, strategy, &mut rng)?;
                match view.kind {
                    AugmentKind::MachineTranslation => mt_views += 1,
                    AugmentKind::SubwordSampling => subword_views += 1,
                }

                let (dist_orig, cache_orig) =
                    forward(&params, &prep.encoded, true, config.dropout_rate, &mut rng)?;
                let (dist_aug, cache_aug) =
                    forward(&params, &view.encoded, true, config.dropout_rate, &mut rng)?;

                let aug_intent = if config.task_loss_on_augmented {
                    Some(lookup(&inventories.intents, &view.intent, "intent")?)
                } else {
                    None
                };
                let aug_slots = if config.task_loss_on_augmented {
                    view.slots
                        .as_ref()
                        .map(|labels| {
                            labels
                                .iter()
                                .map(|l| lookup(&inventories.slots, l, "slot"))
                                .collect::<Result<Vec<_>>>()
                        })
                        .transpose()?
                } else {
                    None
                };

                let loss = total_loss(
                    &dist_orig,
                    prep.intent,
                    &prep.slots,
                    Some(AugmentedDists {
                        dists: &dist_aug,
                        kind: view.kind,
                        intent_label: aug_intent,
                        slot_labels: aug_slots.as_deref(),
                    }),
                    &weights,
                )?;
                sums[0] += loss.breakdown.l_intent;
                sums[1] += loss.breakdown.l_slot;
                sums[2] += loss.breakdown.r_intent;
                sums[3] += loss.breakdown.r_slot;

                grads.add_assign(&backward(&params, &cache_orig, &loss.original_grads)?);
                let aug_grads = loss
                    .augmented_grads
                    .expect("augmented view always present in training");
                grads.add_assign(&backward(&params, &cache_aug, &aug_grads)?);
            }

            grads.scale(1.0 / batch.len() as f64);
            adam_step(
                &mut params,
                &grads,
                &mut optimizer,
                config.learning_rate,
                config.grad_clip_norm,
            )?;
            step += 1;

            let n = batch.len() as f64;
            let (l_intent, l_slot) = (sums[0] / n, sums[1] / n);
            let (r_intent, r_slot) = (sums[2] / n, sums[3] / n);
            steps.push(StepRecord {
                step,
                epoch,
                examples: batch.len(),
                l_intent,
                l_slot,
                r_intent,
                r_slot,
                total: l_intent
                    + config.lambda1 * l_slot
                    + config.lambda2 * r_intent
                    + config.lambda3 * r_slot,
                mt_views,
                subword_views,
            });

            if step % config.eval_every as u64 == 0 {
                run_eval(&params, inputs, &inventories, step, &mut evals, &mut best)?;
            }
        }
    }

    // Always close with an evaluation of the final parameters, so short
    // runs still have a checkpoint to select.
    if evals.last().map(|e| e.step) != Some(step) {
        run_eval(&params, inputs, &inventories, step, &mut evals, &mut best)?;
    }

    let best = best.expect("at least one evaluation ran");
    debug_assert_eq!(select_best(&evals)?, best.eval);
    let summary = TrainSummary {
        steps: step,
        evals: evals.len(),
        best_eval: best.eval,
        best_step: best.step,
        best_dev_ema: best.ema,
        skipped_examples,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params: best.params,
            intents: inventories.intents,
            slots: inventories.slots,
        },
        log: TrainLog { steps, evals, summary },
    })
}

/// Build the augmented view for one example. A machine-translation draw
/// falls back to subword sampling when no usable counterpart comes out of
/// the pool, and an over-long sampled segmentation falls back to the
/// canonical one (an identity view), so every example always has a view.
fn build_view(
    config: &TrainConfig,
    inputs: &TrainInputs<'_>,
    example: &crate::corpus::Example,
    prep: &PreparedExample,
    strategy: AugmentKind,
    rng: &mut ChaCha8Rng,
) -> Result<AugmentedView> {
    if strategy == AugmentKind::MachineTranslation {
        if let Some(view) = mt_augment(
            example,
            inputs.parallel,
            inputs.intent_only,
            inputs.subword,
            config.l_max,
            rng,
        )? {
            return Ok(view);
        }
    }
    match subword_augment(example, inputs.subword, config.alpha, config.l_max, rng) {
        Ok(view) => Ok(view),
        Err(CoreError::SequenceTooLong { .. }) => Ok(AugmentedView {
            kind: AugmentKind::SubwordSampling,
            encoded: prep.encoded.clone(),
            intent: example.intent.clone(),
            slots: Some(example.slots.clone()),
            align_slots: true,
        }),
        Err(e) => Err(e),
    }
}

fn lookup(inventory: &[String], label: &str, what: &str) -> Result<usize> {
    inventory
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| CoreError::Invalid(format!("{what} label {label:?} not in inventory")))
}

fn run_eval(
    params: &ModelParams,
    inputs: &TrainInputs<'_>,
    inventories: &Inventories,
    step: u64,
    evals: &mut Vec<EvalRecord>,
    best: &mut Option<BestState>,
) -> Result<()> {
    let report = evaluate(
        params,
        inputs.subword,
        inputs.dev,
        &inventories.intents,
        &inventories.slots,
    )?;
    let improved = best.as_ref().is_none_or(|b| report.ema > b.ema);
    if improved {
        *best = Some(BestState {
            eval: evals.len(),
            step,
            ema: report.ema,
            params: params.clone(),
        });
    }
    evals.push(EvalRecord { step, report });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{link_parallel, Example};
    use crate::metrics::MetricsCounts;
    use crate::model::checkpoint_bytes;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let config = TrainConfig::default();
        config.validate().unwrap();
        assert_eq!(config.batch_size, 32);
        assert_eq!(config.dropout_rate, 0.1);
        assert_eq!(config.lambda1, 2.0);
        assert_eq!(config.lambda2, 3.0);
        assert_eq!(config.lambda3, 3.0);
        let json = serde_json::to_string(&config).unwrap();
        assert_eq!(TrainConfig::from_json_str(&json).unwrap(), config);
    }

    #[test]
    fn partial_config_takes_defaults_and_unknown_keys_are_rejected() {
        let config = TrainConfig::from_json_str(r#"{"epochs": 3, "seed": 9}"#).unwrap();
        assert_eq!(config.epochs, 3);
        assert_eq!(config.seed, 9);
        assert_eq!(config.batch_size, 32);
        let err = TrainConfig::from_json_str(r#"{"epochs": 3, "epoch": 4}"#).unwrap_err();
        assert!(matches!(err, CoreError::BadConfig(_)), "{err}");
        assert!(TrainConfig::from_json_str(r#"{"learning_rate": 0.0}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"dropout_rate": 1.0}"#).is_err());
        assert!(TrainConfig::from_json_str(r#"{"lambda2": -1.0}"#).is_err());
    }

    fn scalar_setup() -> (ModelParams, ModelParams, OptimizerState) {
        // Smallest legal model; we overwrite one tensor entry and zero the
        // rest to emulate scalar examples.
        let config = ModelConfig {
            dim: 1,
            blocks: 1,
            l_max: 2,
            vocab_size: 4,
            num_intents: 1,
            num_slots: 1,
        };
        let params = ModelParams::zeros(&config).unwrap();
        let grads = ModelParams::zeros(&config).unwrap();
        let state = OptimizerState::new(&config).unwrap();
        (params, grads, state)
    }

    #[test]
    fn zero_gradients_leave_parameters_and_moments_unchanged() {
        let (mut params, grads, mut state) = scalar_setup();
        params.embed_piece.data_mut()[0] = 1.0;
        let before = params.clone();
        adam_step(&mut params, &grads, &mut state, 0.1, 1.0).unwrap();
        assert_eq!(params, before);
        assert!(state.m.named_tensors().iter().all(|(_, t)| t.data().iter().all(|&x| x == 0.0)));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_adam_step_moves_a_unit_gradient_by_almost_lr() {
        let (mut params, mut grads, mut state) = scalar_setup();
        params.embed_piece.data_mut()[0] = 1.0;
        grads.embed_piece.data_mut()[0] = 1.0;
        adam_step(&mut params, &grads, &mut state, 0.1, 10.0).unwrap();
        // Bias-corrected first step: update = lr * 1 / (1 + eps).
        let expected = 1.0 - 0.1 / (1.0 + ADAM_EPS);
        assert!((params.embed_piece.data()[0] - expected).abs() < 1e-15);
        assert!((params.embed_piece.data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn clipping_scales_gradients_before_the_moments() {
        let (mut params, mut grads, mut state) = scalar_setup();
        // Two entries of 6 and 8: global norm 10, clip 1 → scale 0.1.
        grads.embed_piece.data_mut()[0] = 6.0;
        grads.embed_piece.data_mut()[1] = 8.0;
        adam_step(&mut params, &grads, &mut state, 0.1, 1.0).unwrap();
        let m0 = state.m.embed_piece.data()[0];
        let v0 = state.v.embed_piece.data()[0];
        assert!((m0 - (1.0 - ADAM_BETA1) * 0.6).abs() < 1e-15, "m0 = {m0}");
        assert!((v0 - (1.0 - ADAM_BETA2) * 0.36).abs() < 1e-15, "v0 = {v0}");
    }

    #[test]
    fn non_finite_gradients_abort_the_update() {
        let (mut params, mut grads, mut state) = scalar_setup();
        grads.intent_w.data_mut()[0] = f64::NAN;
        let before = params.clone();
        let err = adam_step(&mut params, &grads, &mut state, 0.1, 1.0).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite { .. }));
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }

    fn eval_with_ema(step: u64, ema: f64) -> EvalRecord {
        EvalRecord {
            step,
            report: MetricsReport {
                intent_acc: 1.0,
                slot_f1: 1.0,
                ema,
                counts: MetricsCounts {
                    utterances: 1,
                    gold_spans: 0,
                    predicted_spans: 0,
                    matched_spans: 0,
                    skipped: 0,
                },
            },
        }
    }

    #[test]
    fn best_checkpoint_is_the_dev_ema_argmax_earliest_on_ties() {
        assert_eq!(select_best(&[eval_with_ema(1, 0.4)]).unwrap(), 0);
        let history: Vec<EvalRecord> = [0.30, 0.50, 0.40]
            .iter()
            .enumerate()
            .map(|(i, &e)| eval_with_ema(i as u64 + 1, e))
            .collect();
        assert_eq!(select_best(&history).unwrap(), 1);
        let tie: Vec<EvalRecord> =
            [0.5, 0.5].iter().enumerate().map(|(i, &e)| eval_with_ema(i as u64, e)).collect();
        assert_eq!(select_best(&tie).unwrap(), 0);
        let late: Vec<EvalRecord> = [0.1, 0.9, 0.9, 0.2]
            .iter()
            .enumerate()
            .map(|(i, &e)| eval_with_ema(i as u64, e))
            .collect();
        assert_eq!(select_best(&late).unwrap(), 1);
        assert!(select_best(&[]).is_err());
    }

    /// A learnable bilingual toy problem: the intent is decided by the
    /// first word, slots by word identity, and ids pair "en" with "xx"
    /// translations of the same utterance.
    fn toy_world() -> (Dataset, Dataset, SubwordModel) {
        let en_words: [(&str, &str); 4] =
            [("alarm", "O"), ("play", "O"), ("five", "time"), ("jazz", "genre")];
        let xx_of = |w: &str| format!("{w}x");
        let mut train = Vec::new();
        let mut dev = Vec::new();
        let mut id = 0u64;
        for &(first, _) in &en_words[..2] {
            for &(second, slot) in &en_words[2..] {
                for copy in 0..3 {
                    let intent = first;
                    let words = [first.to_string(), second.to_string()];
                    let slots = ["O".to_string(), slot.to_string()];
                    let en = Example {
                        id,
                        locale: "en".into(),
                        words: words.to_vec(),
                        slots: slots.to_vec(),
                        intent: intent.into(),
                    };
                    let xx = Example {
                        id,
                        locale: "xx".into(),
                        words: words.iter().map(|w| xx_of(w)).collect(),
                        slots: slots.to_vec(),
                        intent: intent.into(),
                    };
                    id += 1;
                    if copy == 2 {
                        dev.push(en);
                        dev.push(xx);
                    } else {
                        train.push(en);
                        train.push(xx);
                    }
                }
            }
        }
        let train = Dataset::from_examples(train).unwrap();
        let dev = Dataset::from_examples(dev).unwrap();
        // Single chars plus a couple of multi-char pieces so subword
        // sampling has real variety.
        let mut pieces: BTreeSet<String> = BTreeSet::new();
        for ds in [&train, &dev] {
            for ex in &ds.examples {
                for w in &ex.words {
                    pieces.extend(w.chars().map(|c| c.to_string()));
                }
            }
        }
        pieces.insert("al".into());
        pieces.insert("ja".into());
        pieces.insert("zx".into());
        let n = pieces.len() as f64;
        let model =
            SubwordModel::new(pieces.into_iter().map(|p| (p, (1.0 / n).ln())).collect()).unwrap();
        (train, dev, model)
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 4,
            dim: 16,
            blocks: 1,
            l_max: 32,
            eval_every: 4,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn run_toy(config: &TrainConfig) -> TrainOutcome {
        let (train_data, dev_data, subword) = toy_world();
        let parallel = link_parallel([&train_data]);
        let inputs = TrainInputs {
            train: &train_data,
            dev: &dev_data,
            subword: &subword,
            parallel: &parallel,
            intent_only: &[],
        };
        train(config, &inputs).unwrap()
    }

    #[test]
    fn training_loss_decreases_on_the_toy_problem() {
        let config = TrainConfig { epochs: 25, ..toy_config() };
        let outcome = run_toy(&config);
        let totals: Vec<f64> = outcome.log.steps.iter().map(|s| s.total).collect();
        let head: f64 = totals[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = totals[totals.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(
            tail < head,
            "expected decreasing loss, first 5 mean {head}, last 5 mean {tail}"
        );
        // The dev-best checkpoint should have learned something real.
        let best = &outcome.log.evals[outcome.log.summary.best_eval].report;
        assert!(best.ema > 0.5, "best dev EMA {}", best.ema);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let config = toy_config();
        let a = run_toy(&config);
        let b = run_toy(&config);
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
        let bytes = |o: &TrainOutcome| {
            let c = &o.checkpoint;
            checkpoint_bytes(&c.params, &c.intents, &c.slots).unwrap()
        };
        assert_eq!(bytes(&a), bytes(&b));
        let different = TrainConfig { seed: 6, ..config };
        let c = run_toy(&different);
        assert_ne!(a.log.to_jsonl(), c.log.to_jsonl());
    }

    #[test]
    fn zero_consistency_weights_reduce_totals_to_task_loss_exactly() {
        let config = TrainConfig { lambda2: 0.0, lambda3: 0.0, ..toy_config() };
        let outcome = run_toy(&config);
        for step in &outcome.log.steps {
            // Bitwise: zero-weighted terms must contribute exactly nothing.
            assert_eq!(step.total, step.l_intent + config.lambda1 * step.l_slot);
        }
    }

    #[test]
    fn translation_only_steps_never_contribute_slot_consistency() {
        let config = TrainConfig {
            strategy_distribution: StrategyDistribution::new(1.0, 0.0).unwrap(),
            ..toy_config()
        };
        let outcome = run_toy(&config);
        // Every example has a counterpart, so every view is a translation.
        for step in &outcome.log.steps {
            assert_eq!(step.subword_views, 0);
            assert_eq!(step.mt_views, step.examples);
            assert_eq!(step.r_slot, 0.0);
        }
    }

    #[test]
    fn log_jsonl_interleaves_steps_evals_and_summary() {
        let config = toy_config();
        let outcome = run_toy(&config);
        let jsonl = outcome.log.to_jsonl();
        let events: Vec<TrainEvent> = jsonl
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let step_count = events
            .iter()
            .filter(|e| matches!(e, TrainEvent::Step(_)))
            .count();
        assert_eq!(step_count as u64, outcome.log.summary.steps);
        let eval_count = events.iter().filter(|e| matches!(e, TrainEvent::Eval(_))).count();
        assert_eq!(eval_count, outcome.log.summary.evals);
        assert!(matches!(events.last(), Some(TrainEvent::Summary(_))));
        // Evals follow the step they ran after.
        for pair in events.windows(2) {
            if let (TrainEvent::Step(s), TrainEvent::Eval(e)) = (&pair[0], &pair[1]) {
                assert_eq!(s.step, e.step);
            }
        }
        // The final step is always evaluated.
        assert_eq!(outcome.log.evals.last().unwrap().step, outcome.log.summary.steps);
    }

    #[test]
    fn oversized_training_examples_are_skipped_and_counted() {
        let (mut train_data, dev_data, subword) = toy_world();
        // One utterance long enough to overflow l_max = 32.
        let long = Example {
            id: 999,
            locale: "en".into(),
            words: vec!["jazzjazzjazzjazzjazzjazzjazzjazzjazz".into(); 3],
            slots: vec!["O".into(); 3],
            intent: "play".into(),
        };
        train_data.examples.push(long);
        let train_data = Dataset::from_examples(train_data.examples).unwrap();
        let parallel = link_parallel([&train_data]);
        let config = TrainConfig { epochs: 1, ..toy_config() };
        let outcome = train(
            &config,
            &TrainInputs {
                train: &train_data,
                dev: &dev_data,
                subword: &subword,
                parallel: &parallel,
                intent_only: &[],
            },
        )
        .unwrap();
        assert_eq!(outcome.log.summary.skipped_examples, 1);
    }

    #[test]
    fn empty_datasets_are_rejected() {
        let (train_data, dev_data, subword) = toy_world();
        let parallel = link_parallel([&train_data]);
        let empty = Dataset::from_examples(vec![]).unwrap();
        let config = toy_config();
        for (t, d) in [(&empty, &dev_data), (&train_data, &empty)] {
            let err = train(
                &config,
                &TrainInputs {
                    train: t,
                    dev: d,
                    subword: &subword,
                    parallel: &parallel,
                    intent_only: &[],
                },
            )
            .unwrap_err();
            assert!(matches!(err, CoreError::EmptyDataset));
        }
    }

    #[test]
    fn checkpoint_tensors_match_the_configured_shape() {
        let config = toy_config();
        let outcome = run_toy(&config);
        let params = &outcome.checkpoint.params;
        assert_eq!(params.config.dim, config.dim);
        assert_eq!(params.config.blocks, config.blocks);
        assert_eq!(
            params.embed_piece.shape(),
            &[params.config.vocab_size, config.dim]
        );
        assert_eq!(
            params.intent_w.shape(),
            &[config.dim, outcome.checkpoint.intents.len()]
        );
    }
}
