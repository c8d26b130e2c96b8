//! Training loop: shuffle, schedule adversarial negatives, encode, CoSENT, AdamW.
//!
//! Forward passes inside a batch run in parallel; gradients are reduced in pair order
//! and applied by a single writer, so a run is bitwise reproducible from its config.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ContrastivePair, DatasetSplits};
use crate::eval::{self, EvalError};
use crate::loss::{cosent_loss_and_grad, ScoredBatch, DEFAULT_LAMBDA};
use crate::model::{accumulate_grad_pair, encode, EncoderParams, ModelError, ParamGrads, DEFAULT_DIM};
use crate::rng::{rng_for, stream};
use crate::schedule::{adversarial_probability, apply_schedule, ScheduleConfig, ScheduleMode};

/// Threshold used when the dev split holds a single class and no cut can be tuned.
const FALLBACK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// CoSENT scale.
    pub lambda: f64,
    /// Embedding dimension of the encoder.
    pub dim: usize,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            warmup_steps: 500,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            dim: DEFAULT_DIM,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Plain contrastive training: no adversarial negatives, 10 epochs.
    pub fn baseline() -> Self {
        TrainConfig { epochs: 10, schedule: ScheduleConfig::none(), ..Self::default() }
    }

    /// Scheduled adversarial negatives, 20 epochs.
    pub fn lane() -> Self {
        TrainConfig { epochs: 20, schedule: ScheduleConfig::default(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay < 0.0 {
            return bad("eps must be positive and weight_decay non-negative");
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return bad("lambda must be positive");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        self.schedule.validate().map_err(TrainError::InvalidConfig)
    }
}

/// Learning rate at 1-based `step`: linear warm-up, then constant.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    if config.warmup_steps == 0 {
        return config.lr;
    }
    config.lr * (step as f64 / config.warmup_steps as f64).min(1.0)
}

/// AdamW moments shaped like the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub m_marker: Vec<f64>,
    pub v_marker: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        let n = params.embeddings.len();
        let d = params.dim();
        OptimizerState { m: vec![0.0; n], v: vec![0.0; n], m_marker: vec![0.0; d], v_marker: vec![0.0; d], t: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct StepConstants {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    bias1: f64,
    bias2: f64,
}

/// Decoupled-weight-decay Adam update of one parameter block.
fn adamw_update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], c: StepConstants) {
    for k in 0..theta.len() {
        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
        let m_hat = m[k] / c.bias1;
        let v_hat = v[k] / c.bias2;
        theta[k] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * theta[k]);
    }
}

/// One AdamW step. Only rows present in `grads` (and the marker) are updated; the
/// unknown-token row is never touched.
pub fn adamw_step(
    params: &mut EncoderParams,
    grads: &ParamGrads,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if !grads.is_finite() {
        return Err(TrainError::NonFiniteGradient { step: state.t + 1 });
    }
    state.t += 1;
    let t = state.t as i32;
    let c = StepConstants {
        lr: lr_at(state.t, config),
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.eps,
        weight_decay: config.weight_decay,
        bias1: 1.0 - config.beta1.powi(t),
        bias2: 1.0 - config.beta2.powi(t),
    };
    let d = params.dim();
    for (&row, g) in &grads.rows {
        if row == 0 {
            continue;
        }
        let span = row * d..(row + 1) * d;
        adamw_update(&mut params.embeddings[span.clone()], g, &mut state.m[span.clone()], &mut state.v[span], c);
    }
    adamw_update(&mut params.marker, &grads.marker, &mut state.m_marker, &mut state.v_marker, c);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    pub dev_f1: f64,
    pub adv_prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_acc,dev_f1,adv_prob\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.dev_acc, r.dev_f1, r.adv_prob).unwrap();
        }
        out
    }
}

/// Result of [`fit`]: the best dev-accuracy snapshot and everything needed to reuse it.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: EncoderParams,
    /// Decision threshold tuned on dev for `params`.
    pub threshold: f64,
    pub best_epoch: usize,
    pub log: TrainingLog,
}

/// Dev-tuned threshold with the accuracy and F1 it achieves.
pub fn tune_on(params: &EncoderParams, pairs: &[ContrastivePair]) -> Result<(f64, f64, f64), EvalError> {
    let scores = eval::score_pairs(params, pairs);
    let labels = eval::binary_labels(pairs);
    let threshold = match eval::best_threshold(&scores, &labels) {
        Ok((t, _)) => t,
        Err(EvalError::SingleClass) => FALLBACK_THRESHOLD,
        Err(e) => return Err(e),
    };
    let (acc, f1) = eval::accuracy_f1(&scores, &labels, threshold)?;
    Ok((threshold, acc, f1))
}

/// Runs one batch: forward, CoSENT, backward, AdamW. Returns the batch loss.
fn train_batch(
    params: &mut EncoderParams,
    state: &mut OptimizerState,
    batch: &[ContrastivePair],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let forward: Vec<_> = batch
        .par_iter()
        .map(|p| (encode(params, &p.tokens1, p.target_index1).1, encode(params, &p.tokens2, p.target_index2).1))
        .collect();
    let scores =
        forward.iter().map(|(a, b)| crate::model::cosine(&a.pooled, &b.pooled)).collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<f64> = batch.iter().map(|p| p.label).collect();
    let (loss, dl_ds) = cosent_loss_and_grad(&ScoredBatch::new(&scores, &labels, config.lambda));
    let mut grads = ParamGrads::zeros(params.dim());
    for ((t1, t2), &g) in forward.iter().zip(&dl_ds) {
        accumulate_grad_pair(&mut grads, params, t1, t2, g)?;
    }
    adamw_step(params, &grads, state, config)?;
    Ok(loss)
}

/// Trains on `splits.train`, selecting the epoch with the best dev accuracy
/// (earliest on ties). The vocabulary is every token of the training pairs.
pub fn fit(splits: &DatasetSplits, config: &TrainConfig) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    if splits.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if splits.dev.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let mut params = EncoderParams::init_from_pairs(&splits.train, config.dim, config.seed);
    let mut state = OptimizerState::new(&params);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, EncoderParams, f64, usize)> = None;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    for epoch in 0..config.epochs {
        let mut rng = rng_for(config.seed, stream::SHUFFLE, epoch as u64, 0);
        order.shuffle(&mut rng);
        let epoch_pairs: Vec<ContrastivePair> = order.iter().map(|&i| splits.train[i].clone()).collect();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in epoch_pairs.chunks(config.batch_size).enumerate() {
            let batch = apply_schedule(chunk, epoch, b * config.batch_size, &config.schedule, config.seed);
            loss_sum += train_batch(&mut params, &mut state, &batch, config)?;
            batches += 1;
        }
        let (threshold, dev_acc, dev_f1) = tune_on(&params, &splits.dev)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_acc,
            dev_f1,
            adv_prob: adversarial_probability(epoch, &config.schedule),
        });
        if best.as_ref().is_none_or(|(acc, ..)| dev_acc > *acc) {
            best = Some((dev_acc, params.clone(), threshold, epoch));
        }
    }
    let (_, params, threshold, best_epoch) = best.expect("at least one epoch");
    Ok(FitOutcome { params, threshold, best_epoch, log })
}

/// True when the schedule can ever insert adversarial negatives.
pub fn uses_adversarials(config: &TrainConfig) -> bool {
    config.schedule.mode != ScheduleMode::None && config.schedule.p_max > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        let c = TrainConfig { lr: 1e-5, warmup_steps: 500, ..TrainConfig::default() };
        assert!((lr_at(1, &c) - 2e-8).abs() < 1e-22);
        assert_eq!(lr_at(500, &c), 1e-5);
        assert_eq!(lr_at(10_000, &c), 1e-5);
        let flat = TrainConfig { warmup_steps: 0, ..c };
        assert_eq!(lr_at(1, &flat), 1e-5);
    }

    fn constants(t: i32, lr: f64, wd: f64) -> StepConstants {
        StepConstants {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
            bias1: 1.0 - 0.9f64.powi(t),
            bias2: 1.0 - 0.999f64.powi(t),
        }
    }

    #[test]
    fn scalar_reference_step() {
        let (mut theta, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adamw_update(&mut theta, &[1.0], &mut m, &mut v, constants(1, 1e-3, 0.01));
        // m̂ = v̂ = 1, so θ' = 1 - 1e-3 (1/(1 + 1e-8) + 0.01).
        let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8) + 0.01);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!((theta[0] - 0.998990).abs() < 1e-6);
    }

    #[test]
    fn second_step_uses_accumulated_moments() {
        let (mut theta, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adamw_update(&mut theta, &[1.0], &mut m, &mut v, constants(1, 1e-3, 0.01));
        let after_first = theta[0];
        adamw_update(&mut theta, &[1.0], &mut m, &mut v, constants(2, 1e-3, 0.01));
        // Oracle, step by step: m = 0.19, v = 0.001999, both bias-corrected back to 1.
        let (m1, v1) = ((1.0 - 0.9) * 1.0, (1.0 - 0.999) * 1.0);
        let (m2, v2) = (0.9 * m1 + (1.0 - 0.9) * 1.0, 0.999 * v1 + (1.0 - 0.999) * 1.0);
        let (mh, vh) = (m2 / (1.0 - 0.81), v2 / (1.0 - 0.999f64.powi(2)));
        let expected = after_first - 1e-3 * (mh / (vh.sqrt() + 1e-8) + 0.01 * after_first);
        assert_eq!(m[0], m2);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!(after_first - theta[0] != 1.0 - after_first);
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut params = EncoderParams::init(["a", "b"], 4, 3);
        let before = params.clone();
        let mut state = OptimizerState::new(&params);
        let mut grads = ParamGrads::zeros(4);
        grads.rows.insert(1, vec![0.0; 4]);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut params = EncoderParams::init(["a"], 2, 3);
        let mut state = OptimizerState::new(&params);
        let mut grads = ParamGrads::zeros(2);
        grads.marker[1] = f64::NAN;
        let err = adamw_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { step: 1 }));
        assert_eq!(state.t, 0);
    }

    #[test]
    fn unknown_row_is_frozen() {
        let mut params = EncoderParams::init(["a"], 2, 3);
        let mut state = OptimizerState::new(&params);
        let mut grads = ParamGrads::zeros(2);
        grads.rows.insert(0, vec![1.0, 1.0]);
        adamw_step(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(params.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn config_validation_and_presets() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::baseline().epochs, 10);
        assert_eq!(TrainConfig::lane().epochs, 20);
        assert!(!uses_adversarials(&TrainConfig::baseline()));
        assert!(uses_adversarials(&TrainConfig::lane()));
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    }
}
