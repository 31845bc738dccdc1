//! Joint training of encoder, decoder and (in constrained mode) the Lagrange multiplier.
//!
//! Per minibatch: sample one mask per sentence, update the decoder on `−log p(x|z)`,
//! update the encoder with the score-function estimate using the per-example reward
//! `G = |z| + λ(−log p(x|z) − ε)` centred by a moving-average baseline, and in constrained
//! mode take a projected ascent step on `λ`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Sentence};
use crate::decoder::{DecoderConfig, DecoderParams};
use crate::encoder::{extract_keywords, EncoderConfig, EncoderParams, KeepMask, KeepProbabilities, KeywordSequence, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{Adam, AdamConfig, Grads};

/// Fraction of the mean keep probability below/above which an epoch is flagged as collapsed.
pub const COLLAPSE_LOW: f64 = 0.01;
pub const COLLAPSE_HIGH: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Objective {
    /// Minimize `cost + λ·loss` with fixed `λ`.
    Linear { lambda: f64 },
    /// Minimize `cost` subject to `loss ≤ ε` (nats per sentence).
    Constrained { epsilon: f64 },
}

impl Objective {
    pub fn knob(&self) -> (&'static str, f64) {
        match *self {
            Objective::Linear { lambda } => ("lambda", lambda),
            Objective::Constrained { epsilon } => ("epsilon", epsilon),
        }
    }
}

/// How `λ` follows the constraint violation in constrained mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualOptimizer {
    /// `λ ← max(0, λ + lr·(loss − ε))`.
    #[default]
    Ascent,
    /// Adam on `−(loss − ε)`, projected onto `λ ≥ 0`.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub objective: Objective,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub lr_lambda: f64,
    pub lambda_init: f64,
    pub dual_optimizer: DualOptimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub baseline_decay: f64,
    pub clip_norm: Option<f64>,
    /// Leading epochs that train only the decoder, with the encoder and `λ` held at their initial values.
    #[serde(default)]
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            objective: Objective::Constrained { epsilon: 0.6 },
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            lr_encoder: 0.001,
            lr_decoder: 0.001,
            lr_lambda: 0.01,
            lambda_init: 5.0,
            dual_optimizer: DualOptimizer::Ascent,
            batch_size: 128,
            epochs: 10,
            baseline_decay: 0.95,
            clip_norm: Some(5.0),
            warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self.objective {
            Objective::Constrained { epsilon } if !(epsilon > 0.0) => return bad("epsilon must be positive"),
            Objective::Linear { lambda } if !(lambda >= 0.0) => return bad("lambda must be non-negative"),
            _ => {}
        }
        if !(self.lr_encoder > 0.0 && self.lr_decoder > 0.0 && self.lr_lambda > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lambda_init >= 0.0) {
            return bad("initial lambda must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay < 1.0) {
            return bad("baseline decay must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Lagrange multiplier, constraint level and reward baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    /// Constraint level; 0 in linear mode.
    pub epsilon: f64,
    /// Moving average of rewards; `None` until the first batch.
    pub baseline: Option<f64>,
}

impl DualState {
    pub fn new(objective: Objective, lambda_init: f64) -> Self {
        match objective {
            Objective::Linear { lambda } => DualState { lambda, epsilon: 0.0, baseline: None },
            Objective::Constrained { epsilon } => DualState { lambda: lambda_init, epsilon, baseline: None },
        }
    }

    /// Centres `rewards` on the current baseline, then folds their mean into it.
    /// The first call initialises the baseline to the batch mean.
    pub fn advantages(&mut self, rewards: &[f64], decay: f64) -> Vec<f64> {
        let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
        let b = *self.baseline.get_or_insert(mean);
        let out = rewards.iter().map(|g| g - b).collect();
        self.baseline = Some(decay * b + (1.0 - decay) * mean);
        out
    }
}

/// `G(x, z) = |z| + λ·(−log p(x|z) − ε)`.
pub fn per_example_reward(num_keywords: usize, decoder_log_prob: f64, lambda: f64, epsilon: f64) -> f64 {
    num_keywords as f64 + lambda * (-decoder_log_prob - epsilon)
}

/// Projected gradient ascent step on `λ`.
pub fn dual_update(dual: &DualState, batch_mean_loss: f64, epsilon: f64, lr: f64) -> DualState {
    DualState { lambda: (dual.lambda + lr * (batch_mean_loss - epsilon)).max(0.0), ..dual.clone() }
}

/// Gradient of `(1/B) Σ_b w_b · log q(m_b | x_b)` with respect to the encoder parameters.
///
/// With `w_b = G_b − baseline` this is the single-sample score-function estimate of the
/// gradient of the expected reward.
pub fn score_function_gradient(
    encoder: &EncoderParams,
    batch: &[&Sentence],
    masks: &[KeepMask],
    weights: &[f64],
) -> Result<Grads> {
    if masks.len() != batch.len() || weights.len() != batch.len() {
        return Err(Error::LengthMismatch { expected: batch.len(), actual: masks.len().min(weights.len()) });
    }
    let mut g = Graph::new();
    let out = encoder.forward_batch(&mut g, batch)?;
    let (rows, cols) = out.valid.dim();
    let mut bits = Array2::zeros((rows, cols));
    let mut scale = Array2::zeros((rows, cols));
    for (r, (m, &w)) in masks.iter().zip(weights).enumerate() {
        if m.len() != batch[r].len() {
            return Err(Error::LengthMismatch { expected: batch[r].len(), actual: m.len() });
        }
        for (t, &keep) in m.0.iter().enumerate() {
            bits[[r, t]] = keep as u8 as f64;
            scale[[r, t]] = w / rows as f64;
        }
    }
    let ll = g.bernoulli_log_lik(out.probs, &bits, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let scale = g.constant(scale);
    let weighted = g.mul(ll, scale);
    let total = g.sum(weighted);
    Ok(g.backward(total, &encoder.params))
}

/// Minibatch averages and diagnostics from one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingStepReport {
    /// Mean expected keyword count `Σ p_i`.
    pub cost: f64,
    /// Mean `−log p(x|z)` in nats per sentence.
    pub loss: f64,
    pub reward: f64,
    /// `cost + λ(loss − ε)` in constrained mode, `cost + λ·loss` in linear mode.
    pub objective: f64,
    pub lambda: f64,
    pub retention: f64,
    pub keep_prob: f64,
    pub encoder_grad_norm: f64,
    pub decoder_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_cost: f64,
    pub mean_loss: f64,
    pub lambda: f64,
    pub mean_retention: f64,
    pub mean_keep_prob: f64,
    pub wall_time_s: f64,
    /// Set when the mean keep probability left `[0.01, 0.99]` for the epoch.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub collapse: Option<String>,
}

/// Owns the parameters and optimizer state of one training run.
pub struct Trainer {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub dual: DualState,
    pub config: TrainingConfig,
    adam_encoder: Adam,
    adam_decoder: Adam,
    lambda_moments: (f64, f64, i32),
    rng: ChaCha8Rng,
    /// When set, `step` updates only the decoder.
    pub decoder_only: bool,
}

impl Trainer {
    pub fn new(vocab_size: usize, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = EncoderParams::new(vocab_size, config.encoder, &mut init);
        let decoder = DecoderParams::new(vocab_size, config.decoder, &mut init);
        Ok(Self::from_parts(encoder, decoder, config))
    }

    pub fn from_parts(encoder: EncoderParams, decoder: DecoderParams, config: TrainingConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Trainer {
            adam_encoder: Adam::new(AdamConfig::with_lr(config.lr_encoder), &encoder.params),
            adam_decoder: Adam::new(AdamConfig::with_lr(config.lr_decoder), &decoder.params),
            dual: DualState::new(config.objective, config.lambda_init),
            lambda_moments: (0.0, 0.0, 0),
            encoder,
            decoder,
            config,
            rng,
            decoder_only: false,
        }
    }

    fn update_lambda(&mut self, mean_loss: f64) {
        let Objective::Constrained { epsilon } = self.config.objective else { return };
        let lr = self.config.lr_lambda;
        match self.config.dual_optimizer {
            DualOptimizer::Ascent => self.dual = dual_update(&self.dual, mean_loss, epsilon, lr),
            DualOptimizer::Adam => {
                let c = AdamConfig::with_lr(lr);
                let grad = mean_loss - epsilon;
                let (m, v, t) = &mut self.lambda_moments;
                *t += 1;
                *m = c.beta1 * *m + (1.0 - c.beta1) * grad;
                *v = c.beta2 * *v + (1.0 - c.beta2) * grad * grad;
                let mh = *m / (1.0 - c.beta1.powi(*t));
                let vh = *v / (1.0 - c.beta2.powi(*t));
                self.dual.lambda = (self.dual.lambda + lr * mh / (vh.sqrt() + c.eps)).max(0.0);
            }
        }
    }

    /// One joint update on a minibatch.
    pub fn step(&mut self, batch: &[&Sentence]) -> Result<TrainingStepReport> {
        let n = batch.len() as f64;
        let mut ge = Graph::new();
        let enc = self.encoder.forward_batch(&mut ge, batch)?;
        let probs = ge.value(enc.probs);
        let mut masks = Vec::with_capacity(batch.len());
        let (mut cost, mut keep_sum, mut kept, mut total) = (0.0, 0.0, 0usize, 0usize);
        for (r, s) in batch.iter().enumerate() {
            let p = KeepProbabilities::new(probs.row(r).iter().take(s.len()).copied().collect())?;
            cost += p.expected_cost();
            keep_sum += p.expected_cost();
            let m = p.sample(&mut self.rng);
            kept += m.kept();
            total += s.len();
            masks.push(m);
        }
        let keywords = batch
            .iter()
            .zip(&masks)
            .map(|(s, m)| extract_keywords(s, m))
            .collect::<Result<Vec<KeywordSequence>>>()?;

        let kw: Vec<&KeywordSequence> = keywords.iter().collect();
        let toks: Vec<&[String]> = batch.iter().map(|s| s.tokens.as_slice()).collect();
        let ids: Vec<&[usize]> = batch.iter().map(|s| s.ids.as_slice()).collect();
        let mut gd = Graph::new();
        let dec = self.decoder.batch_loss(&mut gd, &kw, &toks, &ids, true)?;
        let mut dec_grads = gd.backward(dec.loss, &self.decoder.params);
        let loss = dec.nll.iter().sum::<f64>() / n;

        let DualState { lambda, epsilon, .. } = self.dual;
        let rewards: Vec<f64> = keywords
            .iter()
            .zip(&dec.nll)
            .map(|(k, &nll)| per_example_reward(k.len(), -nll, lambda, epsilon))
            .collect();
        let reward = rewards.iter().sum::<f64>() / n;
        let advantages = self.dual.advantages(&rewards, self.config.baseline_decay);
        let mut enc_grads = score_function_gradient(&self.encoder, batch, &masks, &advantages)?;

        let (enc_norm, dec_norm) = (enc_grads.norm(), dec_grads.norm());
        if !(loss.is_finite() && enc_norm.is_finite() && dec_norm.is_finite()) {
            return Err(Error::Diverged {
                epoch: 0,
                batch: 0,
                detail: format!("loss {loss}, encoder grad norm {enc_norm}, decoder grad norm {dec_norm}"),
            });
        }
        if let Some(max) = self.config.clip_norm {
            enc_grads.clip_norm(max);
            dec_grads.clip_norm(max);
        }
        self.adam_decoder.step(&mut self.decoder.params, &dec_grads);
        if !self.decoder_only {
            self.adam_encoder.step(&mut self.encoder.params, &enc_grads);
            self.update_lambda(loss);
        }

        let cost = cost / n;
        Ok(TrainingStepReport {
            cost,
            loss,
            reward,
            objective: cost + lambda * (loss - epsilon),
            lambda: self.dual.lambda,
            retention: kept as f64 / total as f64,
            keep_prob: keep_sum / total as f64,
            encoder_grad_norm: enc_norm,
            decoder_grad_norm: dec_norm,
        })
    }

    /// One pass over `train` in a freshly shuffled order.
    pub fn epoch(&mut self, epoch: usize, train: &[Sentence]) -> Result<EpochRecord> {
        let start = Instant::now();
        self.decoder_only = epoch < self.config.warmup_epochs;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut cost, mut loss, mut kept, mut keep_prob, mut tokens) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &train[i]).collect();
            let r = self.step(&batch).map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { epoch, batch: bi, detail },
                other => other,
            })?;
            let len: usize = batch.iter().map(|s| s.len()).sum();
            cost += r.cost * batch.len() as f64;
            loss += r.loss * batch.len() as f64;
            kept += r.retention * len as f64;
            keep_prob += r.keep_prob * len as f64;
            tokens += len;
        }
        let n = train.len() as f64;
        let mean_keep_prob = keep_prob / tokens as f64;
        let collapse = if mean_keep_prob < COLLAPSE_LOW {
            Some("all-drop".to_string())
        } else if mean_keep_prob > COLLAPSE_HIGH {
            Some("all-keep".to_string())
        } else {
            None
        };
        if let Some(kind) = &collapse {
            log::warn!("epoch {epoch}: encoder collapsed ({kind}), mean keep probability {mean_keep_prob:.4}");
        }
        Ok(EpochRecord {
            epoch,
            mean_cost: cost / n,
            mean_loss: loss / n,
            lambda: self.dual.lambda,
            mean_retention: kept / tokens as f64,
            mean_keep_prob,
            wall_time_s: start.elapsed().as_secs_f64(),
            collapse,
        })
    }
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub dual: DualState,
    pub history: Vec<EpochRecord>,
}

/// Trains a fresh encoder/decoder pair for `config.epochs` epochs.
pub fn train(data: &CorpusSplit, config: &TrainingConfig) -> Result<TrainOutcome> {
    train_with(data, config, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(data: &CorpusSplit, config: &TrainingConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    if data.train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let mut trainer = Trainer::new(data.vocab.len(), config.clone())?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let record = trainer.epoch(epoch, &data.train)?;
        log::info!(
            "epoch {epoch}: cost {:.3} loss {:.3} lambda {:.3} retention {:.3}",
            record.mean_cost,
            record.mean_loss,
            record.lambda,
            record.mean_retention
        );
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { encoder: trainer.encoder, decoder: trainer.decoder, dual: trainer.dual, history })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in history {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format { what: "history", detail: e.to_string() })?;
        out.push(b'\n');
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format { what: "history", detail: e.to_string() }))
        .collect()
}
