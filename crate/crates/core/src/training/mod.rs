//! Reconstruction and LM training with AdamW, warmup-cosine schedule,
//! global-norm clipping and checkpoints.

mod checkpoint;
mod optim;
mod schedule;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TaskExample, TaskKind};
use crate::model::{decoder_input, DecoderInput, Model, ModelError};
use crate::numerics::{Graph, Tensor};
use crate::params::ParamGroup;

pub use checkpoint::{load_params, Checkpoint, FORMAT_VERSION};
pub use optim::{adamw_step, clip_global_norm, global_norm, AdamState, AdamW, GroupLr};
pub use schedule::lr_at;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),
    #[error("gradient of {param} is not finite")]
    NonFiniteGradient { param: String },
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String, last_good: Box<Checkpoint> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_peak: f64,
    /// Encoder-group peak learning rate; the schedule shape is shared.
    pub lr_encoder_override: Option<f64>,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub grad_accum: usize,
    pub epochs: usize,
    /// Fixed number of optimizer steps, cycling through reshuffled epochs.
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    /// Seeds the data order.
    pub seed: u64,
    pub freeze: BTreeSet<ParamGroup>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 1e-4,
            lr_encoder_override: None,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_ratio: 0.1,
            batch_size: 16,
            grad_accum: 1,
            epochs: 1,
            steps: None,
            seed: 0,
            freeze: BTreeSet::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |s: String| Err(TrainError::Config(s));
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must be in [0, 1), got {}", self.warmup_ratio));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(self.lr_peak >= 0.0) || self.lr_encoder_override.is_some_and(|l| !(l >= 0.0)) {
            return bad("learning rates must be non-negative".into());
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return bad("batch_size and grad_accum must be >= 1".into());
        }
        if self.steps.is_none() && self.epochs == 0 {
            return bad("epochs must be >= 1 when steps is unset".into());
        }
        if self.steps == Some(0) {
            return bad("steps must be >= 1".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamW {
        AdamW { beta1: self.betas[0], beta2: self.betas[1], eps: self.eps, weight_decay: self.weight_decay }
    }

    /// Learning rates for update `step` (1-based) of `total`.
    pub fn group_lr(&self, step: usize, total: usize) -> Result<GroupLr, TrainError> {
        let lr = lr_at(step, total, self.lr_peak, self.warmup_ratio)?;
        let encoder = match self.lr_encoder_override {
            Some(o) if self.lr_peak > 0.0 => lr * o / self.lr_peak,
            Some(o) => o,
            None => lr,
        };
        Ok(GroupLr { encoder, decoder: lr })
    }

    /// Optimizer steps for `n` examples.
    pub fn total_steps(&self, n: usize) -> usize {
        let per_step = self.batch_size * self.grad_accum;
        self.steps.unwrap_or_else(|| (n * self.epochs).div_ceil(per_step))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Pre-clip global norm.
    pub grad_norm: f64,
}

/// `step,lr,loss,grad_norm` with shortest round-trip float formatting, so
/// identical runs give identical bytes. Wallclock lives in a separate file.
pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut s = String::from("step,lr,loss,grad_norm\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.step, r.lr, r.loss, r.grad_norm).unwrap();
    }
    s
}

pub fn timing_csv(rows: &[StepMetrics], wallclock: &[f64]) -> String {
    let mut s = String::from("step,wallclock_s\n");
    for (r, t) in rows.iter().zip(wallclock) {
        writeln!(s, "{},{:.3}", r.step, t).unwrap();
    }
    s
}

/// Per-token mean loss over `inputs` and its gradient for every parameter.
/// Frozen groups get zero gradients.
pub fn batch_gradients(
    model: &Model<f32>,
    inputs: &[&DecoderInput],
    frozen: &BTreeSet<ParamGroup>,
) -> Result<(f64, Vec<Tensor<f32>>), ModelError> {
    let denom: usize = inputs.iter().map(|x| x.loss_mask.iter().filter(|&&m| m).count()).sum();
    let mut grads: Vec<Tensor<f32>> = model.params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
    let mut loss = 0.0;
    for input in inputs {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, frozen);
        let fwd = model.forward(&mut g, &bound, input, Some(denom))?;
        loss += g.value(fwd.loss.loss).item() as f64;
        let mut gr = g.backward(fwd.loss.loss)?;
        for (acc, g) in grads.iter_mut().zip(bound.gradients(&model.params, &mut gr)) {
            acc.add_assign(&g);
        }
    }
    Ok((loss, grads))
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
    /// Seconds since training started, per step.
    pub wallclock: Vec<f64>,
}

/// Seeded example order: reshuffled each epoch, consumed in step-sized
/// slices.
struct Order {
    rng: ChaCha8Rng,
    n: usize,
    perm: Vec<usize>,
    pos: usize,
    epochs_left: Option<usize>,
}

impl Order {
    fn next(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.perm.len() {
                if self.epochs_left == Some(0) {
                    break;
                }
                self.epochs_left = self.epochs_left.map(|e| e - 1);
                self.perm = (0..self.n).collect();
                self.perm.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains `model` in place on `examples`.
///
/// Each optimizer step averages the loss over every scored token of its
/// `batch_size * grad_accum` examples, clips the global gradient norm, and
/// applies AdamW with the learning rate of the following schedule step. The
/// schedule starts fresh on every call. A non-finite loss or gradient stops
/// training with the parameters from before the failing step.
pub fn train(
    model: &mut Model<f32>,
    examples: &[TaskExample],
    task: TaskKind,
    cfg: &TrainConfig,
    fingerprint: &str,
    mut progress: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::Config("no training examples".into()));
    }
    if cfg.freeze.len() == 2 {
        return Err(TrainError::Config("every parameter group is frozen".into()));
    }
    let inputs = examples
        .iter()
        .map(|ex| decoder_input(model.encoder.config(), ex, task))
        .collect::<Result<Vec<_>, _>>()?;
    let total = cfg.total_steps(inputs.len());
    let per_step = cfg.batch_size * cfg.grad_accum;
    let mut order = Order {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        n: inputs.len(),
        perm: Vec::new(),
        pos: 0,
        epochs_left: if cfg.steps.is_some() { None } else { Some(cfg.epochs) },
    };
    let skip: Vec<bool> = model.params.iter().map(|(_, p)| cfg.freeze.contains(&p.group)).collect();
    let opt = cfg.adamw();
    let mut state = AdamState::new(&model.params);
    let mut metrics = Vec::with_capacity(total);
    let mut wallclock = Vec::with_capacity(total);
    let start = Instant::now();

    let snapshot = |model: &Model<f32>, state: &AdamState, metrics: &[StepMetrics]| Checkpoint {
        fingerprint: fingerprint.to_string(),
        phase: task,
        params: model.params.clone(),
        optimizer: state.clone(),
        metrics: metrics_csv(metrics),
    };

    for step in 1..=total {
        let batch: Vec<&DecoderInput> = order.next(per_step).into_iter().map(|i| &inputs[i]).collect();
        let diverged = |reason: String, metrics: &[StepMetrics], state: &AdamState, model: &Model<f32>| TrainError::Diverged {
            step,
            reason,
            last_good: Box::new(snapshot(model, state, metrics)),
        };
        let (loss, mut grads) = match batch_gradients(model, &batch, &cfg.freeze) {
            Ok(v) => v,
            Err(e) if e.is_non_finite() => return Err(diverged(e.to_string(), &metrics, &state, model)),
            Err(e) => return Err(e.into()),
        };
        if !loss.is_finite() {
            return Err(diverged(format!("loss is {loss}"), &metrics, &state, model));
        }
        let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
        if !grad_norm.is_finite() {
            return Err(diverged(format!("gradient norm is {grad_norm}"), &metrics, &state, model));
        }
        let lr = cfg.group_lr(step, total)?;
        adamw_step(&mut model.params, &grads, &mut state, &opt, lr, &skip)?;
        let m = StepMetrics { step, lr: lr.decoder, loss, grad_norm };
        progress(&m);
        metrics.push(m);
        wallclock.push(start.elapsed().as_secs_f64());
    }
    let checkpoint = snapshot(model, &state, &metrics);
    Ok(TrainOutcome { checkpoint, metrics, wallclock })
}

/// Reconstruction phase. Truncation is rejected: it has no encoder output
/// to reconstruct from.
pub fn train_reconstruction(
    model: &mut Model<f32>,
    examples: &[TaskExample],
    cfg: &TrainConfig,
    fingerprint: &str,
    progress: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome, TrainError> {
    train(model, examples, TaskKind::Recon, cfg, fingerprint, progress)
}

/// LM phase, optionally starting from a checkpoint. `init_groups` selects
/// which parameter groups are copied from it (both groups after a
/// reconstruction run; only the decoder for a truncation baseline).
pub fn train_lm(
    model: &mut Model<f32>,
    examples: &[TaskExample],
    cfg: &TrainConfig,
    init: Option<(&Checkpoint, &[ParamGroup])>,
    fingerprint: &str,
    progress: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome, TrainError> {
    if let Some((ckpt, groups)) = init {
        load_params(&mut model.params, &ckpt.params, groups)?;
    }
    train(model, examples, TaskKind::Lm, cfg, fingerprint, progress)
}
