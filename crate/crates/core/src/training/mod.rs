//! Loss, learning-rate schedule, Adam and the training loop.

pub mod fit;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::SpecAugmentPolicy;
use crate::model::ParamStore;
use crate::numerics::{Graph, Real, Tensor};

pub use fit::{
    checkpoint_from_training, examples_from_clips, fit, restore_training, train_step, validation_loss,
    FitOptions, FitReport, LogRecord, TrainExample, TrainState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_peak: Real,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub label_smoothing_eps: Real,
    pub adam_beta1: Real,
    pub adam_beta2: Real,
    pub adam_eps: Real,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: Real,
    pub seed: u64,
    /// Epochs between `last` checkpoints.
    pub checkpoint_interval: usize,
    /// Stop after this many optimiser steps in total.
    pub max_steps: Option<u64>,
    pub spec_augment: bool,
    pub augment_policy: SpecAugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 1e-4,
            epochs: 15,
            warmup_epochs: 5,
            batch_size: 32,
            label_smoothing_eps: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_interval: 1,
            max_steps: None,
            spec_augment: true,
            augment_policy: SpecAugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            problems.push(format!("lr_peak = {} must be positive", self.lr_peak));
        }
        if self.warmup_epochs > self.epochs {
            problems.push(format!(
                "warmup_epochs = {} exceeds epochs = {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing_eps) {
            problems.push(format!("label_smoothing_eps = {} outside [0, 1)", self.label_smoothing_eps));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            problems.push("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            problems.push("adam_eps must be positive".into());
        }
        if !(self.grad_clip >= 0.0) {
            problems.push("grad_clip must be ≥ 0".into());
        }
        if self.checkpoint_interval == 0 {
            problems.push("checkpoint_interval must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Mean smoothed cross-entropy of `logits` rows against `targets`, skipping
/// rows whose target is `pad_id`.
pub fn label_smoothing_ce(logits: &Tensor, targets: &[usize], eps: Real, pad_id: usize) -> Result<Real> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, targets, eps, pad_id)?;
    g.value(loss).item()
}

/// Linear ramp from 0 to `lr_peak` over the warmup epochs, constant after.
pub fn lr_at(step: u64, steps_per_epoch: usize, cfg: &TrainConfig) -> Real {
    let warmup = (cfg.warmup_epochs * steps_per_epoch) as u64;
    if step >= warmup {
        cfg.lr_peak
    } else {
        cfg.lr_peak * step as Real / warmup as Real
    }
}

/// First and second moments per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: Real,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        if let Some(i) = g.first_non_finite() {
            return Err(Error::NonFinite {
                op: "adam_step",
                msg: format!("gradient of {name} is {} at index {i}", g.data()[i]),
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pi, mi), vi), &gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: Real) -> Real {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<Real>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.scale(s);
        }
    }
    norm
}
