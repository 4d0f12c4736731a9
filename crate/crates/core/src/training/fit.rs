//! The epoch loop, its resumable state and checkpoints.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::clips::Clip;
use crate::data::text::{encode_caption, normalize_caption, Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::frontend::augment_matrix;
use crate::model::{decode, encode, save_checkpoint, Checkpoint, ModalityInput, Model};
use crate::numerics::{Dropout, Graph, Real, Tensor};
use crate::rng::substream;
use crate::training::{adam_step, clip_global_norm, lr_at, AdamState, TrainConfig};

/// One caption of one clip, ready for teacher forcing.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub audio: Option<Tensor>,
    pub visual: Option<Tensor>,
    /// `<sos> words… <eos>`, unpadded.
    pub tokens: Vec<usize>,
}

/// One example per caption.
pub fn examples_from_clips(clips: &[Clip], vocab: &Vocabulary, max_len: usize) -> Result<Vec<TrainExample>> {
    let mut out = Vec::new();
    for c in clips {
        for cap in &c.captions {
            let seq = encode_caption(&normalize_caption(cap), vocab, max_len)?;
            out.push(TrainExample {
                audio: Some(c.audio.clone()),
                visual: c.visual.clone(),
                tokens: seq.ids[..seq.len].to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub val_loss: Real,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimiser steps taken.
    pub step: u64,
    pub epoch: usize,
    /// Batches of `epoch` already consumed.
    pub batch_in_epoch: usize,
    pub best: Option<BestRecord>,
    #[serde(skip)]
    pub adam: AdamState,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: Real,
    pub train_loss: Real,
    /// Set on the last step of each epoch when validation data exist.
    pub val_loss: Option<Real>,
}

#[derive(Default)]
pub struct FitOptions<'a> {
    /// `last.ckpt` and `best.ckpt` go here.
    pub checkpoint_dir: Option<&'a Path>,
    /// JSON-lines log; truncated on a fresh run, appended on resume.
    pub metrics_log: Option<&'a Path>,
    pub vocab: Option<&'a Vocabulary>,
    pub resume: Option<TrainState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub state: TrainState,
    pub log: Vec<LogRecord>,
}

fn input(e: &TrainExample) -> ModalityInput<'_> {
    ModalityInput {
        audio: e.audio.as_ref(),
        visual: e.visual.as_ref(),
    }
}

fn check_example(e: &TrainExample) -> Result<()> {
    if e.tokens.len() < 2 {
        return Err(Error::domain("fit", "token sequence shorter than <sos> <eos>"));
    }
    Ok(())
}

/// One optimiser step on `batch`; returns the batch loss before the update.
pub fn train_step(
    model: &mut Model,
    batch: &[&TrainExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    lr: Real,
) -> Result<Real> {
    let step = state.step;
    let wrap = |e: Error| match e {
        Error::NonFinite { op, msg } => Error::NonFinite {
            op,
            msg: format!("training step {step}: {msg}"),
        },
        other => other,
    };
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, true);
    let mut dropout = Dropout::new(model.config.dropout, substream(cfg.seed, "dropout", step));
    let mut augment_rng = substream(cfg.seed, "augment", step);
    let mut logits = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for e in batch {
        check_example(e)?;
        let augmented = match (&e.audio, cfg.spec_augment) {
            (Some(a), true) => Some(augment_matrix(a, &cfg.augment_policy, &mut augment_rng)),
            _ => None,
        };
        let inp = ModalityInput {
            audio: augmented.as_ref().or(e.audio.as_ref()),
            visual: e.visual.as_ref(),
        };
        let enc = encode(&mut g, &bound, &model.config, &inp, Some(&mut dropout)).map_err(wrap)?;
        let n = e.tokens.len() - 1;
        let l = decode(&mut g, &bound, &model.config, &enc, &e.tokens[..n], Some(&mut dropout), None)
            .map_err(wrap)?;
        logits.push(l);
        targets.extend_from_slice(&e.tokens[1..]);
    }
    let all = g.concat_rows(&logits).map_err(wrap)?;
    let loss = g
        .cross_entropy(all, &targets, cfg.label_smoothing_eps, PAD_ID)
        .map_err(wrap)?;
    let value = g.value(loss).item()?;
    let mut grads_tape = g.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (name, &v) in bound.iter() {
        let grad = grads_tape.take(v).expect("every parameter is a tracked leaf");
        grads.insert(name.clone(), grad);
    }
    clip_global_norm(&mut grads, cfg.grad_clip);
    adam_step(&mut model.params, &grads, &mut state.adam, lr, cfg).map_err(|e| match e {
        Error::NonFinite { op, msg } => Error::NonFinite {
            op,
            msg: format!("training step {step}: {msg}"),
        },
        other => other,
    })?;
    Ok(value)
}

/// Mean loss per target token over `data`, without dropout or augmentation.
pub fn validation_loss(model: &Model, data: &[TrainExample], eps: Real) -> Result<Real> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, false);
    let mark = g.len();
    let (mut total, mut count) = (0.0, 0usize);
    for e in data {
        check_example(e)?;
        let enc = encode(&mut g, &bound, &model.config, &input(e), None)?;
        let n = e.tokens.len() - 1;
        let l = decode(&mut g, &bound, &model.config, &enc, &e.tokens[..n], None, None)?;
        let loss = g.cross_entropy(l, &e.tokens[1..], eps, PAD_ID)?;
        let k = e.tokens[1..].iter().filter(|&&t| t != PAD_ID).count();
        total += g.value(loss).item()? * k as Real;
        count += k;
        g.truncate(mark);
    }
    if count == 0 {
        return Err(Error::domain("validation_loss", "no target tokens"));
    }
    Ok(total / count as Real)
}

/// Pack model, vocabulary, run state and optimiser moments.
pub fn checkpoint_from_training(
    model: &Model,
    vocab: Option<&Vocabulary>,
    state: &TrainState,
    cfg: &TrainConfig,
) -> Checkpoint {
    let mut extra = BTreeMap::new();
    for (n, t) in &state.adam.m {
        extra.insert(format!("adam.m.{n}"), t.clone());
    }
    for (n, t) in &state.adam.v {
        extra.insert(format!("adam.v.{n}"), t.clone());
    }
    Checkpoint {
        config: model.config.clone(),
        vocab: vocab.cloned(),
        params: model.params.clone(),
        state: serde_json::json!({
            "train": state,
            "adam_t": state.adam.t,
            "train_config": cfg,
        }),
        extra,
    }
}

/// Inverse of [`checkpoint_from_training`]: the model, and the run state if
/// the checkpoint carries one.
pub fn restore_training(ck: &Checkpoint) -> Result<(Model, Option<TrainState>)> {
    let model = Model::from_params(ck.config.clone(), ck.params.clone())?;
    let Some(train) = ck.state.get("train") else {
        return Ok((model, None));
    };
    let mut state: TrainState = serde_json::from_value(train.clone())
        .map_err(|e| Error::Checkpoint(format!("training state: {e}")))?;
    state.adam.t = ck.state.get("adam_t").and_then(|v| v.as_u64()).unwrap_or(0);
    for (k, t) in &ck.extra {
        if let Some(n) = k.strip_prefix("adam.m.") {
            state.adam.m.insert(n.to_string(), t.clone());
        } else if let Some(n) = k.strip_prefix("adam.v.") {
            state.adam.v.insert(n.to_string(), t.clone());
        }
    }
    Ok((model, Some(state)))
}

struct Log {
    file: Option<File>,
    records: Vec<LogRecord>,
}

impl Log {
    fn push(&mut self, r: LogRecord, path: Option<&Path>) -> Result<()> {
        if let (Some(f), Some(p)) = (self.file.as_mut(), path) {
            let mut line = serde_json::to_vec(&r).expect("records serialise");
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(p, e))?;
        }
        self.records.push(r);
        Ok(())
    }
}

/// Train with seeded shuffling, dropout and augmentation. Every random draw
/// comes from a substream keyed by the seed and the epoch or step, so a run
/// resumed from a checkpoint continues exactly as an uninterrupted one.
pub fn fit(
    model: &mut Model,
    train: &[TrainExample],
    val: &[TrainExample],
    cfg: &TrainConfig,
    opts: FitOptions<'_>,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let resumed = opts.resume.is_some();
    let mut state = opts.resume.unwrap_or_default();
    let file = match opts.metrics_log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .write(true)
                .append(resumed)
                .truncate(!resumed)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };
    let mut log = Log {
        file,
        records: Vec::new(),
    };
    let spe = train.len().div_ceil(cfg.batch_size);
    let save = |name: &str, model: &Model, state: &TrainState| -> Result<()> {
        if let Some(dir) = opts.checkpoint_dir {
            let ck = checkpoint_from_training(model, opts.vocab, state, cfg);
            save_checkpoint(&ck, &dir.join(name))?;
        }
        Ok(())
    };
    let out_of_steps = |state: &TrainState| cfg.max_steps.is_some_and(|m| state.step >= m);

    while state.epoch < cfg.epochs && !out_of_steps(&state) {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut substream(cfg.seed, "shuffle", state.epoch as u64));
        let mut last = None;
        while state.batch_in_epoch < spe && !out_of_steps(&state) {
            let b = state.batch_in_epoch;
            let batch: Vec<&TrainExample> = order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(train.len())]
                .iter()
                .map(|&i| &train[i])
                .collect();
            let lr = lr_at(state.step, spe, cfg);
            let loss = train_step(model, &batch, cfg, &mut state, lr)?;
            state.step += 1;
            state.batch_in_epoch += 1;
            let rec = LogRecord {
                step: state.step,
                epoch: state.epoch,
                lr,
                train_loss: loss,
                val_loss: None,
            };
            if state.batch_in_epoch < spe {
                log.push(rec, opts.metrics_log)?;
            } else {
                last = Some(rec);
            }
        }
        let Some(mut rec) = last else {
            // stopped by max_steps inside the epoch
            break;
        };
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(validation_loss(model, val, cfg.label_smoothing_eps)?)
        };
        rec.val_loss = val_loss;
        log.push(rec, opts.metrics_log)?;
        let finished = state.epoch;
        state.epoch += 1;
        state.batch_in_epoch = 0;
        if let Some(v) = val_loss {
            if state.best.is_none_or(|b| v < b.val_loss) {
                state.best = Some(BestRecord {
                    epoch: finished,
                    val_loss: v,
                });
                save("best.ckpt", model, &state)?;
            }
        }
        if state.epoch.is_multiple_of(cfg.checkpoint_interval) {
            save("last.ckpt", model, &state)?;
        }
    }
    save("last.ckpt", model, &state)?;
    Ok(FitReport {
        state,
        log: log.records,
    })
}
