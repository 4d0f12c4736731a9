use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use avfuse::data::{build_vocabulary, load_clips, load_manifest, normalize_caption, Clip, DatasetManifest, Vocabulary};
use avfuse::model::{load_checkpoint, Model, ModelConfig};
use avfuse::training::{examples_from_clips, fit, restore_training, FitOptions, LogRecord, TrainState};
use avfuse::Real;
use clap::Args;

use crate::config::{field_diff, Overrides, RunConfig};
use crate::error::{invalid, runtime, CliResult};
use crate::lock::DirLock;

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue the run saved in the checkpoint directory.
    #[arg(long)]
    pub resume: bool,
    /// Start over in a checkpoint directory that already holds a run.
    #[arg(long, conflicts_with = "resume")]
    pub force: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub state: TrainState,
    /// Records written by this invocation.
    pub log: Vec<LogRecord>,
    pub checkpoint_dir: PathBuf,
}

impl TrainSummary {
    pub fn val_losses(&self) -> Vec<Real> {
        self.log.iter().filter_map(|r| r.val_loss).collect()
    }
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stopped at step {} (epoch {})", self.state.step, self.state.epoch)?;
        if let Some(r) = self.log.last() {
            write!(f, ", last train loss {:.4}", r.train_loss)?;
        }
        let val = self.val_losses();
        if let (Some(a), Some(b)) = (val.first(), val.last()) {
            write!(f, ", val loss {a:.4} -> {b:.4}")?;
        }
        if let Some(b) = self.state.best {
            write!(f, ", best epoch {} ({:.4})", b.epoch, b.val_loss)?;
        }
        write!(f, "\ncheckpoints in {}", self.checkpoint_dir.display())
    }
}

fn require_visual(m: &DatasetManifest, mode: avfuse::model::FusionMode, which: &str) -> CliResult<()> {
    if mode.needs_visual() && !m.has_visual() {
        return Err(invalid(format!(
            "fusion mode {mode} needs visual features but the {which} manifest lacks them"
        )));
    }
    Ok(())
}

/// Widths of the data decide the input dimensions; the vocabulary decides
/// the output size.
fn derive_dims(model: &mut ModelConfig, clips: &[Clip], vocab: &Vocabulary) -> CliResult<()> {
    model.vocab_size = vocab.len();
    if let Some(c) = clips.first() {
        model.audio_in_dim = c.audio.cols();
        if let Some(v) = &c.visual {
            model.visual_in_dim = v.cols();
        }
    }
    let too_long: Vec<&str> = clips
        .iter()
        .filter(|c| model.fusion_mode.uses_audio() && c.audio.rows() > model.max_audio_len)
        .map(|c| c.id.as_str())
        .collect();
    if !too_long.is_empty() {
        return Err(invalid(format!(
            "{} clips exceed max_audio_len = {} (first: {})",
            too_long.len(),
            model.max_audio_len,
            too_long[0]
        )));
    }
    model.validate()?;
    Ok(())
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<TrainSummary> {
    let mut cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides)?;
    cfg.validate_for_train()?;
    let dir = cfg.paths.checkpoint_dir.clone().expect("validated");
    let last = dir.join("last.ckpt");
    if args.resume && !last.is_file() {
        return Err(invalid(format!("nothing to resume: {} does not exist", last.display())));
    }
    if !args.resume && !args.force && last.exists() {
        return Err(invalid(format!(
            "{} already holds a run; pass --resume to continue it or --force to start over",
            dir.display()
        )));
    }
    let train_m = load_manifest(cfg.paths.train_manifest.as_deref().expect("validated"))?;
    let eval_m = cfg.paths.eval_manifest.as_deref().map(load_manifest).transpose()?;
    let mode = cfg.model.fusion_mode;
    require_visual(&train_m, mode, "train")?;
    if let Some(m) = &eval_m {
        require_visual(m, mode, "eval")?;
    }

    let _lock = DirLock::acquire(&dir)?;
    if args.force {
        for name in ["last.ckpt", "best.ckpt"] {
            let p = dir.join(name);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
            }
        }
    }
    let train_clips = load_clips(&train_m, &cfg.mel)?;
    let val_clips = match &eval_m {
        Some(m) => load_clips(m, &cfg.mel)?,
        None => Vec::new(),
    };

    let (mut model, vocab, resume) = if args.resume {
        let ck = load_checkpoint(&last)?;
        let vocab = ck
            .vocab
            .clone()
            .ok_or_else(|| invalid(format!("{} carries no vocabulary", last.display())))?;
        derive_dims(&mut cfg.model, &train_clips, &vocab)?;
        let diff = field_diff(&ck.config, &cfg.model);
        if !diff.is_empty() {
            return Err(invalid(format!(
                "resolved model config differs from {}: {}",
                last.display(),
                diff.join("; ")
            )));
        }
        let (model, state) = restore_training(&ck)?;
        let state = state.ok_or_else(|| invalid(format!("{} has no training state", last.display())))?;
        (model, vocab, Some(state))
    } else {
        let corpus: Vec<Vec<String>> = train_clips
            .iter()
            .flat_map(|c| c.captions.iter().map(|s| normalize_caption(s)))
            .collect();
        let vocab = build_vocabulary(&corpus, cfg.vocab_min_count)?;
        derive_dims(&mut cfg.model, &train_clips, &vocab)?;
        (Model::new(cfg.model.clone(), cfg.seed)?, vocab, None)
    };

    let max_len = cfg.model.max_caption_len;
    let train = examples_from_clips(&train_clips, &vocab, max_len)?;
    let val = examples_from_clips(&val_clips, &vocab, max_len)?;
    cfg.echo(&dir.join("run_config.toml"))?;
    let w = |e: std::io::Error| runtime(e.to_string());
    writeln!(
        out,
        "fusion_mode={} beta={} d={} heads={} blocks={}+{} params={} vocab={} seed={}",
        cfg.model.fusion_mode,
        cfg.model.beta,
        cfg.model.d,
        cfg.model.heads,
        cfg.model.encoder_blocks,
        cfg.model.decoder_blocks,
        model.params.num_scalars(),
        vocab.len(),
        cfg.seed
    )
    .map_err(w)?;
    writeln!(
        out,
        "{} train / {} val examples, batch {}, {} epochs{}",
        train.len(),
        val.len(),
        cfg.train.batch_size,
        cfg.train.epochs,
        match &resume {
            Some(s) => format!(", resuming at step {}", s.step),
            None => String::new(),
        }
    )
    .map_err(w)?;

    let log_path = dir.join("metrics.jsonl");
    let report = fit(
        &mut model,
        &train,
        &val,
        &cfg.train,
        FitOptions {
            checkpoint_dir: Some(&dir),
            metrics_log: Some(&log_path),
            vocab: Some(&vocab),
            resume,
        },
    )?;
    Ok(TrainSummary {
        config: cfg,
        state: report.state,
        log: report.log,
        checkpoint_dir: dir,
    })
}
