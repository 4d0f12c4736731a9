//! The run configuration: one TOML document, overridable from flags.

use std::fs;
use std::path::{Path, PathBuf};

use avfuse::frontend::MelConfig;
use avfuse::model::{FusionMode, ModelConfig};
use avfuse::training::TrainConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, runtime, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Rank hypotheses by mean rather than summed log-probability.
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 3,
            length_norm: true,
        }
    }
}

/// Where the resolved values came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Resolution {
    pub config_file: Option<PathBuf>,
    /// Keys set by command-line flags, which win over the file.
    pub from_flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives initialisation, shuffling, dropout and augmentation.
    pub seed: u64,
    pub vocab_min_count: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mel: MelConfig,
    pub paths: Paths,
    pub decode: DecodeConfig,
    /// Filled in when the config is echoed; ignored on input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            vocab_min_count: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mel: MelConfig::default(),
            paths: Paths::default(),
            decode: DecodeConfig::default(),
            resolution: None,
        }
    }
}

/// Flags that override the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub fusion_mode: Option<FusionMode>,
    /// Confidence threshold of the fusion masks.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_blocks: Option<usize>,
    #[arg(long)]
    pub decoder_blocks: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Turn SpecAugment off.
    #[arg(long)]
    pub no_augment: bool,
}

fn absolutise(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(q) = p {
        if q.is_relative() {
            *q = base.join(&*q);
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<RunConfig> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    /// Defaults, then the file (paths relative to its directory), then flags.
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> CliResult<RunConfig> {
        let mut cfg = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                let mut c = Self::from_toml(&text).map_err(|e| invalid(format!("{}: {}", p.display(), e.message())))?;
                if c.train.seed != 0 && c.train.seed != c.seed {
                    return Err(invalid(format!(
                        "{}: train.seed = {} conflicts with seed = {}; set the top-level seed only",
                        p.display(),
                        c.train.seed,
                        c.seed
                    )));
                }
                let base = p.parent().unwrap_or(Path::new("."));
                absolutise(base, &mut c.paths.train_manifest);
                absolutise(base, &mut c.paths.eval_manifest);
                absolutise(base, &mut c.paths.checkpoint_dir);
                absolutise(base, &mut c.paths.report);
                c
            }
            None => RunConfig::default(),
        };
        let mut flags = Vec::new();
        macro_rules! set {
            ($field:expr, $value:expr, $key:literal) => {
                if let Some(v) = $value.clone() {
                    $field = v.into();
                    flags.push($key.to_string());
                }
            };
        }
        set!(cfg.paths.train_manifest, o.train_manifest.clone().map(Some), "paths.train_manifest");
        set!(cfg.paths.eval_manifest, o.eval_manifest.clone().map(Some), "paths.eval_manifest");
        set!(cfg.paths.checkpoint_dir, o.checkpoint_dir.clone().map(Some), "paths.checkpoint_dir");
        set!(cfg.paths.report, o.report.clone().map(Some), "paths.report");
        set!(cfg.model.fusion_mode, o.fusion_mode, "model.fusion_mode");
        set!(cfg.model.beta, o.beta, "model.beta");
        set!(cfg.seed, o.seed, "seed");
        set!(cfg.model.d, o.d, "model.d");
        set!(cfg.model.heads, o.heads, "model.heads");
        set!(cfg.model.encoder_blocks, o.encoder_blocks, "model.encoder_blocks");
        set!(cfg.model.decoder_blocks, o.decoder_blocks, "model.decoder_blocks");
        set!(cfg.model.dropout, o.dropout, "model.dropout");
        set!(cfg.train.epochs, o.epochs, "train.epochs");
        set!(cfg.train.warmup_epochs, o.warmup_epochs, "train.warmup_epochs");
        set!(cfg.train.batch_size, o.batch_size, "train.batch_size");
        set!(cfg.train.lr_peak, o.lr, "train.lr_peak");
        set!(cfg.train.label_smoothing_eps, o.label_smoothing, "train.label_smoothing_eps");
        set!(cfg.train.max_steps, o.max_steps.map(Some), "train.max_steps");
        if o.no_augment {
            cfg.train.spec_augment = false;
            flags.push("train.spec_augment".into());
        }
        cfg.train.seed = cfg.seed;
        cfg.resolution = Some(Resolution {
            config_file: file.map(Path::to_path_buf),
            from_flags: flags,
        });
        Ok(cfg)
    }

    /// Every problem that can be seen before touching any data.
    pub fn validate_for_train(&self) -> CliResult<()> {
        let mut problems = Vec::new();
        for r in [self.model.validate(), self.train.validate()] {
            if let Err(avfuse::Error::Config(m)) = r {
                problems.push(m);
            }
        }
        match &self.paths.train_manifest {
            None => problems.push("paths.train_manifest is required".into()),
            Some(p) if !p.is_file() => problems.push(format!("train manifest {} not found", p.display())),
            _ => {}
        }
        if let Some(p) = &self.paths.eval_manifest {
            if !p.is_file() {
                problems.push(format!("eval manifest {} not found", p.display()));
            }
        }
        match &self.paths.checkpoint_dir {
            None => problems.push("paths.checkpoint_dir is required".into()),
            Some(p) if p.exists() && !p.is_dir() => {
                problems.push(format!("checkpoint_dir {} is not a directory", p.display()))
            }
            _ => {}
        }
        if self.vocab_min_count == 0 {
            problems.push("vocab_min_count must be at least 1".into());
        }
        if self.decode.beam == 0 {
            problems.push("decode.beam must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(invalid(problems.join("; ")))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn echo(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_toml()).map_err(|e| runtime(format!("{}: {e}", path.display())))
    }
}

/// Field-by-field differences between two serialisable values, as
/// `key: left vs right` lines.
pub fn field_diff<T: Serialize>(left: &T, right: &T) -> Vec<String> {
    let (l, r) = (serde_json::to_value(left).unwrap(), serde_json::to_value(right).unwrap());
    match (l.as_object(), r.as_object()) {
        (Some(a), Some(b)) => a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: {v} vs {}", b.get(k).unwrap_or(&serde_json::Value::Null)))
            .collect(),
        _ if l != r => vec![format!("{l} vs {r}")],
        _ => Vec::new(),
    }
}
