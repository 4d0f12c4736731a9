use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use avfuse::data::{generate_synthetic_task, SyntheticTaskSpec};
use clap::Args;

use crate::error::{invalid, CliResult};

#[derive(Args, Clone, Debug)]
pub struct SynthArgs {
    /// Output directory for manifests and feature files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub ambiguous_pairs: usize,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub audio_len: usize,
    #[arg(long, default_value_t = 4)]
    pub visual_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 16)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub eval_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

impl SynthArgs {
    pub fn spec(&self) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            n_classes: self.classes,
            n_ambiguous_pairs: self.ambiguous_pairs,
            feature_dim: self.feature_dim,
            audio_len: self.audio_len,
            visual_len: self.visual_len,
            noise_std: self.noise_std as avfuse::Real,
            train_per_class: self.train_per_class,
            eval_per_class: self.eval_per_class,
            caption_templates: None,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub n_train: usize,
    pub n_eval: usize,
    pub spec: SyntheticTaskSpec,
}

impl fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.spec;
        writeln!(
            f,
            "{} classes ({} ambiguous pairs), {}-dim features, {} audio / {} visual rows per clip",
            s.n_classes, s.n_ambiguous_pairs, s.feature_dim, s.audio_len, s.visual_len
        )?;
        writeln!(f, "train: {} clips -> {}", self.n_train, self.train_manifest.display())?;
        write!(f, "eval:  {} clips -> {}", self.n_eval, self.eval_manifest.display())
    }
}

pub fn synth(args: &SynthArgs, _out: &mut dyn Write) -> CliResult<SynthSummary> {
    let spec = args.spec();
    spec.validate()?;
    if !args.force {
        if let Ok(mut entries) = std::fs::read_dir(&args.out) {
            if entries.next().is_some() {
                return Err(invalid(format!(
                    "{} is not empty; pass --force to write into it",
                    args.out.display()
                )));
            }
        }
    }
    let ds = generate_synthetic_task(&spec)?;
    let (train_manifest, eval_manifest) = ds.write_to_dir(&args.out)?;
    Ok(SynthSummary {
        train_manifest,
        eval_manifest,
        n_train: ds.train.len(),
        n_eval: ds.eval.len(),
        spec,
    })
}
