use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use avfuse::data::{decode_ids, read_feature_file, Modality, EOS_ID};
use avfuse::frontend::{read_wav, waveform_to_patches, MelConfig};
use avfuse::model::{load_checkpoint, Model, ModalityInput};
use avfuse::{Real, Tensor};
use clap::Args;

use super::{decode_one, DecodeArgs};
use crate::error::{invalid, CliResult};

#[derive(Args, Clone, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A WAV file or an audio feature file.
    #[arg(long)]
    pub audio: PathBuf,
    /// Visual feature file.
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// Print per-block fusion confidences and mask densities.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockTrace {
    pub block: usize,
    /// Mean confidence at each caption position.
    pub mean_conf: Vec<Real>,
    pub density_a: Real,
    pub density_v: Real,
}

#[derive(Clone, Debug)]
pub struct InferOutput {
    pub caption: String,
    pub tokens: Vec<usize>,
    pub log_prob: Real,
    /// `None` when tracing was not requested or the mode has no gate.
    pub trace: Option<Vec<BlockTrace>>,
    pub trace_requested: bool,
    pub mode: avfuse::model::FusionMode,
}

impl fmt::Display for InferOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.caption)?;
        if !self.trace_requested {
            return Ok(());
        }
        match &self.trace {
            None => write!(f, "\ntrace: fusion mode {} has no confidence gate", self.mode),
            Some(blocks) => {
                for b in blocks {
                    let conf: Vec<String> = b.mean_conf.iter().map(|c| format!("{c:.3}")).collect();
                    write!(
                        f,
                        "\nblock {}: mask density audio {:.3} visual {:.3}; mean confidence per position [{}]",
                        b.block,
                        b.density_a,
                        b.density_v,
                        conf.join(", ")
                    )?;
                }
                Ok(())
            }
        }
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

pub fn load_audio(p: &Path) -> CliResult<Tensor> {
    if is_wav(p) {
        let (samples, sr) = read_wav(p)?;
        Ok(waveform_to_patches(&samples, sr, &MelConfig::default())?)
    } else {
        Ok(read_feature_file(p, Modality::Audio)?.values)
    }
}

pub fn infer(args: &InferArgs, _out: &mut dyn Write) -> CliResult<InferOutput> {
    args.decode.validate()?;
    let mut inputs = vec![&args.checkpoint, &args.audio];
    inputs.extend(args.visual.as_ref());
    for p in inputs {
        if !p.is_file() {
            return Err(invalid(format!("{} not found", p.display())));
        }
    }
    let ck = load_checkpoint(&args.checkpoint)?;
    let vocab = ck
        .vocab
        .clone()
        .ok_or_else(|| invalid(format!("{} carries no vocabulary", args.checkpoint.display())))?;
    let model = Model::from_params(ck.config.clone(), ck.params)?;
    let mode = model.config.fusion_mode;
    if mode.needs_visual() && args.visual.is_none() {
        return Err(invalid(format!("fusion mode {mode} needs --visual features")));
    }
    let audio = load_audio(&args.audio)?;
    let visual = args
        .visual
        .as_deref()
        .map(|p| read_feature_file(p, Modality::Visual))
        .transpose()?
        .map(|f| f.values);
    let input = ModalityInput {
        audio: Some(&audio),
        visual: visual.as_ref(),
    };
    let h = decode_one(&model, &input, &args.decode)?;
    let trace = if args.trace && mode.is_adaava() {
        // positions that produced the emitted tokens
        let prefix = match h.tokens.last() {
            Some(&EOS_ID) => &h.tokens[..h.tokens.len() - 1],
            _ => &h.tokens[..],
        };
        let traces = model.trace(&input, prefix)?;
        Some(
            traces
                .iter()
                .enumerate()
                .map(|(block, t)| {
                    let (density_a, density_v) = t.mask_densities();
                    BlockTrace {
                        block,
                        mean_conf: t.mean_conf_per_position(),
                        density_a,
                        density_v,
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(InferOutput {
        caption: decode_ids(&h.tokens, &vocab).join(" "),
        tokens: h.tokens,
        log_prob: h.log_prob,
        trace,
        trace_requested: args.trace,
        mode,
    })
}
