use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use avfuse::data::{decode_ids, load_clips, load_manifest};
use avfuse::frontend::MelConfig;
use avfuse::metrics::{evaluate, write_candidates, CandidateRecord, MetricReport};
use avfuse::model::{load_checkpoint, Model, ModalityInput, ModelConfig};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use super::{decode_one, DecodeArgs};
use crate::error::{invalid, runtime, CliResult};

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clips to caption and score; their captions are the references.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for candidates, report and the resolved settings.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

/// Resolved evaluation settings, written next to the report.
#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    manifest: &'a Path,
    beam: usize,
    greedy: bool,
    length_norm: bool,
    threads: usize,
    mel: MelConfig,
    model: &'a ModelConfig,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub report: MetricReport,
    pub report_path: PathBuf,
    pub candidates_path: PathBuf,
    pub candidates: Vec<CandidateRecord>,
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.report;
        writeln!(
            f,
            "BLEU-1 {:.4}  BLEU-2 {:.4}  BLEU-3 {:.4}  BLEU-4 {:.4}  ROUGE-L {:.4}  CIDEr {:.4}  ({} clips)",
            r.bleu_1, r.bleu_2, r.bleu_3, r.bleu_4, r.rouge_l, r.cider, r.n_items
        )?;
        write!(f, "report: {}", self.report_path.display())
    }
}

/// Worker count from `AVFUSE_THREADS`; 0 lets the pool decide.
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("AVFUSE_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid(format!("AVFUSE_THREADS = {v:?} is not a positive integer"))),
    }
}

pub fn eval(args: &EvalArgs, _out: &mut dyn Write) -> CliResult<EvalSummary> {
    args.decode.validate()?;
    for p in [&args.checkpoint, &args.manifest] {
        if !p.is_file() {
            return Err(invalid(format!("{} not found", p.display())));
        }
    }
    let threads = thread_cap()?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let vocab = ck
        .vocab
        .clone()
        .ok_or_else(|| invalid(format!("{} carries no vocabulary", args.checkpoint.display())))?;
    let model = Model::from_params(ck.config.clone(), ck.params)?;
    let manifest = load_manifest(&args.manifest)?;
    let mel = MelConfig::default();
    let clips = load_clips(&manifest, &mel)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| runtime(e.to_string()))?;
    let candidates: Vec<CandidateRecord> = pool.install(|| {
        clips
            .par_iter()
            .map(|c| {
                let input = ModalityInput {
                    audio: Some(&c.audio),
                    visual: c.visual.as_ref(),
                };
                let h = decode_one(&model, &input, &args.decode).map_err(|e| match e {
                    crate::Failure::Validation(m) => invalid(format!("clip {}: {m}", c.id)),
                    crate::Failure::Runtime(m) => runtime(format!("clip {}: {m}", c.id)),
                })?;
                Ok(CandidateRecord {
                    id: c.id.clone(),
                    caption: decode_ids(&h.tokens, &vocab).join(" "),
                })
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    std::fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let candidates_path = args.out.join("candidates.jsonl");
    let report_path = args.out.join("report.json");
    write_candidates(&candidates, &candidates_path)?;
    let report = evaluate(&candidates_path, &args.manifest)?;
    report.write(&report_path)?;
    let echo = EvalEcho {
        checkpoint: &args.checkpoint,
        manifest: &args.manifest,
        beam: args.decode.beam,
        greedy: args.decode.greedy,
        length_norm: !args.decode.no_length_norm,
        threads,
        mel,
        model: &model.config,
    };
    let echo_path = args.out.join("eval_config.toml");
    std::fs::write(&echo_path, toml::to_string(&echo).expect("settings serialise"))
        .map_err(|e| runtime(format!("{}: {e}", echo_path.display())))?;
    Ok(EvalSummary {
        report,
        report_path,
        candidates_path,
        candidates,
    })
}
