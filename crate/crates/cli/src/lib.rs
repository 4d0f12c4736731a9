//! Command-line front end: `synth`, `train`, `eval`, `infer` and
//! `gradcheck`, each also callable as a function.

pub mod commands;
pub mod config;
pub mod error;
pub mod lock;

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};

pub use commands::eval::{eval, EvalArgs, EvalSummary};
pub use commands::gradcheck::{gradcheck, GradcheckArgs, GradcheckSummary};
pub use commands::infer::{infer, InferArgs, InferOutput};
pub use commands::synth::{synth, SynthArgs, SynthSummary};
pub use commands::train::{train, TrainArgs, TrainSummary};
pub use commands::DecodeArgs;
pub use config::{Overrides, RunConfig};
pub use error::{CliResult, Failure};

#[derive(Parser, Debug)]
#[command(name = "avfuse", version, about = "Audio captioning with audio-visual fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic audio-visual captioning dataset.
    Synth(SynthArgs),
    /// Train a model; writes checkpoints, a metrics log and the resolved config.
    Train(TrainArgs),
    /// Caption every clip of a manifest and score against its captions.
    Eval(EvalArgs),
    /// Caption one clip.
    Infer(InferArgs),
    /// Check decoder-block gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let text = match &cli.command {
        Command::Synth(a) => synth(a, out)?.to_string(),
        Command::Train(a) => train(a, out)?.to_string(),
        Command::Eval(a) => eval(a, out)?.to_string(),
        Command::Infer(a) => infer(a, out)?.to_string(),
        Command::Gradcheck(a) => {
            let s = gradcheck(a, out)?;
            let text = s.to_string();
            if !s.passed() {
                let _ = writeln!(out, "{text}");
                return Err(Failure::Runtime(format!(
                    "gradient check failed: max relative error {:.3e} ≥ {:.0e}",
                    s.max_rel_error(),
                    s.tolerance
                )));
            }
            text
        }
    };
    writeln!(out, "{text}").map_err(|e| Failure::Runtime(e.to_string()))
}

/// Parse, run and map the outcome to an exit code: 0 success, 1 invalid
/// input, 2 runtime or numerical failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
