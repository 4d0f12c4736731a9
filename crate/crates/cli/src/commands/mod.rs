pub mod eval;
pub mod gradcheck;
pub mod infer;
pub mod synth;
pub mod train;

use avfuse::inference::{beam_search, greedy_decode, Hypothesis};
use avfuse::model::{ModalityInput, Model};

use crate::error::CliResult;

/// Beam size plus the greedy and length-normalisation switches shared by
/// `eval` and `infer`.
#[derive(clap::Args, Clone, Debug)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 3)]
    pub beam: usize,
    /// Pick the most probable token at each step instead of beam search.
    #[arg(long)]
    pub greedy: bool,
    /// Rank beam hypotheses by summed rather than mean log-probability.
    #[arg(long)]
    pub no_length_norm: bool,
}

impl Default for DecodeArgs {
    fn default() -> Self {
        DecodeArgs {
            beam: 3,
            greedy: false,
            no_length_norm: false,
        }
    }
}

impl DecodeArgs {
    pub fn validate(&self) -> CliResult<()> {
        if self.beam == 0 {
            return Err(crate::error::invalid("--beam must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn decode_one(model: &Model, input: &ModalityInput<'_>, how: &DecodeArgs) -> CliResult<Hypothesis> {
    let mut session = model.session(input)?;
    let max_len = model.config.max_caption_len;
    if how.greedy {
        return Ok(greedy_decode(&mut session, max_len)?);
    }
    let mut hyps = beam_search(&mut session, how.beam, max_len, !how.no_length_norm)?;
    Ok(hyps.swap_remove(0))
}
