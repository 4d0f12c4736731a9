//! Multi-reference caption metrics: BLEU-1..4, ROUGE-L and CIDEr-D.

pub mod bleu;
pub mod cider;
pub mod report;
pub mod rouge;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu, closest_ref_len};
pub use cider::cider;
pub use report::{evaluate, evaluate_corpus, read_candidates, write_candidates, CandidateRecord, MetricReport};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};

/// A candidate caption and its references, as normalised tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

pub type EvalCorpus = [EvalItem];

pub(crate) fn check_corpus(corpus: &EvalCorpus, op: &'static str) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::domain(op, "empty corpus"));
    }
    if let Some(i) = corpus.iter().position(|it| it.references.is_empty()) {
        return Err(Error::domain(op, format!("item {i} has no references")));
    }
    Ok(())
}

/// Occurrence count of every `n`-gram of `tokens`.
pub fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}
