use std::collections::HashMap;

use crate::error::Result;
use crate::metrics::{check_corpus, ngram_counts, EvalCorpus};
use crate::numerics::Real;

/// Reference length closest to `c`, the shorter one on ties.
pub fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Corpus-level BLEU-1..`n_max`: clipped n-gram precisions pooled over the
/// corpus, geometric mean over orders, brevity penalty against the summed
/// closest reference lengths. No smoothing: an order with no match gives 0.
pub fn bleu(corpus: &EvalCorpus, n_max: usize) -> Result<Vec<Real>> {
    check_corpus(corpus, "bleu")?;
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    let (mut c, mut r) = (0usize, 0usize);
    for item in corpus {
        c += item.candidate.len();
        r += closest_ref_len(item.candidate.len(), &item.references);
        for n in 1..=n_max {
            let cand = ngram_counts(&item.candidate, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for rf in &item.references {
                for (g, k) in ngram_counts(rf, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in cand {
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as Real / c as Real).exp()
    } else {
        1.0
    };
    let mut out = Vec::with_capacity(n_max);
    let mut log_sum = 0.0;
    let mut dead = false;
    for n in 0..n_max {
        if matched[n] == 0 {
            dead = true;
        } else {
            log_sum += (matched[n] as Real / total[n] as Real).ln();
        }
        out.push(if dead { 0.0 } else { bp * (log_sum / (n + 1) as Real).exp() });
    }
    Ok(out)
}
