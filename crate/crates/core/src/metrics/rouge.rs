use crate::error::Result;
use crate::metrics::{check_corpus, EvalCorpus};
use crate::numerics::Real;

pub const ROUGE_BETA: Real = 1.2;

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over items of the best LCS F-measure against any reference, with
/// precision over the candidate length and recall over the reference length.
pub fn rouge_l(corpus: &EvalCorpus, beta: Real) -> Result<Real> {
    check_corpus(corpus, "rouge_l")?;
    let b2 = beta * beta;
    let mut total = 0.0;
    for item in corpus {
        let best = item
            .references
            .iter()
            .map(|rf| {
                let l = lcs_len(&item.candidate, rf) as Real;
                if l == 0.0 {
                    return 0.0;
                }
                let p = l / item.candidate.len() as Real;
                let r = l / rf.len() as Real;
                (1.0 + b2) * p * r / (r + b2 * p)
            })
            .fold(0.0, Real::max);
        total += best;
    }
    Ok(total / corpus.len() as Real)
}
