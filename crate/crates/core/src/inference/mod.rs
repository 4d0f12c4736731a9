//! Auto-regressive caption generation.

use std::cmp::Ordering;

use crate::data::text::{EOS_ID, SOS_ID};
use crate::error::{Error, Result};
use crate::model::DecodeSession;
use crate::numerics::Real;

/// Next-token log-probabilities for a prefix starting with `<sos>`.
pub trait StepScorer {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<Real>>;
}

/// Row-wise log-softmax of one logits vector.
pub fn log_softmax(logits: &[Real]) -> Vec<Real> {
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<Real>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl StepScorer for DecodeSession<'_> {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<Real>> {
        Ok(log_softmax(&self.next_logits(prefix)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Starts with `<sos>`; ends with `<eos>` when finished.
    pub tokens: Vec<usize>,
    /// Sum of the log-probabilities of every emitted token.
    pub log_prob: Real,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis {
            tokens: vec![SOS_ID],
            log_prob: 0.0,
            finished: false,
        }
    }

    /// Tokens after `<sos>`, `<eos>` included.
    pub fn emitted(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Cumulative log-probability, divided by the emitted-token count when
    /// `length_norm` is set.
    pub fn score(&self, length_norm: bool) -> Real {
        if length_norm && self.emitted() > 0 {
            self.log_prob / self.emitted() as Real
        } else {
            self.log_prob
        }
    }

    fn extend(&self, token: usize, lp: Real) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        Hypothesis {
            tokens,
            log_prob: self.log_prob + lp,
            finished: token == EOS_ID,
        }
    }
}

/// Higher score first, then lexicographically smaller token ids.
pub fn rank(a: &Hypothesis, b: &Hypothesis, length_norm: bool) -> Ordering {
    b.score(length_norm)
        .total_cmp(&a.score(length_norm))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Token ids ordered by log-probability, lower id first among ties;
/// non-finite entries are dropped.
fn ranked_tokens(lp: &[Real]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..lp.len()).filter(|&i| lp[i].is_finite()).collect();
    ids.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    ids
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len {max_len} < 2")));
    }
    Ok(())
}

/// Append the most likely token (lowest id among ties) until `<eos>` or
/// `max_len` tokens.
pub fn greedy_decode<S: StepScorer + ?Sized>(scorer: &mut S, max_len: usize) -> Result<Hypothesis> {
    check_max_len(max_len)?;
    let mut h = Hypothesis::root();
    while !h.finished && h.tokens.len() < max_len {
        let lp = scorer.log_probs(&h.tokens)?;
        let Some(&best) = ranked_tokens(&lp).first() else {
            return Err(Error::domain("greedy_decode", "no finite next-token score"));
        };
        h = h.extend(best, lp[best]);
    }
    Ok(h)
}

/// Beam search. Each step expands every live hypothesis by its `beam` best
/// tokens and keeps the `beam` best candidates overall. Kept candidates that
/// emitted `<eos>` or reached `max_len` tokens retire to a pool; the rest
/// stay live. Returns at most `beam` pooled hypotheses, best first.
pub fn beam_search<S: StepScorer + ?Sized>(
    scorer: &mut S,
    beam: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Vec<Hypothesis>> {
    if beam < 1 {
        return Err(Error::Config("beam must be at least 1".into()));
    }
    check_max_len(max_len)?;
    let mut live = vec![Hypothesis::root()];
    let mut pool: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut cands = Vec::with_capacity(live.len() * beam);
        for h in &live {
            let lp = scorer.log_probs(&h.tokens)?;
            for tok in ranked_tokens(&lp).into_iter().take(beam) {
                cands.push(h.extend(tok, lp[tok]));
            }
        }
        cands.sort_by(|a, b| rank(a, b, length_norm));
        cands.truncate(beam);
        live.clear();
        for c in cands {
            if c.finished || c.tokens.len() >= max_len {
                pool.push(c);
            } else {
                live.push(c);
            }
        }
    }
    pool.sort_by(|a, b| rank(a, b, length_norm));
    pool.truncate(beam);
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed table: row `prefix.len() - 1`.
    struct Table(Vec<Vec<Real>>);

    impl StepScorer for Table {
        fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<Real>> {
            let row = &self.0[(prefix.len() - 1).min(self.0.len() - 1)];
            Ok(log_softmax(row))
        }
    }

    #[test]
    fn always_eos() {
        let mut t = Table(vec![vec![0.0, 0.0, 10.0, 0.0]]);
        let h = greedy_decode(&mut t, 22).unwrap();
        assert_eq!(h.tokens, vec![SOS_ID, EOS_ID]);
        assert!(h.finished);
        let b = beam_search(&mut t, 3, 22, true).unwrap();
        assert_eq!(b[0].tokens, vec![SOS_ID, EOS_ID]);
        assert!(b.len() <= 3);
        assert!(b.windows(2).all(|w| w[0].score(true) >= w[1].score(true)));
    }

    #[test]
    fn length_bound_and_ties() {
        let mut t = Table(vec![vec![0.0, 0.0, -5.0, 1.0, 1.0]]);
        let h = greedy_decode(&mut t, 5).unwrap();
        assert_eq!(h.tokens, vec![1, 3, 3, 3, 3]);
        assert!(!h.finished);
        assert!(beam_search(&mut t, 0, 5, true).is_err());
        assert!(greedy_decode(&mut t, 1).is_err());
    }

    #[test]
    fn beam_one_is_greedy_on_a_table() {
        let mut t = Table(vec![vec![0.0, 0.0, 0.1, 0.5, 0.2], vec![0.0, 0.0, 0.3, 0.1, 0.4], vec![0.0, 0.0, 2.0, 0.0, 0.0]]);
        let g = greedy_decode(&mut t, 10).unwrap();
        let b = beam_search(&mut t, 1, 10, true).unwrap();
        assert_eq!(b, vec![g]);
    }
}
