use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::metrics::{check_corpus, ngram_counts, EvalCorpus};
use crate::numerics::Real;

const SIGMA: Real = 6.0;
const N_MAX: usize = 4;

struct Doc<'a> {
    vecs: Vec<HashMap<&'a [String], Real>>,
    norms: Vec<Real>,
    len: usize,
}

fn tfidf<'a>(tokens: &'a [String], df: &HashMap<&[String], usize>, log_n: Real) -> Doc<'a> {
    let mut vecs = Vec::with_capacity(N_MAX);
    let mut norms = Vec::with_capacity(N_MAX);
    for n in 1..=N_MAX {
        let v: HashMap<&[String], Real> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as Real;
                (g, tf as Real * (log_n - d.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<Real>().sqrt());
        vecs.push(v);
    }
    Doc {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn sim(h: &Doc, r: &Doc) -> Real {
    let delta = h.len as Real - r.len as Real;
    let penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..N_MAX {
        let mut val: Real = h.vecs[n]
            .iter()
            .map(|(g, &x)| r.vecs[n].get(g).map_or(0.0, |&y| x.min(y) * y))
            .sum();
        if h.norms[n] != 0.0 && r.norms[n] != 0.0 {
            val /= h.norms[n] * r.norms[n];
        }
        total += val * penalty;
    }
    total / N_MAX as Real
}

/// CIDEr-D: tf-idf n-gram vectors (n = 1..4, document frequencies over each
/// item's reference set), clipped cosine against each reference, gaussian
/// length penalty with σ = 6, mean over orders and references, ×10; then the
/// mean over the corpus.
pub fn cider(corpus: &EvalCorpus) -> Result<Real> {
    check_corpus(corpus, "cider")?;
    if corpus.len() < 2 {
        return Err(Error::domain(
            "cider",
            "needs at least 2 items: with one item every n-gram has idf log(1/1) = 0",
        ));
    }
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for item in corpus {
        let mut seen = HashSet::new();
        for rf in &item.references {
            for n in 1..=N_MAX {
                seen.extend(ngram_counts(rf, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (corpus.len() as Real).ln();
    let mut total = 0.0;
    for item in corpus {
        let h = tfidf(&item.candidate, &df, log_n);
        let s: Real = item
            .references
            .iter()
            .map(|rf| sim(&h, &tfidf(rf, &df, log_n)))
            .sum();
        total += s / item.references.len() as Real * 10.0;
    }
    Ok(total / corpus.len() as Real)
}
