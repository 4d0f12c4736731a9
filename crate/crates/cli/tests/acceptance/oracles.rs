//! Brute-force reference implementations, deliberately written without the
//! library's metric code.

use std::collections::HashMap;

pub type Words = Vec<String>;

fn ngrams(s: &[String], n: usize) -> Vec<&[String]> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| &s[i..i + n]).collect()
}

fn occurrences(s: &[String], g: &[String]) -> usize {
    ngrams(s, g.len()).into_iter().filter(|x| *x == g).count()
}

fn distinct(grams: Vec<&[String]>) -> Vec<&[String]> {
    let mut out: Vec<&[String]> = Vec::new();
    for g in grams {
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

/// Corpus BLEU_1..=n_max: clipped counts by scanning, product of
/// precisions raised to 1/n.
pub fn bleu(items: &[(Words, Vec<Words>)], n_max: usize) -> Vec<f64> {
    let mut matched = vec![0usize; n_max + 1];
    let mut total = vec![0usize; n_max + 1];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refs) in items {
        c += cand.len();
        let mut best = refs[0].len();
        for rf in refs {
            let (d, bd) = (rf.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        r += best;
        for n in 1..=n_max {
            total[n] += ngrams(cand, n).len();
            for g in distinct(ngrams(cand, n)) {
                let limit = refs.iter().map(|rf| occurrences(rf, g)).max().unwrap();
                matched[n] += occurrences(cand, g).min(limit);
            }
        }
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    (1..=n_max)
        .map(|n| {
            let mut prod = 1.0;
            for k in 1..=n {
                prod *= matched[k] as f64 / total[k] as f64;
            }
            if prod == 0.0 {
                0.0
            } else {
                bp * prod.powf(1.0 / n as f64)
            }
        })
        .collect()
}

/// Top-down memoised longest common subsequence.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Longest common subsequence by trying every subsequence of `a`.
pub fn lcs_enumerated(a: &[String], b: &[String]) -> usize {
    let is_sub = |picked: &[&String]| {
        let mut it = b.iter();
        picked.iter().all(|w| it.any(|x| x == *w))
    };
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let picked: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if picked.len() > best && is_sub(&picked) {
            best = picked.len();
        }
    }
    best
}

pub fn rouge_l(items: &[(Words, Vec<Words>)], beta: f64) -> f64 {
    let mut sum = 0.0;
    for (cand, refs) in items {
        let mut best: f64 = 0.0;
        for rf in refs {
            let l = lcs(cand, rf) as f64;
            if l > 0.0 {
                let (p, r) = (l / cand.len() as f64, l / rf.len() as f64);
                best = best.max((1.0 + beta * beta) * p * r / (r + beta * beta * p));
            }
        }
        sum += best;
    }
    sum / items.len() as f64
}

/// CIDEr-D from explicit tf-idf vectors and their cosine, clipped.
pub fn cider_d(items: &[(Words, Vec<Words>)]) -> f64 {
    let n_docs = items.len() as f64;
    let df = |g: &[String]| -> f64 {
        items
            .iter()
            .filter(|(_, refs)| refs.iter().any(|rf| occurrences(rf, g) > 0))
            .count() as f64
    };
    let vector = |s: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
        distinct(ngrams(s, n))
            .into_iter()
            .map(|g| {
                let tf = occurrences(s, g) as f64;
                (g.to_vec(), tf * (n_docs.ln() - df(g).max(1.0).ln()))
            })
            .collect()
    };
    let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    let mut corpus_sum = 0.0;
    for (cand, refs) in items {
        let mut item_sum = 0.0;
        for rf in refs {
            let gap = cand.len() as f64 - rf.len() as f64;
            let penalty = (-gap * gap / 72.0).exp();
            let mut per_n = 0.0;
            for n in 1..=4 {
                let (vc, vr) = (vector(cand, n), vector(rf, n));
                let mut dot = 0.0;
                for (g, x) in &vc {
                    if let Some((_, y)) = vr.iter().find(|(h, _)| h == g) {
                        dot += x.min(*y) * y;
                    }
                }
                let (nc, nr) = (norm(&vc), norm(&vr));
                if nc != 0.0 && nr != 0.0 {
                    dot /= nc * nr;
                }
                per_n += dot * penalty;
            }
            item_sum += per_n / 4.0;
        }
        corpus_sum += 10.0 * item_sum / refs.len() as f64;
    }
    corpus_sum / items.len() as f64
}

/// Elementwise gated sum with strict threshold tests.
pub fn adaava(c: f64, a: f64, v: f64, beta: f64) -> f64 {
    let audio = if c > beta { c * a } else { 0.0 };
    let visual = if 1.0 - c > beta { (1.0 - c) * v } else { 0.0 };
    audio + visual
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
