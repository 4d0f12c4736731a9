//! Candidate files and the metric report.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::manifest::load_manifest;
use crate::data::text::normalize_caption;
use crate::error::{Error, Result};
use crate::metrics::{bleu, cider, rouge_l, EvalCorpus, EvalItem, ROUGE_BETA};
use crate::numerics::Real;

/// One line of a candidates file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub id: String,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu_1: Real,
    pub bleu_2: Real,
    pub bleu_3: Real,
    pub bleu_4: Real,
    pub rouge_l: Real,
    pub cider: Real,
    pub n_items: usize,
}

impl MetricReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

pub fn evaluate_corpus(corpus: &EvalCorpus) -> Result<MetricReport> {
    let b = bleu(corpus, 4)?;
    Ok(MetricReport {
        bleu_1: b[0],
        bleu_2: b[1],
        bleu_3: b[2],
        bleu_4: b[3],
        rouge_l: rouge_l(corpus, ROUGE_BETA)?,
        cider: cider(corpus)?,
        n_items: corpus.len(),
    })
}

pub fn write_candidates(records: &[CandidateRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialise"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let r: CandidateRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !seen.insert(r.id.clone()) {
            return Err(err(format!("duplicate id {:?}", r.id)));
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(Error::format(path, "candidates file is empty"));
    }
    Ok(out)
}

/// Score a candidates file against a manifest's captions. Every manifest
/// record needs exactly one candidate and every candidate a record.
pub fn evaluate(candidates: &Path, references: &Path) -> Result<MetricReport> {
    let cands = read_candidates(candidates)?;
    let manifest = load_manifest(references)?;
    let by_id: HashMap<&str, &CandidateRecord> = cands.iter().map(|c| (c.id.as_str(), c)).collect();
    let known: HashSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
    let unknown: Vec<&str> = cands
        .iter()
        .map(|c| c.id.as_str())
        .filter(|id| !known.contains(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "candidates for ids absent from the manifest: {}",
            unknown.join(", ")
        )));
    }
    let missing: Vec<&str> = manifest
        .records
        .iter()
        .map(|r| r.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("no candidate for ids: {}", missing.join(", "))));
    }
    let corpus: Vec<EvalItem> = manifest
        .records
        .iter()
        .map(|r| EvalItem {
            candidate: normalize_caption(&by_id[r.id.as_str()].caption),
            references: r.captions.iter().map(|c| normalize_caption(c)).collect(),
        })
        .collect();
    evaluate_corpus(&corpus)
}
