//! Line-delimited dataset manifests.
//!
//! One JSON object per line:
//!
//! ```text
//! {"id": "clip-1", "audio": "feats/clip-1.avf", "visual_features": "feats/clip-1.v.avf", "captions": ["a dog barks"]}
//! ```
//!
//! `audio` is a path to a `.wav` waveform or an `AVF1` feature file, or an
//! inline matrix of features. Relative paths resolve against the manifest's
//! directory. `visual_features` may be omitted or null.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::features::{read_feature_file, FeatureSequence, Modality};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const MAX_CAPTIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AudioSource {
    Path(PathBuf),
    Inline(Vec<Vec<Real>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub audio: AudioSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_features: Option<PathBuf>,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// Audio input of one record after loading.
#[derive(Clone, Debug, PartialEq)]
pub enum AudioInput {
    /// Mono waveform at its file's sample rate.
    Waveform { samples: Vec<Real>, sample_rate: u32 },
    Features(FeatureSequence),
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn has_visual(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.visual_features.is_some())
    }

    pub fn load_audio(&self, rec: &ManifestRecord) -> Result<AudioInput> {
        match &rec.audio {
            AudioSource::Inline(rows) => Ok(AudioInput::Features(FeatureSequence::new(
                Modality::Audio,
                Tensor::from_rows(rows)?,
            )?)),
            AudioSource::Path(p) => {
                let p = self.resolve(p);
                if is_wav(&p) {
                    let (samples, sample_rate) = crate::frontend::read_wav(&p)?;
                    Ok(AudioInput::Waveform { samples, sample_rate })
                } else {
                    Ok(AudioInput::Features(read_feature_file(&p, Modality::Audio)?))
                }
            }
        }
    }

    pub fn load_visual(&self, rec: &ManifestRecord) -> Result<Option<FeatureSequence>> {
        rec.visual_features
            .as_ref()
            .map(|p| read_feature_file(&self.resolve(p), Modality::Visual))
            .transpose()
    }

    /// Write one record per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("records serialise");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Parse and validate a manifest. Errors carry the 1-based line number of the
/// first offending record. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, path, root)
}

pub fn parse_manifest(text: &str, path: &Path, root: PathBuf) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest {
        root,
        records: Vec::new(),
    };
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.id.is_empty() {
            return Err(err("empty id".into()));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(err(format!("duplicate id {:?}", rec.id)));
        }
        if rec.captions.is_empty() {
            return Err(err("record has no captions".into()));
        }
        if rec.captions.len() > MAX_CAPTIONS {
            return Err(err(format!(
                "{} captions, at most {MAX_CAPTIONS} allowed",
                rec.captions.len()
            )));
        }
        if let AudioSource::Path(p) = &rec.audio {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(err(format!("audio file {} does not exist", full.display())));
            }
        }
        if let AudioSource::Inline(rows) = &rec.audio {
            if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
                return Err(err("inline audio must be a non-empty rectangular matrix".into()));
            }
        }
        if let Some(p) = &rec.visual_features {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(err(format!("visual feature file {} does not exist", full.display())));
            }
        }
        manifest.records.push(rec);
    }
    Ok(manifest)
}
