//! Synthetic ambiguous-sound captioning task.
//!
//! Each class pairs a sound category with an on-screen object. Classes
//! `2i` and `2i + 1` (for `i < n_ambiguous_pairs`) share one sound category,
//! so their audio prototypes are identical and only the visual stream tells
//! them apart. The visual stream shows one of two objects and says nothing
//! about the sound category. Captions read `a <object> <sound phrase>`, so
//! paired captions differ only in the object word.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::features::write_feature_file;
use crate::data::manifest::{AudioSource, DatasetManifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

const OBJECTS: [&str; 2] = ["man", "woman"];

const SOUNDS: [&str; 16] = [
    "speaks",
    "coughs twice",
    "laughs loudly",
    "whistles a tune",
    "sneezes",
    "sings softly",
    "shouts outside",
    "snores",
    "claps hands",
    "hums quietly",
    "types on a keyboard",
    "knocks on a door",
    "plays a guitar",
    "rings a bell",
    "drums on a table",
    "blows a whistle",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub n_classes: usize,
    pub n_ambiguous_pairs: usize,
    /// Width of both audio and visual feature rows.
    pub feature_dim: usize,
    /// Audio rows per clip.
    pub audio_len: usize,
    /// Visual rows per clip.
    pub visual_len: usize,
    pub noise_std: Real,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    /// One caption per class; generated from the class structure when absent.
    pub caption_templates: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            n_classes: 8,
            n_ambiguous_pairs: 4,
            feature_dim: 32,
            audio_len: 8,
            visual_len: 4,
            noise_std: 0.1,
            train_per_class: 16,
            eval_per_class: 8,
            caption_templates: None,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if self.n_classes < 2 * self.n_ambiguous_pairs {
            return bad(format!(
                "{} classes cannot hold {} ambiguous pairs",
                self.n_classes, self.n_ambiguous_pairs
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and ≥ 0", self.noise_std));
        }
        if self.feature_dim == 0 || self.audio_len == 0 || self.visual_len == 0 {
            return bad("feature_dim, audio_len and visual_len must be positive".into());
        }
        if self.train_per_class == 0 {
            return bad("train_per_class must be positive".into());
        }
        match &self.caption_templates {
            Some(t) if t.len() != self.n_classes => {
                return bad(format!("{} caption templates for {} classes", t.len(), self.n_classes))
            }
            Some(t) => {
                for i in 0..self.n_ambiguous_pairs {
                    if t[2 * i] == t[2 * i + 1] {
                        return bad(format!("paired classes {} and {} share a caption", 2 * i, 2 * i + 1));
                    }
                }
            }
            None if self.sound_groups() > SOUNDS.len() => {
                return bad(format!(
                    "{} sound categories need explicit caption templates",
                    self.sound_groups()
                ))
            }
            None => {}
        }
        Ok(())
    }

    /// Sound category of a class; pair members share one.
    pub fn sound_group(&self, class: usize) -> usize {
        if class < 2 * self.n_ambiguous_pairs {
            class / 2
        } else {
            class - self.n_ambiguous_pairs
        }
    }

    pub fn sound_groups(&self) -> usize {
        self.n_classes - self.n_ambiguous_pairs
    }

    /// On-screen object of a class.
    pub fn visual_object(&self, class: usize) -> usize {
        class % OBJECTS.len()
    }

    pub fn caption(&self, class: usize) -> String {
        match &self.caption_templates {
            Some(t) => t[class].clone(),
            None => format!(
                "a {} {}",
                OBJECTS[self.visual_object(class)],
                SOUNDS[self.sound_group(class)]
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticExample {
    pub id: String,
    pub class: usize,
    pub audio: Tensor,
    pub visual: Tensor,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticTaskSpec,
    pub audio_prototypes: Vec<Tensor>,
    pub visual_prototypes: Vec<Tensor>,
    pub train: Vec<SyntheticExample>,
    pub eval: Vec<SyntheticExample>,
}

/// Values are rounded to f32 so in-memory data equals what feature files hold.
fn gaussian(shape: &[usize], std: Real, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        (z * std) as f32 as Real
    })
}

fn perturb(proto: &Tensor, std: Real, rng: &mut ChaCha8Rng) -> Tensor {
    if std == 0.0 {
        return proto.clone();
    }
    let noise = gaussian(proto.shape(), std, rng);
    proto
        .zip_map(&noise, |p, n| (p + n) as f32 as Real)
        .expect("same shape")
}

pub fn generate_synthetic_task(spec: &SyntheticTaskSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let audio_prototypes: Vec<Tensor> = (0..spec.sound_groups())
        .map(|_| gaussian(&[spec.audio_len, spec.feature_dim], 1.0, &mut rng))
        .collect();
    let n_objects = OBJECTS.len().min(spec.n_classes);
    let visual_prototypes: Vec<Tensor> = (0..n_objects)
        .map(|_| gaussian(&[spec.visual_len, spec.feature_dim], 1.0, &mut rng))
        .collect();

    let mut split = |name: &str, per_class: usize| -> Vec<SyntheticExample> {
        let mut out = Vec::with_capacity(spec.n_classes * per_class);
        for class in 0..spec.n_classes {
            for j in 0..per_class {
                let audio = perturb(&audio_prototypes[spec.sound_group(class)], spec.noise_std, &mut rng);
                let visual = perturb(&visual_prototypes[spec.visual_object(class)], spec.noise_std, &mut rng);
                out.push(SyntheticExample {
                    id: format!("{name}-{class:02}-{j:04}"),
                    class,
                    audio,
                    visual,
                    caption: spec.caption(class),
                });
            }
        }
        out
    };
    let train = split("train", spec.train_per_class);
    let eval = split("eval", spec.eval_per_class);
    Ok(SyntheticDataset {
        spec: spec.clone(),
        audio_prototypes,
        visual_prototypes,
        train,
        eval,
    })
}

impl SyntheticDataset {
    /// Write `train.jsonl`, `eval.jsonl` and their feature files under `dir`.
    /// Returns the two manifest paths.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let feats = dir.join("features");
        fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        let mut paths = Vec::new();
        for (name, examples) in [("train", &self.train), ("eval", &self.eval)] {
            let mut records = Vec::with_capacity(examples.len());
            for ex in examples {
                let a = PathBuf::from("features").join(format!("{}.audio.avf", ex.id));
                let v = PathBuf::from("features").join(format!("{}.visual.avf", ex.id));
                write_feature_file(&ex.audio, &dir.join(&a))?;
                write_feature_file(&ex.visual, &dir.join(&v))?;
                records.push(ManifestRecord {
                    id: ex.id.clone(),
                    audio: AudioSource::Path(a),
                    visual_features: Some(v),
                    captions: vec![ex.caption.clone()],
                });
            }
            let path = dir.join(format!("{name}.jsonl"));
            DatasetManifest {
                root: dir.to_path_buf(),
                records,
            }
            .write(&path)?;
            paths.push(path);
        }
        let spec_path = dir.join("spec.json");
        fs::write(&spec_path, serde_json::to_string_pretty(&self.spec).expect("spec serialises"))
            .map_err(|e| Error::io(&spec_path, e))?;
        Ok((paths.remove(0), paths.remove(0)))
    }
}
