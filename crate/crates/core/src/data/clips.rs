//! Manifest records turned into model-ready matrices.

use crate::data::manifest::{AudioInput, DatasetManifest};
use crate::data::synth::SyntheticExample;
use crate::error::Result;
use crate::frontend::{waveform_to_patches, MelConfig};
use crate::numerics::Tensor;

/// One clip: audio encoder rows, optional visual rows and raw captions.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub audio: Tensor,
    pub visual: Option<Tensor>,
    pub captions: Vec<String>,
}

/// Load every record. Waveforms become log-mel patches; feature files and
/// inline matrices are used as they are.
pub fn load_clips(manifest: &DatasetManifest, mel: &MelConfig) -> Result<Vec<Clip>> {
    manifest
        .records
        .iter()
        .map(|rec| {
            let audio = match manifest.load_audio(rec)? {
                AudioInput::Waveform { samples, sample_rate } => {
                    waveform_to_patches(&samples, sample_rate, mel)?
                }
                AudioInput::Features(f) => f.values,
            };
            Ok(Clip {
                id: rec.id.clone(),
                audio,
                visual: manifest.load_visual(rec)?.map(|f| f.values),
                captions: rec.captions.clone(),
            })
        })
        .collect()
}

impl From<&SyntheticExample> for Clip {
    fn from(e: &SyntheticExample) -> Self {
        Clip {
            id: e.id.clone(),
            audio: e.audio.clone(),
            visual: Some(e.visual.clone()),
            captions: vec![e.caption.clone()],
        }
    }
}
