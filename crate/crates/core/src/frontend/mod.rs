//! Waveform → log-mel → patches, plus SpecAugment.

pub mod augment;
pub mod mel;
pub mod patch;
pub mod wav;

pub use augment::{augment_matrix, spec_augment, MaskPlan, SpecAugmentPolicy};
pub use mel::{log_mel, mel_centers, mel_filterbank, MelConfig, MelSpec};
pub use patch::{patchify, patchify_frames, unpatchify, PatchSequence, PATCH_FRAMES};
pub use wav::{read_wav, write_wav};

use crate::error::Result;
use crate::numerics::{Real, Tensor};

/// Waveform to the audio encoder's input: log-mel, then 4-frame patches.
pub fn waveform_to_patches(samples: &[Real], sample_rate: u32, cfg: &MelConfig) -> Result<Tensor> {
    let spec = log_mel(samples, sample_rate, cfg)?;
    Ok(patchify(&spec)?.patches)
}
