//! Non-overlapping time-axis patches of a spectrogram.

use crate::error::{Error, Result};
use crate::frontend::mel::MelSpec;
use crate::numerics::Tensor;

pub const PATCH_FRAMES: usize = 4;

/// `T_a × (frames_per_patch · n_mels)` matrix; row `k` is frames
/// `4k..4k+3` flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    pub patches: Tensor,
    pub frames_per_patch: usize,
    pub n_mels: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.patches.shape()[1]
    }
}

/// Group consecutive 4-frame blocks; a trailing remainder of fewer than four
/// frames is dropped.
pub fn patchify(spec: &MelSpec) -> Result<PatchSequence> {
    patchify_frames(&spec.frames, PATCH_FRAMES)
}

pub fn patchify_frames(frames: &Tensor, frames_per_patch: usize) -> Result<PatchSequence> {
    let (t, n_mels) = (frames.shape()[0], frames.shape()[1]);
    if frames_per_patch == 0 || t < frames_per_patch {
        return Err(Error::domain(
            "patchify",
            format!("{t} frames cannot fill a {frames_per_patch}-frame patch"),
        ));
    }
    let n = t / frames_per_patch;
    let width = frames_per_patch * n_mels;
    // Row-major storage makes each patch a contiguous run of frames.
    let data = frames.data()[..n * width].to_vec();
    Ok(PatchSequence {
        patches: Tensor::new(vec![n, width], data)?,
        frames_per_patch,
        n_mels,
    })
}

/// Inverse of [`patchify`] on the retained frames.
pub fn unpatchify(p: &PatchSequence) -> Tensor {
    Tensor::new(
        vec![p.len() * p.frames_per_patch, p.n_mels],
        p.patches.data().to_vec(),
    )
    .expect("patch layout is consistent")
}
