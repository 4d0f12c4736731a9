//! SpecAugment-style time and frequency masking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::frontend::mel::MelSpec;
use crate::numerics::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentPolicy {
    pub time_masks: usize,
    /// Widths are drawn uniformly from `0..=max_time_width`.
    pub max_time_width: usize,
    pub freq_masks: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        SpecAugmentPolicy {
            time_masks: 2,
            max_time_width: 64,
            freq_masks: 2,
            max_freq_width: 8,
        }
    }
}

/// Concrete bands to blank, as `(start, width)` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskPlan {
    pub time_bands: Vec<(usize, usize)>,
    pub freq_bands: Vec<(usize, usize)>,
}

fn draw_band<R: Rng + ?Sized>(max_width: usize, extent: usize, rng: &mut R) -> (usize, usize) {
    let w = rng.random_range(0..=max_width.min(extent));
    let start = rng.random_range(0..=extent - w);
    (start, w)
}

impl SpecAugmentPolicy {
    /// Draw bands for a `time × freq` matrix. Widths larger than the matrix
    /// are clamped to its extent.
    pub fn draw<R: Rng + ?Sized>(&self, time: usize, freq: usize, rng: &mut R) -> MaskPlan {
        MaskPlan {
            time_bands: (0..self.time_masks)
                .map(|_| draw_band(self.max_time_width, time, rng))
                .collect(),
            freq_bands: (0..self.freq_masks)
                .map(|_| draw_band(self.max_freq_width, freq, rng))
                .collect(),
        }
    }
}

impl MaskPlan {
    /// Row-major flags of the cells the plan blanks.
    pub fn cells(&self, time: usize, freq: usize) -> Vec<bool> {
        let mut m = vec![false; time * freq];
        for &(s, w) in &self.time_bands {
            for t in s..(s + w).min(time) {
                m[t * freq..(t + 1) * freq].fill(true);
            }
        }
        for &(s, w) in &self.freq_bands {
            for t in 0..time {
                for f in s..(s + w).min(freq) {
                    m[t * freq + f] = true;
                }
            }
        }
        m
    }

    /// Set the planned cells to the mean of `x`; other cells are untouched.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let (time, freq) = (x.rows(), x.cols());
        let mean = x.sum() / x.numel().max(1) as Real;
        let mut out = x.clone();
        for (v, hit) in out.data_mut().iter_mut().zip(self.cells(time, freq)) {
            if hit {
                *v = mean;
            }
        }
        out
    }
}

/// Mask a `time × feature` matrix.
pub fn augment_matrix<R: Rng + ?Sized>(x: &Tensor, policy: &SpecAugmentPolicy, rng: &mut R) -> Tensor {
    let plan = policy.draw(x.rows(), x.cols(), rng);
    plan.apply(x)
}

pub fn spec_augment<R: Rng + ?Sized>(spec: &MelSpec, policy: &SpecAugmentPolicy, rng: &mut R) -> MelSpec {
    MelSpec {
        frames: augment_matrix(&spec.frames, policy, rng),
        ..spec.clone()
    }
}
