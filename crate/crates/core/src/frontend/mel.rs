//! Log-mel spectrograms from mono waveforms.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: Real,
    pub f_max: Real,
    /// Magnitudes below this are clamped before the log.
    pub floor: Real,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 32_000,
            n_fft: 1024,
            hop: 320,
            n_mels: 64,
            f_min: 0.0,
            f_max: 16_000.0,
            floor: 1e-10,
        }
    }
}

/// `T_frames × n_mels` log-mel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec {
    pub frames: Tensor,
    pub sample_rate: u32,
    pub hop: usize,
    pub win: usize,
}

impl MelSpec {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_mels(&self) -> usize {
        self.frames.shape()[1]
    }
}

pub fn hz_to_mel(hz: Real) -> Real {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: Real) -> Real {
    700.0 * (10.0 as Real).powf(mel / 2595.0) - 700.0
}

/// Edge frequencies (Hz) of the triangular filters: `n_mels + 2` points
/// evenly spaced on the HTK mel scale.
pub fn mel_edges(cfg: &MelConfig) -> Vec<Real> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as Real / (cfg.n_mels + 1) as Real))
        .collect()
}

/// Centre frequency (Hz) of every mel filter.
pub fn mel_centers(cfg: &MelConfig) -> Vec<Real> {
    mel_edges(cfg)[1..=cfg.n_mels].to_vec()
}

/// `n_mels × (n_fft/2 + 1)` triangular filterbank. Each triangle has unit
/// area over frequency (peak height `2 / (f_right − f_left)`).
pub fn mel_filterbank(cfg: &MelConfig) -> Tensor {
    let n_bins = cfg.n_fft / 2 + 1;
    let edges = mel_edges(cfg);
    let bin_hz = cfg.sample_rate as Real / cfg.n_fft as Real;
    Tensor::from_fn(&[cfg.n_mels, n_bins], |idx| {
        let (m, b) = (idx / n_bins, idx % n_bins);
        let f = b as Real * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let rise = (f - l) / (c - l);
        let fall = (r - f) / (r - c);
        rise.min(fall).max(0.0) * 2.0 / (r - l)
    })
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

fn check(cfg: &MelConfig, n_samples: usize, sample_rate: u32) -> Result<()> {
    if sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "waveform sampled at {sample_rate} Hz, frontend expects {} Hz",
            cfg.sample_rate
        )));
    }
    if cfg.hop == 0 || cfg.n_fft < 2 || cfg.n_mels == 0 {
        return Err(Error::Config("hop, n_fft and n_mels must be positive".into()));
    }
    if !(cfg.f_min >= 0.0 && cfg.f_min < cfg.f_max && cfg.f_max <= cfg.sample_rate as Real / 2.0) {
        return Err(Error::Config(format!(
            "mel range {}..{} Hz invalid for {} Hz audio",
            cfg.f_min, cfg.f_max, cfg.sample_rate
        )));
    }
    if n_samples == 0 {
        return Err(Error::domain("log_mel", "empty waveform"));
    }
    Ok(())
}

/// Magnitude STFT with a periodic Hann window over centred, reflect-padded
/// frames, projected onto the mel filterbank, then `ln(max(x, floor))`.
///
/// Frame `k` is centred on sample `k·hop`; there are `ceil(N / hop)` frames.
pub fn log_mel(waveform: &[Real], sample_rate: u32, cfg: &MelConfig) -> Result<MelSpec> {
    check(cfg, waveform.len(), sample_rate)?;
    let n = waveform.len();
    let n_frames = n.div_ceil(cfg.hop);
    let n_bins = cfg.n_fft / 2 + 1;
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|m| 0.5 - 0.5 * (2.0 * PI * m as f64 / cfg.n_fft as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let bank = mel_filterbank(cfg);
    let half = (cfg.n_fft / 2) as isize;

    let mut buf = vec![Complex::new(0.0f64, 0.0); cfg.n_fft];
    let mut mags = vec![0.0 as Real; n_bins];
    let mut out = Vec::with_capacity(n_frames * cfg.n_mels);
    for k in 0..n_frames {
        let start = (k * cfg.hop) as isize - half;
        for (m, slot) in buf.iter_mut().enumerate() {
            let s = waveform[reflect(start + m as isize, n)];
            *slot = Complex::new(s * window[m], 0.0);
        }
        fft.process(&mut buf);
        for (b, mag) in mags.iter_mut().enumerate() {
            *mag = buf[b].norm() as Real;
        }
        for m in 0..cfg.n_mels {
            let e: Real = bank.row(m).iter().zip(&mags).map(|(w, x)| w * x).sum();
            out.push(e.max(cfg.floor).ln());
        }
    }
    Ok(MelSpec {
        frames: Tensor::new(vec![n_frames, cfg.n_mels], out)?,
        sample_rate,
        hop: cfg.hop,
        win: cfg.n_fft,
    })
}
