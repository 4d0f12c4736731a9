//! Mono WAV input (16-bit PCM or 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::numerics::Real;

/// Samples scaled to [-1, 1] and the file's sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<Real>, u32)> {
    let reader = WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(path, format!("{} channels, expected mono", spec.channels)));
    }
    let samples: Vec<Real> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as Real / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as Real))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::format(path, format!("unsupported sample format {fmt:?}/{bits}-bit")))
        }
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

/// Write 16-bit mono PCM, clipping to [-1, 1].
pub fn write_wav(path: &Path, samples: &[Real], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::format(path, e.to_string()))
}
