//! `AVF1` feature files: a 13-byte header followed by a row-major `T×d`
//! matrix of little-endian `f32`.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AVF1"
//! 4       4     T      (u32 LE)
//! 8       4     d      (u32 LE)
//! 12      1     dtype  (1 = f32 LE)
//! 13      4·T·d payload
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"AVF1";
pub const HEADER_LEN: usize = 13;
pub const DTYPE_F32: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
}

/// `T×d` features of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub values: Tensor,
}

impl FeatureSequence {
    pub fn new(modality: Modality, values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::Config(format!(
                "feature sequences are matrices, got shape {:?}",
                values.shape()
            )));
        }
        Ok(FeatureSequence { modality, values })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Serialise a matrix to the `AVF1` byte layout. Values are narrowed to f32.
pub fn encode_features(values: &Tensor) -> Result<Vec<u8>> {
    if values.shape().len() != 2 {
        return Err(Error::Config(format!(
            "feature files hold matrices, got shape {:?}",
            values.shape()
        )));
    }
    let (t, d) = (values.shape()[0], values.shape()[1]);
    let t32 = u32::try_from(t).map_err(|_| Error::Length(format!("T = {t} exceeds u32")))?;
    let d32 = u32::try_from(d).map_err(|_| Error::Length(format!("d = {d} exceeds u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&t32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    out.push(DTYPE_F32);
    for &v in values.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parse `AVF1` bytes; `path` only labels errors.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected \"AVF1\"", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let dtype = bytes[12];
    if dtype != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype code {dtype}")));
    }
    let payload = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, format!("T·d overflows ({t} × {d})")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != payload {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header promises {payload}", body.len()),
        ));
    }
    let data: Vec<Real> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as Real)
        .collect();
    Tensor::new(vec![t, d], data)
}

pub fn write_feature_file(values: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_features(values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path, modality: Modality) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::new(modality, decode_features(&bytes, path)?)
}
