//! Versioned checkpoint files.
//!
//! ```text
//! "AVCK" | version u32 LE | header length u64 LE | JSON header | f64 LE payload
//! ```
//!
//! The header holds the model config, the vocabulary, free-form training
//! state and the name and shape of every tensor, in payload order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::text::Vocabulary;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::ParamStore;
use crate::numerics::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"AVCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Option<Vocabulary>,
    pub params: ParamStore,
    /// Training bookkeeping; `null` for bare models.
    pub state: serde_json::Value,
    /// Tensors other than parameters, e.g. optimiser moments.
    pub extra: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    vocab: Option<Vocabulary>,
    state: serde_json::Value,
    params: Vec<Entry>,
    extra: Vec<Entry>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let entries = |it: &mut dyn Iterator<Item = (&String, &Tensor)>| -> Vec<Entry> {
        it.map(|(n, t)| Entry {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect()
    };
    let header = Header {
        config: ck.config.clone(),
        vocab: ck.vocab.clone(),
        state: ck.state.clone(),
        params: entries(&mut ck.params.iter()),
        extra: entries(&mut ck.extra.iter()),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in ck.params.iter().chain(ck.extra.iter()) {
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (expected \"AVCK\" header)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("checkpoint version {version}, this build reads {VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(bad("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
    let mut payload = &body[hlen..];
    let mut take = |entries: Vec<Entry>| -> Result<BTreeMap<String, Tensor>> {
        let mut map = BTreeMap::new();
        for e in entries {
            let n: usize = e.shape.iter().product();
            if payload.len() < 8 * n {
                return Err(bad(format!("payload ends inside tensor {:?}", e.name)));
            }
            let data: Vec<Real> = payload[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Real)
                .collect();
            payload = &payload[8 * n..];
            map.insert(e.name, Tensor::new(e.shape, data)?);
        }
        Ok(map)
    };
    let params = ParamStore::from_map(take(header.params)?);
    let extra = take(header.extra)?;
    if !payload.is_empty() {
        return Err(bad(format!("{} trailing payload bytes", payload.len())));
    }
    header.config.validate()?;
    params.check_layout(&header.config)?;
    Ok(Checkpoint {
        config: header.config,
        vocab: header.vocab,
        params,
        state: header.state,
        extra,
    })
}

/// Write via a temporary sibling and rename, so readers never see a partial
/// file.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(ck)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
