//! Audio encoder, visual projection and the caption decoder.

use crate::data::text::SOS_ID;
use crate::error::{Error, Result};
use crate::model::config::{FusionMode, ModelConfig};
use crate::model::fusion::{adaava_fuse_graph, confidence_graph, AdaAVATrace};
use crate::model::params::{Bound, ParamStore};
use crate::numerics::{maybe_dropout, multi_head_attention, Dropout, Graph, Real, Tensor, Var};

pub const LN_EPS: Real = 1e-5;

/// Raw per-clip inputs: audio encoder rows (`T × audio_in_dim`) and visual
/// features (`T_v × visual_in_dim`).
#[derive(Clone, Copy, Debug, Default)]
pub struct ModalityInput<'a> {
    pub audio: Option<&'a Tensor>,
    pub visual: Option<&'a Tensor>,
}

/// Both modalities projected to width `d`, as graph handles.
#[derive(Clone, Copy, Debug, Default)]
pub struct Encoded {
    pub audio: Option<Var>,
    pub visual: Option<Var>,
}

fn norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let gain = p.get(&format!("{name}.g"))?;
    let bias = p.get(&format!("{name}.b"))?;
    g.layer_norm(x, gain, bias, LN_EPS)
}

fn dense(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    g.linear(x, w, b)
}

fn mlp(g: &mut Graph, p: &Bound, name: &str, x: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    let h = dense(g, p, &format!("{name}.fc1"), x)?;
    let h = g.gelu(h)?;
    let y = dense(g, p, &format!("{name}.fc2"), h)?;
    maybe_dropout(g, y, dropout)
}

/// Patch projection plus learned positions, then pre-norm
/// self-attention/MLP blocks with residuals.
pub fn audio_encode(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    patches: Var,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let (t, width) = (g.value(patches).rows(), g.value(patches).cols());
    if width != cfg.audio_in_dim {
        return Err(Error::dim("audio_encode", &[t, cfg.audio_in_dim], g.shape(patches)));
    }
    if t == 0 {
        return Err(Error::domain("audio_encode", "no audio rows"));
    }
    if t > cfg.max_audio_len {
        return Err(Error::Length(format!(
            "{t} audio rows exceed the positional table of {}",
            cfg.max_audio_len
        )));
    }
    let x = dense(g, p, "enc.patch", patches)?;
    let pos = p.get("enc.pos")?;
    let pos = g.slice_rows(pos, 0, t)?;
    let mut x = g.add(x, pos)?;
    for i in 0..cfg.encoder_blocks {
        let h = norm(g, p, &format!("enc.{i}.ln1"), x)?;
        let w = p.attention(&format!("enc.{i}.attn"))?;
        let a = multi_head_attention(g, h, h, &w, cfg.heads, false, None, dropout.as_deref_mut())?;
        x = g.add(x, a)?;
        let h = norm(g, p, &format!("enc.{i}.ln2"), x)?;
        let m = mlp(g, p, &format!("enc.{i}.mlp"), h, dropout.as_deref_mut())?;
        x = g.add(x, m)?;
    }
    Ok(x)
}

/// Single linear map from the visual feature width to `d`.
pub fn visual_project(g: &mut Graph, p: &Bound, cfg: &ModelConfig, raw: Var) -> Result<Var> {
    let shape = g.shape(raw).to_vec();
    if shape.len() != 2 || shape[1] != cfg.visual_in_dim {
        return Err(Error::dim("visual_project", &[shape[0], cfg.visual_in_dim], &shape));
    }
    dense(g, p, "vis.proj", raw)
}

/// Embed the prefix tokens and add decoder positions.
pub fn embed_prefix(g: &mut Graph, p: &Bound, cfg: &ModelConfig, prefix: &[usize]) -> Result<Var> {
    if prefix.is_empty() {
        return Err(Error::domain("decoder", "empty prefix"));
    }
    if prefix.len() > cfg.max_caption_len {
        return Err(Error::Length(format!(
            "prefix of {} tokens exceeds max_caption_len {}",
            prefix.len(),
            cfg.max_caption_len
        )));
    }
    if let Some(&bad) = prefix.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::Length(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    let table = p.get("dec.embed")?;
    let w = g.gather_rows(table, prefix)?;
    let pos = p.get("dec.pos")?;
    let pos = g.slice_rows(pos, 0, prefix.len())?;
    g.add(w, pos)
}

/// `H_hidden = x + CausalSelfAttention(LN(x))`.
pub fn decoder_self_attend(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    block: usize,
    x: Var,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    if g.value(x).rows() == 0 {
        return Err(Error::domain("decoder_self_attend", "empty prefix"));
    }
    let h = norm(g, p, &format!("dec.{block}.ln1"), x)?;
    let w = p.attention(&format!("dec.{block}.self"))?;
    let a = multi_head_attention(g, h, h, &w, cfg.heads, true, None, dropout)?;
    g.add(x, a)
}

/// Multi-head attention with `queries` over the rows of `memory`.
pub fn cross_attend(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    name: &str,
    queries: Var,
    memory: Var,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    if g.value(memory).rows() == 0 {
        return Err(Error::domain("cross_attend", "memory has no unpadded rows"));
    }
    if g.value(memory).cols() != cfg.d {
        return Err(Error::dim("cross_attend", &[g.value(memory).rows(), cfg.d], g.shape(memory)));
    }
    let w = p.attention(name)?;
    multi_head_attention(g, queries, memory, &w, cfg.heads, false, None, dropout)
}

fn require(v: Option<Var>, mode: FusionMode, what: &str) -> Result<Var> {
    v.ok_or_else(|| Error::Config(format!("fusion mode {mode} needs {what} features")))
}

/// The cross-modal sublayer of decoder block `block`, applied to
/// `H_hidden`. Attention modes add a residual; AdaAVA modes return the
/// gated sum alone.
#[allow(clippy::too_many_arguments)]
pub fn fusion_sublayer(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    block: usize,
    h: Var,
    enc: &Encoded,
    mut dropout: Option<&mut Dropout>,
    trace: Option<&mut Vec<AdaAVATrace>>,
) -> Result<Var> {
    let mode = cfg.fusion_mode;
    let q = norm(g, p, &format!("dec.{block}.ln2"), h)?;
    let cross_a = format!("dec.{block}.cross_a");
    let cross_v = format!("dec.{block}.cross_v");
    let attended = match mode {
        FusionMode::AudioOnly => {
            let a = require(enc.audio, mode, "audio")?;
            cross_attend(g, p, cfg, &cross_a, q, a, dropout)?
        }
        FusionMode::VideoOnly => {
            let v = require(enc.visual, mode, "visual")?;
            cross_attend(g, p, cfg, &cross_v, q, v, dropout)?
        }
        FusionMode::Concatenate => {
            let a = require(enc.audio, mode, "audio")?;
            let mem = match enc.visual {
                Some(v) if g.value(v).rows() > 0 => g.concat_rows(&[a, v])?,
                _ => a,
            };
            cross_attend(g, p, cfg, &cross_a, q, mem, dropout)?
        }
        FusionMode::AdaavaAudio | FusionMode::AdaavaVideo => {
            let a = require(enc.audio, mode, "audio")?;
            let v = require(enc.visual, mode, "visual")?;
            let a_cross = cross_attend(g, p, cfg, &cross_a, q, a, dropout.as_deref_mut())?;
            let v_cross = cross_attend(g, p, cfg, &cross_v, q, v, dropout)?;
            let primary = if mode == FusionMode::AdaavaAudio { a_cross } else { v_cross };
            let w = p.get(&format!("dec.{block}.conf.w"))?;
            let b = p.get(&format!("dec.{block}.conf.b"))?;
            let a_conf = confidence_graph(g, primary, h, w, b)?;
            let (out, m_a, m_v) = adaava_fuse_graph(g, a_cross, v_cross, a_conf, cfg.beta)?;
            if let Some(sink) = trace {
                sink.push(AdaAVATrace {
                    h_hidden: g.value(h).clone(),
                    a_cross: g.value(a_cross).clone(),
                    v_cross: g.value(v_cross).clone(),
                    a_conf: g.value(a_conf).clone(),
                    m_a,
                    m_v,
                    av_out: g.value(out).clone(),
                });
            }
            return Ok(out);
        }
    };
    g.add(h, attended)
}

/// Self-attention, fusion sublayer, then MLP with residual.
#[allow(clippy::too_many_arguments)]
pub fn decoder_block(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    block: usize,
    x: Var,
    enc: &Encoded,
    mut dropout: Option<&mut Dropout>,
    trace: Option<&mut Vec<AdaAVATrace>>,
) -> Result<Var> {
    let h = decoder_self_attend(g, p, cfg, block, x, dropout.as_deref_mut())?;
    let f = fusion_sublayer(g, p, cfg, block, h, enc, dropout.as_deref_mut(), trace)?;
    let n = norm(g, p, &format!("dec.{block}.ln3"), f)?;
    let m = mlp(g, p, &format!("dec.{block}.mlp"), n, dropout)?;
    g.add(f, m)
}

/// Teacher-forced decoder: logits (`prefix.len() × vocab`) for the token
/// following each prefix position.
pub fn decode(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    enc: &Encoded,
    prefix: &[usize],
    mut dropout: Option<&mut Dropout>,
    mut trace: Option<&mut Vec<AdaAVATrace>>,
) -> Result<Var> {
    let mut x = embed_prefix(g, p, cfg, prefix)?;
    for i in 0..cfg.decoder_blocks {
        x = decoder_block(g, p, cfg, i, x, enc, dropout.as_deref_mut(), trace.as_deref_mut())?;
    }
    let x = norm(g, p, "dec.ln_f", x)?;
    dense(g, p, "dec.out", x)
}

/// Project whichever modalities the fusion mode uses.
pub fn encode(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    input: &ModalityInput<'_>,
    dropout: Option<&mut Dropout>,
) -> Result<Encoded> {
    let mode = cfg.fusion_mode;
    let audio = if mode.uses_audio() {
        let a = input
            .audio
            .ok_or_else(|| Error::Config(format!("fusion mode {mode} needs audio features")))?;
        let a = g.constant(a.clone());
        Some(audio_encode(g, p, cfg, a, dropout)?)
    } else {
        None
    };
    let visual = match input.visual {
        Some(v) if mode.uses_visual() => {
            let v = g.constant(v.clone());
            Some(visual_project(g, p, cfg, v)?)
        }
        None if mode.needs_visual() => {
            return Err(Error::Config(format!("fusion mode {mode} needs visual features")))
        }
        _ => None,
    };
    Ok(Encoded { audio, visual })
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// One clip of a teacher-forced batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub input: ModalityInput<'a>,
    /// Right-padded token prefix.
    pub prefix: &'a [usize],
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed);
        Ok(Model { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Model { config, params })
    }

    /// Logits `(prefix.len() × vocab)` for every item, without dropout.
    pub fn forward(&self, batch: &[BatchItem<'_>]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let mark = g.len();
        let mut out = Vec::with_capacity(batch.len());
        for (i, item) in batch.iter().enumerate() {
            let logits = (|| {
                let enc = encode(&mut g, &p, &self.config, &item.input, None)?;
                decode(&mut g, &p, &self.config, &enc, item.prefix, None, None)
            })()
            .map_err(|e| match e {
                Error::NonFinite { op, msg } => Error::NonFinite {
                    op,
                    msg: format!("batch item {i}: {msg}"),
                },
                other => other,
            })?;
            out.push(g.value(logits).clone());
            g.truncate(mark);
        }
        Ok(out)
    }

    /// The AdaAVA trace of every decoder block for one clip and prefix.
    pub fn trace(&self, input: &ModalityInput<'_>, prefix: &[usize]) -> Result<Vec<AdaAVATrace>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let enc = encode(&mut g, &p, &self.config, input, None)?;
        let mut traces = Vec::new();
        decode(&mut g, &p, &self.config, &enc, prefix, None, Some(&mut traces))?;
        Ok(traces)
    }

    /// Graph holding constant parameters and one clip's encoded modalities,
    /// for repeated decoder evaluations.
    pub fn session(&self, input: &ModalityInput<'_>) -> Result<DecodeSession<'_>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let enc = encode(&mut g, &p, &self.config, input, None)?;
        let mark = g.len();
        Ok(DecodeSession {
            model: self,
            graph: g,
            params: p,
            enc,
            mark,
        })
    }
}

/// A clip encoded once and decoded many times.
#[derive(Debug)]
pub struct DecodeSession<'m> {
    model: &'m Model,
    graph: Graph,
    params: Bound,
    enc: Encoded,
    mark: usize,
}

impl DecodeSession<'_> {
    /// Logits of the token after the last position of `prefix`.
    pub fn next_logits(&mut self, prefix: &[usize]) -> Result<Vec<Real>> {
        if prefix.first() != Some(&SOS_ID) {
            return Err(Error::domain("next_logits", "prefix must start with <sos>"));
        }
        let cfg = &self.model.config;
        let logits = decode(&mut self.graph, &self.params, cfg, &self.enc, prefix, None, None);
        let row = logits.map(|l| self.graph.value(l).row(prefix.len() - 1).to_vec());
        self.graph.truncate(self.mark);
        row
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }
}
