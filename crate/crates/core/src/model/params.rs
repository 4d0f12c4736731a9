//! Named parameter tensors and their seeded initialisation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::rng::stable_hash;
use crate::numerics::{AttentionWeights, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(Real),
}

/// Name, shape and initialiser of every parameter `cfg` calls for, in a
/// fixed order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d;
    let h = cfg.mlp_hidden();
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as Real).sqrt());
    let linear = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: &str, fi: usize, fo: usize| {
        push(format!("{name}.w"), vec![fi, fo], lin(fi));
        push(format!("{name}.b"), vec![fo], Init::Zeros);
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: &str| {
        push(format!("{name}.g"), vec![d], Init::Ones);
        push(format!("{name}.b"), vec![d], Init::Zeros);
    };
    let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: &str| {
        for p in ["q", "k", "v", "o"] {
            push(format!("{name}.w{p}"), vec![d, d], lin(d));
            push(format!("{name}.b{p}"), vec![d], Init::Zeros);
        }
    };

    let mode = cfg.fusion_mode;
    if mode.uses_audio() {
        linear(&mut push, "enc.patch", cfg.audio_in_dim, d);
        push("enc.pos".into(), vec![cfg.max_audio_len, d], Init::Normal(0.02));
        for i in 0..cfg.encoder_blocks {
            norm(&mut push, &format!("enc.{i}.ln1"));
            attn(&mut push, &format!("enc.{i}.attn"));
            norm(&mut push, &format!("enc.{i}.ln2"));
            linear(&mut push, &format!("enc.{i}.mlp.fc1"), d, h);
            linear(&mut push, &format!("enc.{i}.mlp.fc2"), h, d);
        }
    }
    if mode.uses_visual() {
        linear(&mut push, "vis.proj", cfg.visual_in_dim, d);
    }
    push("dec.embed".into(), vec![cfg.vocab_size, d], Init::Normal(0.02));
    push("dec.pos".into(), vec![cfg.max_caption_len, d], Init::Normal(0.02));
    for i in 0..cfg.decoder_blocks {
        norm(&mut push, &format!("dec.{i}.ln1"));
        attn(&mut push, &format!("dec.{i}.self"));
        norm(&mut push, &format!("dec.{i}.ln2"));
        // concatenate mode attends over [A; V] with the audio weights
        if mode != crate::model::FusionMode::VideoOnly {
            attn(&mut push, &format!("dec.{i}.cross_a"));
        }
        if matches!(mode, crate::model::FusionMode::VideoOnly) || mode.is_adaava() {
            attn(&mut push, &format!("dec.{i}.cross_v"));
        }
        if mode.is_adaava() {
            linear(&mut push, &format!("dec.{i}.conf"), 2 * d, d);
        }
        norm(&mut push, &format!("dec.{i}.ln3"));
        linear(&mut push, &format!("dec.{i}.mlp.fc1"), d, h);
        linear(&mut push, &format!("dec.{i}.mlp.fc2"), h, d);
    }
    norm(&mut push, "dec.ln_f");
    linear(&mut push, "dec.out", d, cfg.vocab_size);
    out
}

/// Named parameters in a deterministic (lexicographic) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    /// Initialise every parameter from its own stream, keyed by `seed` and
    /// the parameter name, so adding or removing a parameter leaves the
    /// others' values unchanged.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in parameter_layout(cfg) {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
                Init::Normal(std) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(stable_hash(name.as_bytes()));
                    let dist = Normal::new(0.0, std).expect("positive std");
                    Tensor::from_fn(&shape, |_| dist.sample(&mut rng) as Real)
                }
            };
            tensors.insert(name, t);
        }
        ParamStore { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ParamStore { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }

    /// Check names and shapes against `cfg`, failing on the first mismatch
    /// in layout order.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = parameter_layout(cfg);
        for (name, shape, _) in &layout {
            match self.tensors.get(name) {
                None => return Err(Error::Checkpoint(format!("parameter {name:?} is missing"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name:?} has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|k| !layout.iter().any(|(n, _, _)| n == *k))
        {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra:?}")));
        }
        Ok(())
    }

    /// Put every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), g.leaf(t.clone(), trainable)))
                .collect(),
        }
    }
}

/// Graph handles of a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    /// Swap the handle of one parameter, e.g. for a gradient probe.
    pub fn replace(&mut self, name: &str, v: Var) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = v;
                Ok(())
            }
            None => Err(Error::Config(format!("missing parameter {name:?}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn attention(&self, prefix: &str) -> Result<AttentionWeights> {
        let p = |s: &str| self.get(&format!("{prefix}.{s}"));
        Ok(AttentionWeights {
            wq: p("wq")?,
            bq: p("bq")?,
            wk: p("wk")?,
            bk: p("bk")?,
            wv: p("wv")?,
            bv: p("bv")?,
            wo: p("wo")?,
            bo: p("bo")?,
        })
    }
}
