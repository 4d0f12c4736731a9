//! Scaled dot-product multi-head attention composed from graph ops.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::{Real, Tensor};

/// Projection weights of one attention sublayer, as graph handles.
/// Weights are `in × out`, applied as `x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Inverted dropout driven by a seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: Real,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: Real, rng: ChaCha8Rng) -> Self {
        Dropout { rate, rng }
    }

    /// Apply dropout to `x`; identity when the rate is zero.
    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.shape(x).to_vec();
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.random::<Real>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        g.mul_const(x, mask)
    }
}

/// Apply `dropout` if present.
pub fn maybe_dropout(g: &mut Graph, x: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// Multi-head attention with `q_in` as queries and `kv_in` as keys and values.
///
/// With `causal`, query `i` only sees key positions `≤ i`. Keys flagged in
/// `kv_padding` (true = padding) are excluded. A query that can see no key is
/// a domain error.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    q_in: Var,
    kv_in: Var,
    w: &AttentionWeights,
    heads: usize,
    causal: bool,
    kv_padding: Option<&[bool]>,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let d = g.value(q_in).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model width {d} is not divisible by {heads} heads"
        )));
    }
    let lq = g.value(q_in).rows();
    let lkv = g.value(kv_in).rows();
    if causal && lq != lkv {
        return Err(Error::dim("causal attention", &[lq], &[lkv]));
    }
    if let Some(p) = kv_padding {
        if p.len() != lkv {
            return Err(Error::dim("attention padding", &[lkv], &[p.len()]));
        }
    }
    let allowed: Option<Vec<bool>> = (causal || kv_padding.is_some()).then(|| {
        let mut m = vec![true; lq * lkv];
        for i in 0..lq {
            for j in 0..lkv {
                let future = causal && j > i;
                let padded = kv_padding.is_some_and(|p| p[j]);
                m[i * lkv + j] = !future && !padded;
            }
        }
        m
    });

    let q = g.linear(q_in, w.wq, w.bq)?;
    let k = g.linear(kv_in, w.wk, w.bk)?;
    let v = g.linear(kv_in, w.wv, w.bv)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let probs = g.softmax(scores, allowed.as_deref())?;
        let probs = maybe_dropout(g, probs, dropout.as_deref_mut())?;
        outs.push(g.matmul(probs, vh)?);
    }
    let joined = if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    g.linear(joined, w.wo, w.bo)
}
