//! AdaAVA: confidence-gated fusion of audio and visual cross-attention.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Graph, Real, Tensor, Var};

/// Every intermediate of one AdaAVA evaluation, each `(t−1) × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaAVATrace {
    pub h_hidden: Tensor,
    pub a_cross: Tensor,
    pub v_cross: Tensor,
    pub a_conf: Tensor,
    pub m_a: Tensor,
    pub m_v: Tensor,
    pub av_out: Tensor,
}

impl AdaAVATrace {
    /// Mean confidence of each decoder position.
    pub fn mean_conf_per_position(&self) -> Vec<Real> {
        (0..self.a_conf.rows())
            .map(|i| {
                let r = self.a_conf.row(i);
                r.iter().sum::<Real>() / r.len() as Real
            })
            .collect()
    }

    /// Fraction of ones in `M_a` and `M_v`.
    pub fn mask_densities(&self) -> (Real, Real) {
        let density = |m: &Tensor| m.sum() / m.numel().max(1) as Real;
        (density(&self.m_a), density(&self.m_v))
    }
}

/// Elementwise `1` where `x > beta` (strictly), else `0`.
pub fn threshold_mask(x: &Tensor, beta: Real) -> Tensor {
    x.map(|v| if v > beta { 1.0 } else { 0.0 })
}

/// `sigmoid([primary; h_hidden] · W + b)` with `W` of shape `2d × d`.
pub fn confidence(primary: &Tensor, h_hidden: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if primary.shape() != h_hidden.shape() {
        return Err(Error::dim("confidence", primary.shape(), h_hidden.shape()));
    }
    let (n, d) = (primary.rows(), primary.cols());
    let joined = Tensor::from_fn(&[n, 2 * d], |idx| {
        let (i, j) = (idx / (2 * d), idx % (2 * d));
        if j < d {
            primary.at(i, j)
        } else {
            h_hidden.at(i, j - d)
        }
    });
    Ok(sigmoid(&crate::numerics::linear(&joined, w, b)?))
}

/// Threshold masks and the gated sum
/// `A_conf⊙A_cross⊙M_a + (1−A_conf)⊙V_cross⊙M_v`.
pub fn adaava_fuse(
    h_hidden: &Tensor,
    a_cross: &Tensor,
    v_cross: &Tensor,
    a_conf: &Tensor,
    beta: Real,
) -> Result<AdaAVATrace> {
    for t in [h_hidden, v_cross, a_conf] {
        if t.shape() != a_cross.shape() {
            return Err(Error::dim("adaava_fuse", a_cross.shape(), t.shape()));
        }
    }
    let m_a = threshold_mask(a_conf, beta);
    let m_v = threshold_mask(&a_conf.map(|c| 1.0 - c), beta);
    let n = a_cross.numel();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let c = a_conf.data()[i];
        let audio = c * a_cross.data()[i] * m_a.data()[i];
        let video = (1.0 - c) * v_cross.data()[i] * m_v.data()[i];
        out.push(audio + video);
    }
    Ok(AdaAVATrace {
        h_hidden: h_hidden.clone(),
        a_cross: a_cross.clone(),
        v_cross: v_cross.clone(),
        a_conf: a_conf.clone(),
        m_a,
        m_v,
        av_out: Tensor::new(a_cross.shape().to_vec(), out)?,
    })
}

/// Graph handles of one fused sublayer.
#[derive(Clone, Copy, Debug)]
pub struct FusedVars {
    pub a_conf: Var,
    pub av_out: Var,
}

/// Confidence on the tape: `sigmoid(linear([primary; h_hidden]))`.
pub fn confidence_graph(g: &mut Graph, primary: Var, h_hidden: Var, w: Var, b: Var) -> Result<Var> {
    let joined = g.concat_cols(&[primary, h_hidden])?;
    let z = g.linear(joined, w, b)?;
    g.sigmoid(z)
}

/// Masked gating on the tape. Masks are computed from the current value of
/// `a_conf` and enter as constants, so no gradient crosses the threshold.
pub fn adaava_fuse_graph(
    g: &mut Graph,
    a_cross: Var,
    v_cross: Var,
    a_conf: Var,
    beta: Real,
) -> Result<(Var, Tensor, Tensor)> {
    let conf = g.value(a_conf);
    if conf.shape() != g.shape(a_cross) || conf.shape() != g.shape(v_cross) {
        return Err(Error::dim("adaava_fuse", g.shape(a_cross), conf.shape()));
    }
    let m_a = threshold_mask(conf, beta);
    let m_v = threshold_mask(&conf.map(|c| 1.0 - c), beta);
    let audio = g.mul(a_conf, a_cross)?;
    let audio = g.mul_const(audio, m_a.clone())?;
    let rest = g.affine(a_conf, -1.0, 1.0)?;
    let video = g.mul(rest, v_cross)?;
    let video = g.mul_const(video, m_v.clone())?;
    Ok((g.add(audio, video)?, m_a, m_v))
}
