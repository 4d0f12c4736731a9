//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Graph`] is the tape: every operation appends a node holding its output
//! value and the ids of its inputs. [`Graph::backward`] walks the nodes in
//! reverse and accumulates vector-Jacobian products into the leaves. One graph
//! belongs to one forward/backward pass and is not shared between threads.

use crate::error::{Error, Result};
use crate::numerics::tensor::{self, gemm, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Affine(Var, Real),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        rstd: Vec<Real>,
        xhat: Tensor,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Tensor,
        targets: Vec<Option<Tensor>>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], one per requires-grad leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: Real = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: Real = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node created after the first `len`. Vars issued before
    /// that point stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        value.ensure_finite(op_name)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul_nt(self.value(a), self.value(b))?;
        self.push("matmul_nt", v, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = tensor::linear(self.value(x), self.value(w), self.value(b))?;
        self.push("linear", v, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// Elementwise product with a constant tensor (masks, dropout keep-masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let v = self.value(a).mul(&c)?;
        self.push("mul_const", v, Op::MulConst(a, c), &[a])
    }

    /// `scale·x + shift` elementwise.
    pub fn affine(&mut self, x: Var, scale: Real, shift: Real) -> Result<Var> {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push("affine", v, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: Real) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = tensor::sigmoid(self.value(x));
        self.push("sigmoid", v, Op::Sigmoid(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self
            .value(x)
            .map(|e| 0.5 * e * (1.0 + (GELU_C * (e + GELU_K * e * e * e)).tanh()));
        self.push("gelu", v, Op::Gelu(x), &[x])
    }

    /// Softmax over the last dimension; `allowed` excludes entries.
    pub fn softmax(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let v = tensor::masked_softmax(self.value(x), allowed)?;
        self.push("softmax", v, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: Real) -> Result<Var> {
        let (y, means, rstd) =
            tensor::layer_norm_stats(self.value(x), self.value(gain), self.value(bias), eps)?;
        let xv = self.value(x);
        let d = xv.cols();
        let mut xhat = xv.clone();
        for i in 0..xv.rows() {
            for e in xhat.row_mut(i) {
                *e = (*e - means[i]) * rstd[i];
            }
        }
        debug_assert_eq!(xhat.cols(), d);
        self.push(
            "layer_norm",
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
                xhat,
            },
            &[x, gain, bias],
        )
    }

    /// Concatenate matrices along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::domain("concat_cols", "no inputs"))?;
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::dim("concat_cols", &[rows], t.shape()));
            }
            let c = t.cols();
            for i in 0..rows {
                out[i * total + off..i * total + off + c].copy_from_slice(t.row(i));
            }
            off += c;
        }
        let v = Tensor::new(vec![rows, total], out)?;
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Concatenate matrices along the row (time) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::domain("concat_rows", "no inputs"));
        }
        let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&ts)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.cols() {
            return Err(Error::dim("slice_cols", t.shape(), &[start, len]));
        }
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let v = Tensor::new(vec![rows, len], out)?;
        self.push("slice_cols", v, Op::SliceCols { x, start }, &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.rows() {
            return Err(Error::dim("slice_rows", t.shape(), &[start, len]));
        }
        let c = t.cols();
        let v = Tensor::new(vec![len, c], t.data()[start * c..(start + len) * c].to_vec())?;
        self.push("slice_rows", v, Op::SliceRows { x, start }, &[x])
    }

    /// Select rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let c = t.cols();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Length(format!(
                    "row {id} out of range for table with {} rows",
                    t.rows()
                )));
            }
            out.extend_from_slice(t.row(id));
        }
        let v = Tensor::new(vec![ids.len(), c], out)?;
        self.push(
            "gather_rows",
            v,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push("sum", v, Op::Sum(x), &[x])
    }

    /// Mean cross-entropy of row-wise softmax(`logits`) against smoothed
    /// one-hot targets.
    ///
    /// Rows whose target equals `pad_id` are excluded. The target row gets
    /// mass `1 - eps`, every other class `eps / (vocab - 1)`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        eps: Real,
        pad_id: usize,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (n, vocab) = (lv.rows(), lv.cols());
        if targets.len() != n {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::domain("cross_entropy", format!("eps {eps} outside [0,1)")));
        }
        if vocab < 2 && eps > 0.0 {
            return Err(Error::domain("cross_entropy", "smoothing needs at least 2 classes"));
        }
        let probs = tensor::softmax_lastdim(lv)?;
        let off = if vocab > 1 { eps / (vocab - 1) as Real } else { 0.0 };
        let mut total = 0.0;
        let mut count = 0;
        let mut dists = Vec::with_capacity(n);
        for (i, &t) in targets.iter().enumerate() {
            if t == pad_id {
                dists.push(None);
                continue;
            }
            if t >= vocab {
                return Err(Error::Length(format!("target {t} outside vocabulary of {vocab}")));
            }
            let row = lv.row(i);
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<Real>().ln();
            let mut q = vec![off; vocab];
            q[t] = 1.0 - eps;
            total += q
                .iter()
                .zip(row)
                .filter(|(&qj, _)| qj > 0.0)
                .map(|(&qj, &z)| -qj * (z - lse))
                .sum::<Real>();
            dists.push(Some(Tensor::new(vec![vocab], q)?));
            count += 1;
        }
        if count == 0 {
            return Err(Error::domain("cross_entropy", "every position is padding"));
        }
        let v = Tensor::scalar(total / count as Real);
        self.push(
            "cross_entropy",
            v,
            Op::CrossEntropy {
                logits,
                probs,
                targets: dists,
                count,
            },
            &[logits],
        )
    }

    /// Gradients of the scalar `output` with respect to every leaf created
    /// with `requires_grad`. Leaves that do not influence `output` get zeros.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out.value.shape()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    // ga += g · bᵀ
                    let ga = grad_buf(grads, *a, av.shape());
                    gemm(m, n, k, 1.0, g.data(), n as isize, 1, bv.data(), 1, n as isize, 1.0, ga.data_mut());
                }
                if self.wants(*b) {
                    // gb += aᵀ · g
                    let gb = grad_buf(grads, *b, bv.shape());
                    gemm(k, m, n, 1.0, av.data(), 1, k as isize, g.data(), n as isize, 1, 1.0, gb.data_mut());
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.wants(*a) {
                    // ga += g · b
                    let ga = grad_buf(grads, *a, av.shape());
                    gemm(m, n, k, 1.0, g.data(), n as isize, 1, bv.data(), k as isize, 1, 1.0, ga.data_mut());
                }
                if self.wants(*b) {
                    // gb += gᵀ · a
                    let gb = grad_buf(grads, *b, bv.shape());
                    gemm(n, m, k, 1.0, g.data(), 1, n as isize, av.data(), k as isize, 1, 1.0, gb.data_mut());
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                if self.wants(*x) {
                    let gx = grad_buf(grads, *x, xv.shape());
                    gemm(m, n, k, 1.0, g.data(), n as isize, 1, wv.data(), 1, n as isize, 1.0, gx.data_mut());
                }
                if self.wants(*w) {
                    let gw = grad_buf(grads, *w, wv.shape());
                    gemm(k, m, n, 1.0, xv.data(), 1, k as isize, g.data(), n as isize, 1, 1.0, gw.data_mut());
                }
                if self.wants(*b) {
                    let gb = grad_buf(grads, *b, self.shape(*b));
                    let gbd = gb.data_mut();
                    for i in 0..m {
                        for (acc, &e) in gbd.iter_mut().zip(g.row(i)) {
                            *acc += e;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(grads, v, g, |e, _| e);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    accumulate_zip(grads, *a, g, bv, |e, o| e * o);
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    accumulate_zip(grads, *b, g, av, |e, o| e * o);
                }
            }
            Op::MulConst(a, c) => accumulate_zip(grads, *a, g, c, |e, o| e * o),
            Op::Affine(x, s) => accumulate(grads, *x, g, |e, _| e * s),
            Op::Sigmoid(x) => accumulate_zip(grads, *x, g, &node.value, |e, y| e * y * (1.0 - y)),
            Op::Gelu(x) => {
                let xv = self.value(*x);
                accumulate_zip(grads, *x, g, xv, |e, x| {
                    let u = GELU_C * (x + GELU_K * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                    e * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                })
            }
            Op::Softmax(x) => {
                let p = &node.value;
                let c = p.cols();
                let gx = grad_buf(grads, *x, p.shape());
                let gxd = gx.data_mut();
                for i in 0..p.rows() {
                    let pr = p.row(i);
                    let gr = g.row(i);
                    let dot: Real = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gxd[i * c + j] += pr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                rstd,
                xhat,
            } => {
                let d = xhat.cols();
                let gainv = self.value(*gain).data().to_vec();
                if self.wants(*x) {
                    let gx = grad_buf(grads, *x, xhat.shape());
                    let gxd = gx.data_mut();
                    for i in 0..xhat.rows() {
                        let xh = xhat.row(i);
                        let gr = g.row(i);
                        let mut mean_dy = 0.0;
                        let mut mean_dy_xh = 0.0;
                        for j in 0..d {
                            let dy = gr[j] * gainv[j];
                            mean_dy += dy;
                            mean_dy_xh += dy * xh[j];
                        }
                        mean_dy /= d as Real;
                        mean_dy_xh /= d as Real;
                        for j in 0..d {
                            let dy = gr[j] * gainv[j];
                            gxd[i * d + j] += rstd[i] * (dy - mean_dy - xh[j] * mean_dy_xh);
                        }
                    }
                }
                if self.wants(*gain) {
                    let gg = grad_buf(grads, *gain, self.shape(*gain));
                    let ggd = gg.data_mut();
                    for i in 0..xhat.rows() {
                        for j in 0..d {
                            ggd[j] += g.row(i)[j] * xhat.row(i)[j];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = grad_buf(grads, *bias, self.shape(*bias));
                    let gbd = gb.data_mut();
                    for i in 0..xhat.rows() {
                        for (acc, &e) in gbd.iter_mut().zip(g.row(i)) {
                            *acc += e;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    if self.wants(p) {
                        let gp = grad_buf(grads, p, pv.shape());
                        for i in 0..pv.rows() {
                            for (acc, &e) in gp.row_mut(i).iter_mut().zip(&g.data()[i * total + off..i * total + off + c]) {
                                *acc += e;
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.numel();
                    if self.wants(p) {
                        let gp = grad_buf(grads, p, pv.shape());
                        for (acc, &e) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *acc += e;
                        }
                    }
                    off += n;
                    debug_assert_eq!(pv.cols(), c);
                }
            }
            Op::SliceCols { x, start } => {
                let len = g.cols();
                let xs = self.shape(*x).to_vec();
                let gx = grad_buf(grads, *x, &xs);
                for i in 0..g.rows() {
                    for (acc, &e) in gx.row_mut(i)[*start..*start + len].iter_mut().zip(g.row(i)) {
                        *acc += e;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let c = g.cols();
                let xs = self.shape(*x).to_vec();
                let gx = grad_buf(grads, *x, &xs);
                for (acc, &e) in gx.data_mut()[start * c..start * c + g.numel()].iter_mut().zip(g.data()) {
                    *acc += e;
                }
            }
            Op::GatherRows { table, ids } => {
                let ts = self.shape(*table).to_vec();
                let gt = grad_buf(grads, *table, &ts);
                for (i, &id) in ids.iter().enumerate() {
                    for (acc, &e) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *acc += e;
                    }
                }
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                let xs = self.shape(*x).to_vec();
                let gx = grad_buf(grads, *x, &xs);
                for acc in gx.data_mut() {
                    *acc += s;
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                count,
            } => {
                let s = g.data()[0] / *count as Real;
                let c = probs.cols();
                let gl = grad_buf(grads, *logits, probs.shape());
                let gld = gl.data_mut();
                for (i, q) in targets.iter().enumerate() {
                    let Some(q) = q else { continue };
                    for j in 0..c {
                        gld[i * c + j] += s * (probs.row(i)[j] - q.data()[j]);
                    }
                }
            }
        }
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(Real, Real) -> Real) {
    let buf = grad_buf(grads, v, g.shape());
    for (acc, &e) in buf.data_mut().iter_mut().zip(g.data()) {
        *acc += f(e, 0.0);
    }
}

fn accumulate_zip(
    grads: &mut [Option<Tensor>],
    v: Var,
    g: &Tensor,
    other: &Tensor,
    f: impl Fn(Real, Real) -> Real,
) {
    let buf = grad_buf(grads, v, g.shape());
    for ((acc, &e), &o) in buf.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *acc += f(e, o);
    }
}
