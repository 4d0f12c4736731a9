//! Dense row-major tensors and the plain (non-recording) kernels.

use crate::error::{Error, Result};

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Dense row-major tensor.
///
/// Most of the toolkit works on matrices; higher-rank tensors are treated as
/// `rows × last_dim` where `rows` is the product of the leading extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        if n != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: Real) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: Real) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Build a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[Real]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Real) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Extent of the last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all extents but the last.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Real] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> Real {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Real) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<Real> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(Real, Real) -> Real) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: Real) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Real {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Stack matrices with equal column counts along the row axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(Error::dim("concat_rows", &[cols], p.shape()));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![rows, cols], data)
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.first_non_finite() {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                op,
                msg: format!("element {i} of tensor {:?} is {}", self.shape, self.data[i]),
            }),
        }
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Length(format!("shape {shape:?} overflows")))
    })
}

/// `c = alpha·op(a)·op(b) + beta·c` on raw strided buffers.
///
/// Strides are in elements; transposes are expressed by swapping them.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Real,
    a: &[Real],
    rsa: isize,
    csa: isize,
    b: &[Real],
    rsb: isize,
    csb: isize,
    beta: Real,
    c: &mut [Real],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers that cover the strided m×k, k×n and m×n
    // extents; `c` is row-major contiguous and does not alias `a` or `b`.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape.len() != 2 {
        return Err(Error::domain(
            op,
            format!("expected a matrix, got shape {:?}", t.shape),
        ));
    }
    Ok(())
}

/// Matrix product of an `m×k` and a `k×n` matrix.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::dim("matmul", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m, k, n, 1.0, &a.data, k as isize, 1, &b.data, n as isize, 1, 0.0, &mut out,
    );
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_matrix("matmul_nt", a)?;
    require_matrix("matmul_nt", b)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::dim("matmul_nt", &a.shape, &b.shape));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m, k, n, 1.0, &a.data, k as isize, 1, &b.data, 1, k as isize, 0.0, &mut out,
    );
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax over the last dimension, computed with max subtraction.
pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    masked_softmax(x, None)
}

/// Softmax where `allowed[i*cols + j] == false` excludes entry `(i, j)`.
///
/// Excluded entries get probability exactly zero. A row with every entry
/// excluded is a domain error.
pub fn masked_softmax(x: &Tensor, allowed: Option<&[bool]>) -> Result<Tensor> {
    let cols = x.cols();
    if cols == 0 || x.numel() == 0 {
        return Err(Error::domain("softmax", "empty last dimension"));
    }
    if let Some(m) = allowed {
        if m.len() != x.numel() {
            return Err(Error::dim("softmax", &x.shape, &[m.len()]));
        }
    }
    let mut out = vec![0.0; x.numel()];
    for i in 0..x.rows() {
        let row = x.row(i);
        let keep = |j: usize| allowed.is_none_or(|m| m[i * cols + j]);
        let mut max = Real::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        if max == Real::NEG_INFINITY {
            return Err(Error::domain(
                "softmax",
                format!("row {i} has every position masked"),
            ));
        }
        let o = &mut out[i * cols..(i + 1) * cols];
        let mut sum = 0.0;
        for j in 0..cols {
            if keep(j) {
                let e = (row[j] - max).exp();
                o[j] = e;
                sum += e;
            }
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    let t = Tensor::new(x.shape.clone(), out)?;
    t.ensure_finite("softmax")?;
    Ok(t)
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where the exact value rounds to an endpoint.
pub fn sigmoid_scalar(x: Real) -> Real {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(Real::MIN_POSITIVE, 1.0 - Real::EPSILON / 2.0)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Normalise each last-dimension row to zero mean and unit variance, then
/// apply `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: Real) -> Result<Tensor> {
    layer_norm_stats(x, gain, bias, eps).map(|(y, _, _)| y)
}

/// Layer norm returning the per-row mean and reciprocal standard deviation.
pub(crate) fn layer_norm_stats(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: Real,
) -> Result<(Tensor, Vec<Real>, Vec<Real>)> {
    let d = x.cols();
    if d == 0 {
        return Err(Error::domain("layer_norm", "last dimension is 0"));
    }
    if eps <= 0.0 {
        return Err(Error::domain("layer_norm", "eps must be positive"));
    }
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::dim("layer_norm", &x.shape, gain.shape()));
    }
    let mut out = vec![0.0; x.numel()];
    let mut means = Vec::with_capacity(x.rows());
    let mut rstds = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<Real>() / d as Real;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
        let rstd = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * rstd * gain.data[j] + bias.data[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    Ok((Tensor::new(x.shape.clone(), out)?, means, rstds))
}

/// `x · weight + bias` broadcast over every leading dimension of `x`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    require_matrix("linear", weight)?;
    let (k, n) = (weight.shape[0], weight.shape[1]);
    if x.cols() != k || bias.numel() != n {
        return Err(Error::dim("linear", &x.shape, &weight.shape));
    }
    let m = x.rows();
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(&bias.data);
    }
    gemm(
        m,
        k,
        n,
        1.0,
        &x.data,
        k as isize,
        1,
        &weight.data,
        n as isize,
        1,
        1.0,
        &mut out,
    );
    let mut shape = x.shape.clone();
    *shape.last_mut().expect("x has at least one dimension") = n;
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(&[3, 4], &mut rng);
        assert_eq!(matmul(&Tensor::identity(3), &b).unwrap(), b);

        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[7, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
        let bt = b.transpose();
        assert!(matmul_nt(&a, &bt).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_is_associative_on_well_conditioned_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[8, 8], &mut rng);
        let b = random(&[8, 8], &mut rng);
        let c = random(&[8, 8], &mut rng);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_lastdim(&Tensor::zeros(&[1, 3])).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_lastdim(&Tensor::from_rows(&[[1000.0, 0.0]]).unwrap()).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1] < 1e-300);
        assert!(softmax_lastdim(&Tensor::zeros(&[2, 0])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[5, 6], &mut rng).scale(5.0);
        let s = softmax_lastdim(&x).unwrap();
        for i in 0..5 {
            let denom: Real = x.row(i).iter().map(|v| v.exp()).sum();
            for j in 0..6 {
                assert!((s.at(i, j) - x.at(i, j).exp() / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_softmax_rejects_fully_masked_rows() {
        let x = Tensor::zeros(&[2, 2]);
        let err = masked_softmax(&x, Some(&[true, false, false, false])).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let s = sigmoid_scalar(50.0);
        assert!(s > 1.0 - 1e-9 && s < 1.0);
        assert!(sigmoid_scalar(-800.0) > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x: Real = rng.random_range(-20.0..20.0);
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let g = Tensor::ones(&[4]);
        let b = Tensor::zeros(&[4]);
        let y = layer_norm(&Tensor::full(&[1, 4], 3.0), &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&[3, 4], &mut rng);
        let y = layer_norm(&x, &g, &b, 1e-12).unwrap();
        for i in 0..3 {
            let r = x.row(i);
            // two-pass oracle
            let mean = r.iter().sum::<Real>() / 4.0;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / 4.0;
            for j in 0..4 {
                let want = (r[j] - mean) / (var + 1e-12).sqrt();
                assert!((y.at(i, j) - want).abs() < 1e-10);
            }
            let out = y.row(i);
            let m = out.iter().sum::<Real>() / 4.0;
            let v = out.iter().map(|o| (o - m).powi(2)).sum::<Real>() / 4.0;
            assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6);
        }
        assert!(layer_norm(&Tensor::zeros(&[2, 0]), &g, &b, 1e-5).is_err());
    }

    #[test]
    fn linear_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 3, 4], &mut rng);
        let y = linear(&x, &Tensor::identity(4), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(y, x);

        let bias = random(&[5], &mut rng);
        let w = random(&[4, 5], &mut rng);
        let y = linear(&Tensor::zeros(&[3, 4]), &w, &bias).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), bias.data());
        }

        let x = random(&[6, 4], &mut rng);
        let y = linear(&x, &w, &bias).unwrap();
        let mut want = naive_matmul(&x, &w);
        for i in 0..6 {
            for j in 0..5 {
                want.set(i, j, want.at(i, j) + bias.data()[j]);
            }
        }
        assert!(y.max_abs_diff(&want) < 1e-12);
        assert!(linear(&x, &Tensor::zeros(&[3, 5]), &bias).is_err());
    }
}
