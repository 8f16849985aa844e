//! Dense row-major `f64` tensors of rank 1 to 3 and the eager kernels the
//! autodiff tape is built on.
//!
//! The deepest layout used anywhere is `batch × sequence × feature`. Only
//! explicit broadcasting exists: a 2-D right operand of [`matmul`] is shared
//! across the batch axis, and gain/bias vectors are broadcast over all
//! leading axes by [`layer_norm`] and [`add_bias`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Contract(format!(
                "tensor rank must be 1..=3, got shape {shape:?}"
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor dimensions must be positive, got shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n]).expect("valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("non-empty vector")
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Tensor::new(
            vec![rows.len(), cols],
            rows.iter().flatten().copied().collect(),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &p.shape));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range on axis {i}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// Slice `index` of the leading axis as a tensor of rank one lower.
    pub fn index_leading(&self, index: usize) -> Result<Tensor> {
        if self.rank() < 2 || index >= self.shape[0] {
            return Err(Error::Contract(format!(
                "leading index {index} invalid for shape {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Tensor::new(
            self.shape[1..].to_vec(),
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
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

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Number of rows when viewed as `(rows, last_dim)`.
    pub(crate) fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }
}

/// `c (+)= op(a) · op(b)` for row-major slices, where `op` optionally
/// transposes. `a` is `m×k` after `op`, `b` is `k×n` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the assertion above bounds every index the kernel touches for
    // the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

/// Matrix product with three accepted layouts:
///
/// * `[m,k] · [k,n] -> [m,n]`
/// * `[B,m,k] · [k,n] -> [B,m,n]` (right operand shared across the batch)
/// * `[m,k] · [B,k,n] -> [B,m,n]` (left operand shared across the batch)
/// * `[B,m,k] · [B,k,n] -> [B,m,n]` (batched)
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let err = || Error::shape("matmul", a.shape(), b.shape());
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) if k == k2 => {
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
            Tensor::new(vec![m, n], out)
        }
        (&[bs, m, k], &[k2, n]) if k == k2 => {
            let mut out = vec![0.0; bs * m * n];
            gemm(bs * m, k, n, a.data(), false, b.data(), false, &mut out, false);
            Tensor::new(vec![bs, m, n], out)
        }
        (&[m, k], &[bs, k2, n]) if k == k2 => {
            let mut out = vec![0.0; bs * m * n];
            for i in 0..bs {
                gemm(
                    m,
                    k,
                    n,
                    a.data(),
                    false,
                    &b.data()[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    false,
                );
            }
            Tensor::new(vec![bs, m, n], out)
        }
        (&[bs, m, k], &[bs2, k2, n]) if k == k2 && bs == bs2 => {
            let mut out = vec![0.0; bs * m * n];
            for i in 0..bs {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..],
                    false,
                    &b.data()[i * k * n..],
                    false,
                    &mut out[i * m * n..],
                    false,
                );
            }
            Tensor::new(vec![bs, m, n], out)
        }
        _ => Err(err()),
    }
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
pub fn transpose_last_two(x: &Tensor) -> Result<Tensor> {
    let (batch, r, c) = match *x.shape() {
        [r, c] => (1, r, c),
        [b, r, c] => (b, r, c),
        _ => return Err(Error::Contract(format!("transpose needs rank 2 or 3, got {:?}", x.shape()))),
    };
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for bi in 0..batch {
        let base = bi * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = src[base + i * c + j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let n = shape.len();
    shape.swap(n - 1, n - 2);
    Tensor::new(shape, out)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let d = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}

/// Intermediate values of a layer-norm forward pass that the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_with_cache(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = x.last_dim();
    if gain.shape() != [d] || bias.shape() != [d] {
        let op = "layer_norm";
        return Err(if gain.shape() != [d] {
            Error::shape(op, x.shape(), gain.shape())
        } else {
            Error::shape(op, x.shape(), bias.shape())
        });
    }
    let rows = x.rows();
    let mut normalized = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; x.len()];
    let (g, b) = (gain.data(), bias.data());
    for (r, row) in x.data().chunks(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            normalized[r * d + j] = xh;
            out[r * d + j] = xh * g[j] + b[j];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Layer normalization over the last axis with per-feature gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_cache(x, gain, bias, eps).map(|(t, _)| t)
}

/// Adds a vector of the last-axis width to every last-axis slice.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = x.last_dim();
    if bias.shape() != [d] {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Concatenates tensors along the last axis; all leading axes must agree.
pub fn concat_last_axis(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let lead = &first.shape()[..first.rank() - 1];
    for p in parts {
        if &p.shape()[..p.rank().max(1) - 1] != lead || p.rank() != first.rank() {
            return Err(Error::shape("concat_last_axis", first.shape(), p.shape()));
        }
    }
    let rows = first.rows();
    let total: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            let d = p.last_dim();
            out.extend_from_slice(&p.data()[r * d..(r + 1) * d]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, out)
}

/// Mean over the second-to-last axis: `[S,D] -> [D]`, `[B,S,D] -> [B,D]`.
pub fn mean_seq(x: &Tensor) -> Result<Tensor> {
    let (batch, s, d) = match *x.shape() {
        [s, d] => (1, s, d),
        [b, s, d] => (b, s, d),
        _ => return Err(Error::Contract(format!("mean_seq needs rank 2 or 3, got {:?}", x.shape()))),
    };
    let mut out = vec![0.0; batch * d];
    for b in 0..batch {
        for i in 0..s {
            let row = &x.data()[(b * s + i) * d..(b * s + i + 1) * d];
            for (o, v) in out[b * d..(b + 1) * d].iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    for v in &mut out {
        *v /= s as f64;
    }
    let shape = if x.rank() == 2 { vec![d] } else { vec![batch, d] };
    Tensor::new(shape, out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
