//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order, so operand
//! references always point at earlier nodes. [`Tape::backward`] consumes the
//! tape: a recorded graph can be differentiated exactly once.

use crate::error::{Error, Result};
use crate::tensor::{self, gemm, LayerNormCache, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulScalar(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    PowScalar(Var, f64),
    MaxScalar(Var, f64),
    MeanAll(Var),
    MeanSeq(Var),
    Concat(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Removes and returns the gradient for `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, operands: &[Var]) -> Var {
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a last-axis-wide vector to every slice.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = tensor::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::MulScalar(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// Natural log; every input value must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| v.is_nan() || **v <= 0.0) {
            return Err(Error::domain("log", format!("non-positive argument {bad}")));
        }
        let out = self.value(x).map(f64::ln);
        Ok(self.push(out, Op::Log(x), &[x]))
    }

    /// `x^p` elementwise. Inputs must be non-negative unless `p` is an integer.
    pub fn pow_scalar(&mut self, x: Var, p: f64) -> Result<Var> {
        if p.fract() != 0.0 {
            if let Some(bad) = self.value(x).data().iter().find(|v| **v < 0.0) {
                return Err(Error::domain("pow_scalar", format!("negative base {bad} with exponent {p}")));
            }
        }
        let out = self.value(x).map(|v| v.powf(p));
        Ok(self.push(out, Op::PowScalar(x, p), &[x]))
    }

    /// `max(x, c)` elementwise; the gradient passes only where `x > c`.
    pub fn max_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v.max(c));
        self.push(out, Op::MaxScalar(x, c), &[x])
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::MeanAll(x), &[x])
    }

    /// Mean over the sequence (second-to-last) axis.
    pub fn mean_seq(&mut self, x: Var) -> Result<Var> {
        let out = tensor::mean_seq(self.value(x))?;
        Ok(self.push(out, Op::MeanSeq(x), &[x]))
    }

    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = tensor::concat_last_axis(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn transpose_last_two(&mut self, x: Var) -> Result<Var> {
        let out = tensor::transpose_last_two(self.value(x))?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = tensor::softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            tensor::layer_norm_with_cache(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
            &[x, gain, bias],
        ))
    }

    /// Back-propagates from a one-element `loss` node, consuming the tape.
    ///
    /// Every trainable leaf receives a gradient of its own shape; leaves the
    /// loss does not depend on get zeros.
    ///
    /// A tape cannot be reused afterwards:
    ///
    /// ```compile_fail
    /// use posterfuse::tape::Tape;
    /// use posterfuse::tensor::Tensor;
    ///
    /// let mut tape = Tape::new();
    /// let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    /// let l = tape.mean_all(x);
    /// let _ = tape.backward(l);
    /// let _ = tape.value(l);
    /// ```
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Tape { nodes } = self;
        let loss_node = nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract(format!("loss {loss:?} is not on this tape")))?;
        if loss_node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(loss_node.value.shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, delta: Tensor| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (da, db) = matmul_backward(val(*a), val(*b), &g);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(val(*b), "mul", |gv, bv| gv * bv)?;
                    let db = g.zip_map(val(*a), "mul", |gv, av| gv * av)?;
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::AddBias(x, bias) => {
                    let d = g.last_dim();
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks(d) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(*bias, Tensor::vector(db));
                    acc(*x, g);
                }
                Op::MulScalar(x, c) => acc(*x, g.map(|v| v * c)),
                Op::AddScalar(x) => acc(*x, g),
                Op::Relu(x) => {
                    let dx = g.zip_map(val(*x), "relu", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                    acc(*x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g.zip_map(&node.value, "sigmoid", |gv, y| gv * y * (1.0 - y))?;
                    acc(*x, dx);
                }
                Op::Log(x) => {
                    let dx = g.zip_map(val(*x), "log", |gv, xv| gv / xv)?;
                    acc(*x, dx);
                }
                Op::PowScalar(x, p) => {
                    let p = *p;
                    let dx = g.zip_map(val(*x), "pow_scalar", |gv, xv| {
                        if p == 0.0 || (xv == 0.0 && p < 1.0) {
                            0.0
                        } else {
                            gv * p * xv.powf(p - 1.0)
                        }
                    })?;
                    acc(*x, dx);
                }
                Op::MaxScalar(x, c) => {
                    let c = *c;
                    let dx = g.zip_map(val(*x), "max_scalar", |gv, xv| if xv > c { gv } else { 0.0 })?;
                    acc(*x, dx);
                }
                Op::MeanAll(x) => {
                    let src = val(*x);
                    let scale = g.data()[0] / src.len() as f64;
                    acc(*x, Tensor::full(src.shape(), scale));
                }
                Op::MeanSeq(x) => {
                    let shape = val(*x).shape().to_vec();
                    let (s, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                    let batch = val(*x).len() / (s * d);
                    let mut dx = vec![0.0; batch * s * d];
                    for b in 0..batch {
                        let gb = &g.data()[b * d..(b + 1) * d];
                        for i in 0..s {
                            for (o, gv) in dx[(b * s + i) * d..(b * s + i + 1) * d].iter_mut().zip(gb) {
                                *o = gv / s as f64;
                            }
                        }
                    }
                    acc(*x, Tensor::new(shape, dx)?);
                }
                Op::Concat(parts) => {
                    let total = g.last_dim();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for p in parts {
                        let shape = val(*p).shape().to_vec();
                        let d = *shape.last().expect("rank >= 1");
                        let mut dp = Vec::with_capacity(rows * d);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + d]);
                        }
                        offset += d;
                        acc(*p, Tensor::new(shape, dp)?);
                    }
                }
                Op::Transpose(x) => acc(*x, tensor::transpose_last_two(&g)?),
                Op::Reshape(x) => acc(*x, g.reshape(val(*x).shape().to_vec())?),
                Op::Softmax(x) => {
                    let y = &node.value;
                    let d = y.last_dim();
                    let mut dx = vec![0.0; y.len()];
                    for ((out, yr), gr) in dx.chunks_mut(d).zip(y.data().chunks(d)).zip(g.data().chunks(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            out[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*x, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    cache,
                } => {
                    let d = g.last_dim();
                    let gain_v = val(*gain).data();
                    let mut dx = vec![0.0; g.len()];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    let mut dxhat = vec![0.0; d];
                    for (r, gr) in g.data().chunks(d).enumerate() {
                        let xh = &cache.normalized[r * d..(r + 1) * d];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xh = 0.0;
                        for j in 0..d {
                            dgain[j] += gr[j] * xh[j];
                            dbias[j] += gr[j];
                            dxhat[j] = gr[j] * gain_v[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xh += dxhat[j] * xh[j];
                        }
                        let scale = cache.inv_std[r] / d as f64;
                        for j in 0..d {
                            dx[r * d + j] =
                                scale * (d as f64 * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xh);
                        }
                    }
                    acc(*x, Tensor::new(g.shape().to_vec(), dx)?);
                    acc(*gain, Tensor::vector(dgain));
                    acc(*bias, Tensor::vector(dbias));
                }
            }
        }

        for (i, node) in nodes.iter().enumerate() {
            if node.trainable && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            } else if !node.trainable {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    match (a.shape(), b.shape()) {
        (&[m, k], &[_, n]) => {
            gemm(m, n, k, g.data(), false, b.data(), true, &mut da, false);
            gemm(k, m, n, a.data(), true, g.data(), false, &mut db, false);
        }
        (&[bs, m, k], &[_, n]) => {
            gemm(bs * m, n, k, g.data(), false, b.data(), true, &mut da, false);
            gemm(k, bs * m, n, a.data(), true, g.data(), false, &mut db, false);
        }
        (&[m, k], &[bs, _, n]) => {
            for i in 0..bs {
                let gi = &g.data()[i * m * n..];
                let bi = &b.data()[i * k * n..];
                gemm(m, n, k, gi, false, bi, true, &mut da, true);
                gemm(k, m, n, a.data(), true, gi, false, &mut db[i * k * n..], false);
            }
        }
        (&[bs, m, k], &[_, _, n]) => {
            for i in 0..bs {
                let gi = &g.data()[i * m * n..];
                gemm(m, n, k, gi, false, &b.data()[i * k * n..], true, &mut da[i * m * k..], false);
                gemm(k, m, n, &a.data()[i * m * k..], true, gi, false, &mut db[i * k * n..], false);
            }
        }
        _ => unreachable!("shapes validated in forward"),
    }
    (
        Tensor::new(a.shape().to_vec(), da).expect("shape"),
        Tensor::new(b.shape().to_vec(), db).expect("shape"),
    )
}
