//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! Each forward pass records its operations into a [`Graph`]. Parameter leaves
//! borrow their values from a [`ParamStore`]; calling [`Graph::backward`] on a
//! scalar node yields gradients for every leaf that requires them.

use std::borrow::Cow;

use super::param::{ParamId, ParamStore};
use super::tensor::{
    gelu_grad_scalar, gelu_scalar, gemm_nn, gemm_nt, gemm_tn, require_rank2, softmax_rows, Scalar,
    Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    Sum(Var),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    matmul_flops: u64,
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            matmul_flops: 0,
        }
    }

    /// Multiply-adds (counted as 2 FLOPs each) performed by `matmul` so far.
    pub fn matmul_flops(&self) -> u64 {
        self.matmul_flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant or differentiable input.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf borrowing a parameter; it requires grad iff the parameter is trainable.
    pub fn param(&mut self, store: &'a ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: Cow::Borrowed(&p.value),
            op: Op::Leaf,
            requires_grad: p.trainable,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_rank2("matmul", self.value(a))?;
        let (k2, n) = require_rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let c = gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        self.matmul_flops += 2 * (m * k * n) as u64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, c)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = super::tensor::transpose(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        out.axpy(T::one(), vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a length-n vector to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        let n = va.cols();
        if va.shape().len() != 2 || vr.numel() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: va.shape().to_vec(),
                rhs: vr.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        for r in out.data_mut().chunks_mut(n) {
            for (x, &b) in r.iter_mut().zip(vr.data()) {
                *x = *x + b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        require_rank2("softmax_rows", self.value(a))?;
        let out = softmax_rows(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Per-row normalisation with biased variance, then `* gamma + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = require_rank2("layer_norm", self.value(x))?;
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.numel() != n || vb.numel() != n {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.value(x).shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let xv = self.value(x).data();
        let mut xhat = Vec::with_capacity(m * n);
        let mut rstd = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in xv.chunks(n) {
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            let var = row
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(T::from_f64_lossy(r));
            for (j, v) in row.iter().enumerate() {
                let xh = T::from_f64_lossy((v.as_f64() - mean) * r);
                xhat.push(xh);
                out.push(xh * vg.data()[j] + vb.data()[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_scalar);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = require_rank2("concat_rows", self.value(a))?;
        let (mb, nb) = require_rank2("concat_rows", self.value(b))?;
        if na != nb {
            return Err(Error::Dimension {
                op: "concat_rows",
                lhs: vec![ma, na],
                rhs: vec![mb, nb],
            });
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(ma + mb, na, data)?, Op::ConcatRows(a, b), rg))
    }

    /// Places the inputs side by side; all must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Dimension {
            op: "concat_cols",
            lhs: vec![],
            rhs: vec![],
        })?;
        let m = require_rank2("concat_cols", self.value(first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = require_rank2("concat_cols", self.value(p))?;
            if mp != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: vec![mp, np],
                });
            }
            widths.push(np);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = require_rank2("slice_cols", self.value(a))?;
        if len == 0 || start + len > n {
            return Err(Error::Index {
                what: "slice_cols",
                index: start + len,
                len: n,
            });
        }
        let va = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols(a, start), rg))
    }

    /// Row gather (`out[i] = a[indices[i]]`); doubles as embedding lookup and
    /// row permutation.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = require_rank2("gather_rows", self.value(a))?;
        if indices.is_empty() {
            return Err(Error::Index {
                what: "gather_rows",
                index: 0,
                len: 0,
            });
        }
        let va = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    len: m,
                });
            }
            data.extend_from_slice(va.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(indices.len(), n, data)?,
            Op::GatherRows(a, indices.to_vec()),
            rg,
        ))
    }

    /// `-log softmax(logits)[label]` as a one-element tensor.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let vl = self.value(logits);
        if vl.rows() != 1 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![1, vl.cols()],
            });
        }
        let c = vl.cols();
        if label >= c {
            return Err(Error::Index {
                what: "cross_entropy label",
                index: label,
                len: c,
            });
        }
        let x: Vec<f64> = vl.data().iter().map(|v| v.as_f64()).collect();
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let probs = x.iter().map(|v| T::from_f64_lossy((v - lse).exp())).collect();
        let loss = T::from_f64_lossy(lse - x[label]);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::new(vec![1], vec![loss])?,
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = self.rg(a);
        self.push(Tensor::filled(&[1], s), Op::Sum(a), rg)
    }

    /// Back-propagates from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: lv.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.filter(|_| n.requires_grad).map(|p| (p, i)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(
        &self,
        node: &Node<'a, T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let mut send = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.axpy(T::one(), &t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.rg(*a) {
                    send(*a, Tensor::matrix(m, k, gemm_nt(g.data(), vb.data(), m, n, k))?);
                }
                if self.rg(*b) {
                    send(*b, Tensor::matrix(k, n, gemm_tn(va.data(), g.data(), m, k, n))?);
                }
            }
            Op::Transpose(a) => send(*a, super::tensor::transpose(g)?),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if self.rg(*row) {
                    let n = g.cols();
                    let mut acc = vec![T::zero(); n];
                    for r in g.data().chunks(n) {
                        for (s, &v) in acc.iter_mut().zip(r) {
                            *s = *s + v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    send(*row, Tensor::new(shape, acc)?);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                let gb = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                send(*a, Tensor::new(g.shape().to_vec(), ga)?);
                send(*b, Tensor::new(g.shape().to_vec(), gb)?);
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * *s)),
            Op::Softmax(a) => {
                let y = &node.value;
                let n = y.cols();
                let mut out = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&p, &q)| s + p * q);
                    out.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                send(*a, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let vg = self.value(*gamma);
                let n = vg.numel();
                let nt = T::from_usize(n).expect("row width fits the scalar type");
                let mut dgamma = vec![T::zero(); n];
                let mut dbeta = vec![T::zero(); n];
                let mut dx = Vec::with_capacity(g.numel());
                for ((gr, xr), &r) in g.data().chunks(n).zip(xhat.chunks(n)).zip(rstd) {
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..n {
                        dgamma[j] = dgamma[j] + gr[j] * xr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                        let d = gr[j] * vg.data()[j];
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xr[j];
                    }
                    let mean_d = sum_d / nt;
                    let mean_dx = sum_dx / nt;
                    for j in 0..n {
                        let d = gr[j] * vg.data()[j];
                        dx.push(r * (d - mean_d - xr[j] * mean_dx));
                    }
                }
                send(*x, Tensor::new(g.shape().to_vec(), dx)?);
                send(*gamma, Tensor::new(vg.shape().to_vec(), dgamma)?);
                let bshape = self.value(*beta).shape().to_vec();
                send(*beta, Tensor::new(bshape, dbeta)?);
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                let out = va
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &q)| q * gelu_grad_scalar(x))
                    .collect();
                send(*a, Tensor::new(va.shape().to_vec(), out)?);
            }
            Op::ConcatRows(a, b) => {
                let ma = self.value(*a).rows();
                let n = g.cols();
                let (top, bottom) = g.data().split_at(ma * n);
                send(*a, Tensor::matrix(ma, n, top.to_vec())?);
                send(*b, Tensor::matrix(g.rows() - ma, n, bottom.to_vec())?);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(m * w);
                        for i in 0..m {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        send(p, Tensor::matrix(m, w, data)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let (m, n) = (va.rows(), va.cols());
                let w = g.cols();
                let mut out = Tensor::zeros(&[m, n]);
                for i in 0..m {
                    out.data_mut()[i * n + start..i * n + start + w].copy_from_slice(g.row(i));
                }
                send(*a, out);
            }
            Op::GatherRows(a, indices) => {
                let va = self.value(*a);
                let n = va.cols();
                let mut out = Tensor::zeros(va.shape());
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut out.data_mut()[i * n..(i + 1) * n];
                    for (d, &s) in dst.iter_mut().zip(g.row(r)) {
                        *d = *d + s;
                    }
                }
                send(*a, out);
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gs = g.data()[0];
                let out = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let onehot = if i == *label { T::one() } else { T::zero() };
                        gs * (p - onehot)
                    })
                    .collect();
                let shape = self.value(*logits).shape().to_vec();
                send(*logits, Tensor::new(shape, out)?);
            }
            Op::Sum(a) => {
                let gs = g.data()[0];
                send(*a, Tensor::filled(self.value(*a).shape(), gs));
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to any node that required grad.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter leaf; a parameter used more than once in the
    /// graph has its contributions summed.
    pub fn param(&self, id: ParamId) -> Option<Tensor<T>> {
        let mut out: Option<Tensor<T>> = None;
        for &(p, node) in &self.params {
            if p != id {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match &mut out {
                    Some(acc) => acc.axpy(T::one(), g),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }

    /// Every parameter that received a gradient, in first-use order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = Vec::new();
        for &(p, _) in &self.params {
            if !ids.contains(&p) {
                ids.push(p);
            }
        }
        ids
    }

    /// Adds `scale * grad` into each parameter's gradient buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, scale: T) -> Result<()> {
        for id in self.param_ids() {
            let g = self.param(id).unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
            store.get_mut(id).accumulate_grad(&g, scale)?;
        }
        Ok(())
    }
}
