//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes. Parameter nodes
//! read their values straight from a borrowed [`ParamStore`]; calling
//! [`Graph::backward`] on a scalar node returns the accumulated gradient for
//! every parameter that contributed to it.

use std::collections::HashMap;

use crate::error::{NumericsError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax { x: Var, axis: usize },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        denom: f64,
    },
    Tanh(Var),
    Gelu(Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
}

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Computation tape over a borrowed parameter store.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    record: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Split a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            record: true,
        }
    }

    /// A graph that computes values only; [`Graph::backward`] yields zero gradients.
    pub fn inference(store: &'a ParamStore) -> Self {
        let mut g = Self::new(store);
        g.record = false;
        g
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: self.record,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(NumericsError::Rank {
                op,
                expected: 2,
                shape: s.to_vec(),
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum. `b` may also be a `[n]` or `[1, n]` row broadcast over
    /// every row of a `[.., n]` tensor `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            return Ok(self.push(Tensor::new(sa, data)?, Op::Add(a, b), &[a, b]));
        }
        let n = *sa.last().unwrap_or(&0);
        let row_like = match sb.as_slice() {
            [c] => *c == n,
            [1, c] => *c == n,
            _ => false,
        };
        if !row_like || sa.len() < 2 {
            return Err(self.mismatch("add", a, b));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        if n > 0 {
            for row in data.chunks_mut(n) {
                for (x, y) in row.iter_mut().zip(bias) {
                    *x += y;
                }
            }
        }
        Ok(self.push(Tensor::new(sa, data)?, Op::AddRow(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Axis {
                op: "softmax",
                axis,
                shape,
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(src[base + j * inner]);
                }
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= total;
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, &[x]))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&0);
        if self.value(gamma).len() != n {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.value(beta).len() != n {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = if n == 0 { 0 } else { src.len() / n };
        let mut out = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Rows of a `[V, d]` table selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2("embedding", table)?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::Index {
                    op: "embedding",
                    index: id,
                    limit: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(NumericsError::Rank {
            op: "concat",
            expected: 1,
            shape: vec![],
        })?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(NumericsError::Axis {
                op: "concat",
                axis,
                shape: base,
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(self.mismatch("concat", first, p));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Axis {
                op: "slice",
                axis,
                shape,
            });
        }
        if start > end || end > shape[axis] {
            return Err(NumericsError::Index {
                op: "slice",
                index: end.max(start),
                limit: shape[axis],
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let from = o * len * inner + start * inner;
            out.extend_from_slice(&src[from..from + (end - start) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Slice {
                x,
                axis,
                start,
                end,
            },
            &[x],
        ))
    }

    /// Softmax cross-entropy of `[n, V]` logits against one target per row.
    /// Rows whose target equals `ignore` contribute nothing; `Mean` divides by
    /// the number of remaining rows (a loss of 0 when none remain).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
        reduction: Reduction,
    ) -> Result<Var> {
        let (n, v) = self.dims2("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                left: vec![n, v],
                right: vec![targets.len()],
            });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        let mut kept = Vec::with_capacity(n);
        let mut count = 0usize;
        for r in 0..n {
            let t = targets[r];
            if Some(t) == ignore {
                kept.push(None);
                continue;
            }
            if t >= v {
                return Err(NumericsError::Index {
                    op: "cross_entropy",
                    index: t,
                    limit: v,
                });
            }
            let row = &src[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[r * v + j] = e;
                total += e;
            }
            for j in 0..v {
                probs[r * v + j] /= total;
            }
            loss += -(row[t] - max - total.ln());
            kept.push(Some(t));
            count += 1;
        }
        let denom = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => count.max(1) as f64,
        };
        Ok(self.push(
            Tensor::scalar(loss / denom),
            Op::CrossEntropy {
                logits,
                targets: kept,
                probs,
                denom,
            },
            &[logits],
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Tanh(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose2()?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse pass seeding the output gradient with `seed` instead of 1.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::NonScalarLoss(shape.to_vec()));
        }
        let mut params = Gradients::new(self.store.len());
        if !self.nodes[loss.0].requires_grad {
            return Ok(params);
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(shape, seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, g, &mut grads, &mut params)?;
        }
        Ok(params)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut Gradients,
    ) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(e) => e.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => params.accumulate_param(*id, g),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut da, false);
                    acc(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut db, false);
                    acc(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    acc(grads, *b, g.clone());
                }
                if self.wants(*a) {
                    acc(grads, *a, g);
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*b) {
                    let bshape = self.shape(*b).to_vec();
                    let n = *bshape.last().unwrap();
                    let mut gb = vec![0.0; n];
                    if n > 0 {
                        for row in g.data().chunks(n) {
                            for (s, v) in gb.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                    }
                    acc(grads, *b, Tensor::new(bshape, gb)?);
                }
                if self.wants(*a) {
                    acc(grads, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    acc(grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                if self.wants(*b) {
                    let data = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    acc(grads, *b, Tensor::new(g.shape().to_vec(), data)?);
                }
            }
            Op::Scale(a, s) => {
                let mut g = g;
                g.scale_in_place(*s);
                acc(grads, *a, g);
            }
            Op::Softmax { x, axis } => {
                let y = match &node.value {
                    Value::Owned(t) => t,
                    Value::Param(_) => unreachable!(),
                };
                let (outer, len, inner) = split_axis(y.shape(), *axis);
                let yd = y.data();
                let gd = g.data();
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            let k = base + j * inner;
                            dot += gd[k] * yd[k];
                        }
                        for j in 0..len {
                            let k = base + j * inner;
                            gx[k] = yd[k] * (gd[k] - dot);
                        }
                    }
                }
                acc(grads, *x, Tensor::new(y.shape().to_vec(), gx)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = self.value(*gamma).len();
                let gd = g.data();
                let gam = self.value(*gamma).data();
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut gg = vec![0.0; n];
                    let mut gb = vec![0.0; n];
                    for (r, row) in gd.chunks(n.max(1)).enumerate() {
                        for j in 0..n {
                            gg[j] += row[j] * xhat[r * n + j];
                            gb[j] += row[j];
                        }
                    }
                    if self.wants(*gamma) {
                        acc(grads, *gamma, Tensor::new(self.shape(*gamma).to_vec(), gg)?);
                    }
                    if self.wants(*beta) {
                        acc(grads, *beta, Tensor::new(self.shape(*beta).to_vec(), gb)?);
                    }
                }
                if self.wants(*x) {
                    let mut gx = vec![0.0; gd.len()];
                    for (r, &inv) in rstd.iter().enumerate() {
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for j in 0..n {
                            let gh = gd[r * n + j] * gam[j];
                            mean_g += gh;
                            mean_gx += gh * xhat[r * n + j];
                        }
                        mean_g /= n as f64;
                        mean_gx /= n as f64;
                        for j in 0..n {
                            let gh = gd[r * n + j] * gam[j];
                            gx[r * n + j] = inv * (gh - mean_g - xhat[r * n + j] * mean_gx);
                        }
                    }
                    acc(grads, *x, Tensor::new(g.shape().to_vec(), gx)?);
                }
            }
            Op::Embedding { table, ids } => {
                let (v, d) = self.value(*table).dims2()?;
                let mut gt = vec![0.0; v * d];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g.data()[r * d + j];
                    }
                }
                acc(grads, *table, Tensor::new(vec![v, d], gt)?);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(g.shape(), *axis);
                let total = g.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let plen = self.shape(p)[*axis] * inner;
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(outer * plen);
                        for o in 0..outer {
                            let from = o * total + offset;
                            gp.extend_from_slice(&g.data()[from..from + plen]);
                        }
                        acc(grads, p, Tensor::new(self.shape(p).to_vec(), gp)?);
                    }
                    offset += plen;
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                end,
            } => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = split_axis(&shape, *axis);
                let mut gx = vec![0.0; shape.iter().product()];
                let w = (end - start) * inner;
                for o in 0..outer {
                    let to = o * len * inner + start * inner;
                    gx[to..to + w].copy_from_slice(&g.data()[o * w..(o + 1) * w]);
                }
                acc(grads, *x, Tensor::new(shape, gx)?);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                denom,
            } => {
                let (n, v) = self.value(*logits).dims2()?;
                let seed = g.data()[0] / denom;
                let mut gl = vec![0.0; n * v];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for j in 0..v {
                            gl[r * v + j] = seed * probs[r * v + j];
                        }
                        gl[r * v + t] -= seed;
                    }
                }
                acc(grads, *logits, Tensor::new(vec![n, v], gl)?);
            }
            Op::Tanh(x) => {
                let y = match &node.value {
                    Value::Owned(t) => t,
                    Value::Param(_) => unreachable!(),
                };
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect();
                acc(grads, *x, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gv, &v)| {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect();
                acc(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::Transpose(x) => {
                acc(grads, *x, g.transpose2()?);
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                acc(grads, *x, g.reshape(shape)?);
            }
            Op::Sum(x) => {
                let shape = self.shape(*x);
                acc(grads, *x, Tensor::full(shape, g.data()[0]));
            }
        }
        Ok(())
    }
}
