//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`]; [`Graph::backward`] returns one gradient per
//! stored parameter.

use serde::{Deserialize, Serialize};

use super::tensor::{dot, Matrix};
use crate::error::{data, Result};

/// Named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.values.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(data("parameter names differ"));
        }
        for (name, (a, b)) in self.names.iter().zip(self.values.iter().zip(&other.values)) {
            if a.shape() != b.shape() {
                return Err(data(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Matrix),
    Param(usize),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: f64,
        normalizer: f64,
        probs: Matrix,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise layer normalisation without the affine part.
pub fn normalize_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows);
    let n = x.cols as f64;
    for r in 0..x.rows {
        let row = xhat.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (xhat, inv_std)
}

/// Row-wise softmax where `mask[r][c] == false` entries get probability 0.
pub fn masked_softmax(x: &Matrix, mask: &dyn Fn(usize, usize) -> bool) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let mut max = f64::NEG_INFINITY;
        for c in 0..x.cols {
            if mask(r, c) {
                max = max.max(x.get(r, c));
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for c in 0..x.cols {
            if mask(r, c) {
                let e = (x.get(r, c) - max).exp();
                out.set(r, c, e);
                sum += e;
            }
        }
        for v in out.row_mut(r) {
            *v /= sum;
        }
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(i) => &self.params.values[*i],
        }
    }

    /// Constant input.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter `index` of the store (one node per parameter per graph).
    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(index),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1 × cols` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows, 1);
        let mut out = self.value(x).clone();
        assert_eq!(out.cols, bias.cols, "bias width mismatch");
        for r in 0..out.rows {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(x, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (xhat, inv_std) = normalize_rows(self.value(x));
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = xhat.clone();
        for r in 0..out.rows {
            for ((o, &gv), &bv) in out.row_mut(r).iter_mut().zip(&g.data).zip(&b.data) {
                *o = *o * gv + bv;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Softmax over each row restricted to `mask` (rows × cols, row-major).
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.rows * xv.cols, "mask shape mismatch");
        let cols = xv.cols;
        let out = masked_softmax(xv, &|r, c| mask[r * cols + c]);
        self.push(out, Op::MaskedSoftmax(x))
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows, width);
        for r in 0..xv.rows {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows * xv.cols, rows * cols, "reshape size mismatch");
        let out = Matrix::from_vec(rows, cols, xv.data.clone());
        self.push(out, Op::Reshape(x))
    }

    /// Label-smoothed cross-entropy summed over rows with a target, divided by
    /// `normalizer`. Smoothing mass `ε` is spread uniformly over all classes.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
        normalizer: f64,
    ) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target slot per row");
        let probs = masked_softmax(lv, &|_, _| true);
        let v = lv.cols as f64;
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = probs.row(r);
            let mut l = -(1.0 - smoothing) * row[t].ln();
            if smoothing > 0.0 {
                l -= smoothing / v * row.iter().map(|p| p.ln()).sum::<f64>();
            }
            loss += l;
        }
        let value = if normalizer > 0.0 { loss / normalizer } else { 0.0 };
        self.push(
            Matrix::from_vec(1, 1, vec![value]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                normalizer,
                probs,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every stored parameter.
    pub fn backward(&self, loss: Var) -> Vec<Matrix> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                }
                Op::MatMul(a, b) => {
                    let da = gout.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&gout);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = gout.matmul(self.value(*b));
                    let db = gout.t_matmul(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, gout.clone());
                    acc(&mut grads, *a, gout);
                }
                Op::AddRow(x, b) => {
                    acc(&mut grads, *b, gout.column_sums());
                    acc(&mut grads, *x, gout);
                }
                Op::Scale(x, s) => {
                    let mut g = gout;
                    g.scale(*s);
                    acc(&mut grads, *x, g);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut g = gout;
                    for (gv, &xi) in g.data.iter_mut().zip(&xv.data) {
                        *gv *= gelu_grad(xi);
                    }
                    acc(&mut grads, *x, g);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let g = self.value(*gain);
                    let n = xhat.cols as f64;
                    let mut dgain = Matrix::zeros(1, xhat.cols);
                    let dbias = gout.column_sums();
                    let mut dx = Matrix::zeros(xhat.rows, xhat.cols);
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let dy = gout.row(r);
                        let xh = xhat.row(r);
                        let dxhat: Vec<f64> = dy.iter().zip(&g.data).map(|(a, b)| a * b).collect();
                        for c in 0..xhat.cols {
                            dgain.data[c] += dy[c] * xh[c];
                        }
                        let sum = dxhat.iter().sum::<f64>();
                        let sum_xh = dot(&dxhat, xh);
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = inv / n * (n * dxhat[c] - sum - xh[c] * sum_xh);
                        }
                    }
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                    acc(&mut grads, *x, dx);
                }
                Op::MaskedSoftmax(x) => {
                    let y = self.value(Var(idx));
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = gout.row(r);
                        let s = dot(yr, gr);
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - s);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &g) in dt.row_mut(id).iter_mut().zip(gout.row(r)) {
                            *o += g;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        dx.row_mut(r)[*start..*start + gout.cols].copy_from_slice(gout.row(r));
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut dp = Matrix::zeros(gout.rows, cols);
                        for r in 0..gout.rows {
                            dp.row_mut(r).copy_from_slice(&gout.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::Reshape(x) => {
                    let xv = self.value(*x);
                    acc(&mut grads, *x, Matrix::from_vec(xv.rows, xv.cols, gout.data));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    smoothing,
                    normalizer,
                    probs,
                } => {
                    let mut dl = Matrix::zeros(probs.rows, probs.cols);
                    if *normalizer > 0.0 {
                        let scale = gout.data[0] / normalizer;
                        let uniform = smoothing / probs.cols as f64;
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            for (c, o) in dl.row_mut(r).iter_mut().enumerate() {
                                let q = uniform + if c == t { 1.0 - smoothing } else { 0.0 };
                                *o = (probs.get(r, c) - q) * scale;
                            }
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
        }
        let mut out = self.params.zeros_like();
        for (i, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = &grads[v.0] {
                    out[i].add_assign(g);
                }
            }
        }
        out
    }
}
