//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node holding its forward value to the [`Tape`].
//! [`Tape::backward`] walks the nodes in reverse order and accumulates the
//! gradient of a scalar node into the [`ParamStore`] for every parameter
//! leaf it reaches.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into};
use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// What a softmax does with a row whose entries are all masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyRow {
    Error,
    /// Emit a uniform row over every column.
    Uniform,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    OuterSum(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Time2VecAct(Var),
    Concat(Var, Var, Axis),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Softmax {
        x: Var,
        mask: Option<Vec<bool>>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    MaskedMse {
        pred: Var,
        targets: Vec<f64>,
        mask: Vec<bool>,
        count: usize,
    },
    Dropout(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The leaf for a parameter, shared by every use within this tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = (ta.dims2(), tb.dims2());
        if k != k2 {
            return Err(mismatch("matmul_bt", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_into(ta.data(), tb.data(), &mut out, m, k, n);
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(out, Op::MatMulBt(a, b)))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds the row vector `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (m, n) = ta.dims2();
        if tb.len() != n {
            return Err(mismatch("add_row", ta, tb));
        }
        let mut out = ta.clone();
        for i in 0..m {
            for (o, &b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// `out[i][j] = col[i] + row[j]` for a column of length m and a row of
    /// length n.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Result<Var> {
        let (tc, tr) = (self.value(col), self.value(row));
        let (m, n) = (tc.len(), tr.len());
        let mut out = Vec::with_capacity(m * n);
        for &c in tc.data() {
            out.extend(tr.data().iter().map(|&r| c + r));
        }
        let out = Tensor::matrix(m, n, out)?;
        Ok(self.push(out, Op::OuterSum(col, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// `x` for `x > 0`, `slope * x` otherwise. The derivative at exactly 0
    /// is `slope`.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v <= 0.0 {
                *v *= slope;
            }
        });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    /// Identity on column 0 and `sin` on every other column.
    pub fn time2vec_act(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        out.data_mut().iter_mut().enumerate().for_each(|(i, v)| {
            if i % c != 0 {
                *v = libm::sin(*v);
            }
        });
        self.push(out, Op::Time2VecAct(a))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: Axis) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match axis {
            Axis::Rows => {
                if ta.shape().len() == 1 && tb.shape().len() == 1 {
                    let mut d = ta.data().to_vec();
                    d.extend_from_slice(tb.data());
                    Tensor::vector(d)
                } else {
                    if ta.cols() != tb.cols() {
                        return Err(mismatch("concat", ta, tb));
                    }
                    let mut d = ta.data().to_vec();
                    d.extend_from_slice(tb.data());
                    Tensor::matrix(ta.rows() + tb.rows(), ta.cols(), d)?
                }
            }
            Axis::Cols => {
                let ((m, n1), (m2, n2)) = (ta.dims2(), tb.dims2());
                if m != m2 {
                    return Err(mismatch("concat", ta, tb));
                }
                let mut d = Vec::with_capacity(m * (n1 + n2));
                for i in 0..m {
                    d.extend_from_slice(ta.row(i));
                    d.extend_from_slice(tb.row(i));
                }
                if ta.shape().len() == 1 && tb.shape().len() == 1 {
                    Tensor::vector(d)
                } else {
                    Tensor::matrix(m, n1 + n2, d)?
                }
            }
        };
        Ok(self.push(out, Op::Concat(a, b, axis)))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.dims2();
        if start + len > n {
            return Err(Error::IndexOutOfRange { index: start + len, len: n });
        }
        let mut d = Vec::with_capacity(m * len);
        for i in 0..m {
            d.extend_from_slice(&ta.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(m, len, d)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Stacks the rows `indices` of a matrix.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (m, n) = t.dims2();
        let mut d = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::IndexOutOfRange { index: i, len: m });
            }
            d.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(indices.len(), n, d)?;
        Ok(self.push(out, Op::GatherRows(table, indices.to_vec())))
    }

    /// Row `index` of an embedding table as a rank-1 tensor.
    pub fn embedding_lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        let row = self.gather_rows(table, &[index])?;
        let n = self.value(row).cols();
        self.reshape(row, &[n])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Row-wise softmax over the unmasked entries (`mask[i] == true` keeps
    /// entry `i`). Masked entries are exactly 0.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.softmax_rows_with(x, mask, EmptyRow::Error)
    }

    pub fn softmax_rows_with(&mut self, x: Var, mask: Option<&[bool]>, empty: EmptyRow) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2();
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::ShapeMismatch {
                    op: "softmax_rows",
                    left: tx.shape().to_vec(),
                    right: vec![mask.len()],
                });
            }
        }
        let keep = |i: usize| mask.is_none_or(|mk| mk[i]);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = tx.row(r);
            let max = (0..n)
                .filter(|&j| keep(r * n + j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                match empty {
                    EmptyRow::Error => return Err(Error::AllMaskedRow { row: r }),
                    EmptyRow::Uniform => {
                        out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = 1.0 / n as f64);
                        continue;
                    }
                }
            }
            let mut total = 0.0;
            for j in 0..n {
                if keep(r * n + j) {
                    let e = libm::exp(row[j] - max);
                    out[r * n + j] = e;
                    total += e;
                }
            }
            out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v /= total);
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::Softmax {
                x,
                mask: mask.map(<[bool]>::to_vec),
            },
        ))
    }

    /// Per-row standardization followed by `gain * xhat + bias`. Rows with
    /// zero variance standardize to zeros.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (m, d) = tx.dims2();
        if tg.len() != d || tb.len() != d {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean over unmasked rows of `-log softmax(logits[row])[target[row]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let t = self.value(logits);
        let (m, n) = t.dims2();
        if targets.len() != m || mask.len() != m {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: vec![m, n],
                right: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let mut probs = vec![0.0; m * n];
        let mut total = 0.0;
        for r in 0..m {
            if !mask[r] {
                continue;
            }
            if targets[r] >= n {
                return Err(Error::IndexOutOfRange { index: targets[r], len: n });
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
            let log_z = max + libm::log(z);
            for j in 0..n {
                probs[r * n + j] = libm::exp(row[j] - log_z);
            }
            total += log_z - row[targets[r]];
        }
        let loss = Tensor::scalar(total / count as f64);
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Mean over unmasked rows of `(pred[row] - target[row])^2` for an
    /// `m x 1` prediction.
    pub fn masked_mse(&mut self, pred: Var, targets: &[f64], mask: &[bool]) -> Result<Var> {
        let t = self.value(pred);
        if t.len() != targets.len() || mask.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_mse",
                left: t.shape().to_vec(),
                right: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let total: f64 = (0..targets.len())
            .filter(|&i| mask[i])
            .map(|i| (t.data()[i] - targets[i]) * (t.data()[i] - targets[i]))
            .sum();
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::MaskedMse {
                pred,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    /// Multiplies by a precomputed keep/scale pattern (0 for dropped
    /// entries, `1 / (1 - rate)` for kept ones).
    pub fn dropout(&mut self, a: Var, pattern: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if pattern.len() != ta.len() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                left: ta.shape().to_vec(),
                right: vec![pattern.len()],
            });
        }
        let data = ta.data().iter().zip(&pattern).map(|(x, p)| x * p).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout(a, pattern)))
    }

    /// Accumulates d(loss)/d(param) into `store` for every parameter leaf.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: self.value(loss).shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
                let len = self.nodes[v.0].value.len();
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    for (pg, gv) in p.grad.data_mut().iter_mut().zip(&g) {
                        *pg += gv;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((m, k), (_, n)) = (ta.dims2(), tb.dims2());
                    acc(*a, &|s| matmul_bt_into(&g, tb.data(), s, m, n, k));
                    acc(*b, &|s| matmul_at_into(ta.data(), &g, s, k, m, n));
                }
                Op::MatMulBt(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((m, k), (n, _)) = (ta.dims2(), tb.dims2());
                    acc(*a, &|s| matmul_into(&g, tb.data(), s, m, n, k));
                    acc(*b, &|s| matmul_at_into(&g, ta.data(), s, n, m, k));
                }
                Op::Add(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| add_into(s, &g));
                }
                Op::AddRow(a, b) => {
                    let n = self.value(*b).len();
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| {
                        for (i, gv) in g.iter().enumerate() {
                            s[i % n] += gv;
                        }
                    });
                }
                Op::OuterSum(c, r) => {
                    let n = self.value(*r).len();
                    acc(*c, &|s| {
                        for (i, gv) in g.iter().enumerate() {
                            s[i / n] += gv;
                        }
                    });
                    acc(*r, &|s| {
                        for (i, gv) in g.iter().enumerate() {
                            s[i % n] += gv;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(*a, &|s| {
                        for ((sv, gv), bv) in s.iter_mut().zip(&g).zip(tb.data()) {
                            *sv += gv * bv;
                        }
                    });
                    acc(*b, &|s| {
                        for ((sv, gv), av) in s.iter_mut().zip(&g).zip(ta.data()) {
                            *sv += gv * av;
                        }
                    });
                }
                Op::Scale(a, f) => acc(*a, &|s| {
                    for (sv, gv) in s.iter_mut().zip(&g) {
                        *sv += gv * f;
                    }
                }),
                Op::LeakyRelu(a, slope) => {
                    let ta = self.value(*a);
                    acc(*a, &|s| {
                        for ((sv, gv), xv) in s.iter_mut().zip(&g).zip(ta.data()) {
                            *sv += if *xv > 0.0 { *gv } else { gv * slope };
                        }
                    });
                }
                Op::Time2VecAct(a) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    acc(*a, &|s| {
                        for (i, (sv, gv)) in s.iter_mut().zip(&g).enumerate() {
                            *sv += if i % c == 0 { *gv } else { gv * libm::cos(ta.data()[i]) };
                        }
                    });
                }
                Op::Concat(a, b, axis) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    match axis {
                        Axis::Rows => {
                            let split = ta.len();
                            acc(*a, &|s| add_into(s, &g[..split]));
                            acc(*b, &|s| add_into(s, &g[split..]));
                        }
                        Axis::Cols => {
                            let ((m, n1), (_, n2)) = (ta.dims2(), tb.dims2());
                            let w = n1 + n2;
                            acc(*a, &|s| {
                                for i in 0..m {
                                    add_into(&mut s[i * n1..(i + 1) * n1], &g[i * w..i * w + n1]);
                                }
                            });
                            acc(*b, &|s| {
                                for i in 0..m {
                                    add_into(&mut s[i * n2..(i + 1) * n2], &g[i * w + n1..(i + 1) * w]);
                                }
                            });
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let n = self.value(*a).cols();
                    let len = node.value.cols();
                    acc(*a, &|s| {
                        for (i, gr) in g.chunks(len).enumerate() {
                            add_into(&mut s[i * n + start..i * n + start + len], gr);
                        }
                    });
                }
                Op::GatherRows(t, indices) => {
                    let n = self.value(*t).cols();
                    acc(*t, &|s| {
                        for (r, &i) in indices.iter().enumerate() {
                            add_into(&mut s[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                        }
                    });
                }
                Op::Reshape(a) => acc(*a, &|s| add_into(s, &g)),
                Op::Softmax { x, mask } => {
                    let y = node.value.data();
                    let (m, n) = node.value.dims2();
                    acc(*x, &|s| {
                        for r in 0..m {
                            let row = r * n..(r + 1) * n;
                            let all_masked = mask.as_ref().is_some_and(|mk| !mk[row.clone()].iter().any(|&k| k));
                            if all_masked {
                                continue;
                            }
                            let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                            for j in row {
                                s[j] += y[j] * (g[j] - dot);
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gain).data();
                    let (m, d) = node.value.dims2();
                    acc(*x, &|s| {
                        for r in 0..m {
                            let gh: Vec<f64> = (0..d).map(|j| g[r * d + j] * tg[j]).collect();
                            let sum_gh: f64 = gh.iter().sum();
                            let sum_ghx: f64 = (0..d).map(|j| gh[j] * xhat[r * d + j]).sum();
                            for j in 0..d {
                                s[r * d + j] += inv_std[r] / d as f64
                                    * (d as f64 * gh[j] - sum_gh - xhat[r * d + j] * sum_ghx);
                            }
                        }
                    });
                    acc(*gain, &|s| {
                        for (i, gv) in g.iter().enumerate() {
                            s[i % d] += gv * xhat[i];
                        }
                    });
                    acc(*bias, &|s| {
                        for (i, gv) in g.iter().enumerate() {
                            s[i % d] += gv;
                        }
                    });
                }
                Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|v| *v += g[0])),
                Op::CrossEntropy {
                    logits,
                    targets,
                    mask,
                    probs,
                    count,
                } => {
                    let n = self.value(*logits).cols();
                    let scale = g[0] / *count as f64;
                    acc(*logits, &|s| {
                        for (r, &keep) in mask.iter().enumerate() {
                            if !keep {
                                continue;
                            }
                            for j in 0..n {
                                let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                                s[r * n + j] += scale * (probs[r * n + j] - onehot);
                            }
                        }
                    });
                }
                Op::MaskedMse {
                    pred,
                    targets,
                    mask,
                    count,
                } => {
                    let tp = self.value(*pred).data();
                    let scale = 2.0 * g[0] / *count as f64;
                    acc(*pred, &|s| {
                        for (i, &keep) in mask.iter().enumerate() {
                            if keep {
                                s[i] += scale * (tp[i] - targets[i]);
                            }
                        }
                    });
                }
                Op::Dropout(a, pattern) => acc(*a, &|s| {
                    for ((sv, gv), p) in s.iter_mut().zip(&g).zip(pattern) {
                        *sv += gv * p;
                    }
                }),
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
