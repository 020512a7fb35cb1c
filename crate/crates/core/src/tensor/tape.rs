//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves either
//! borrow their matrix (parameters and frozen weights) or own it (inputs and
//! constants built on the fly). Calling [`Tape::backward`] on a scalar node
//! walks the tape once in reverse and returns gradients for the trainable
//! leaves only. Nodes that do not depend on a trainable leaf are skipped, so
//! frozen weights never get a gradient buffer.
//!
//! The tape is rebuilt for every training step.

use std::borrow::Cow;

use super::matrix::gemm;
use super::{Matrix, TensorError};

const RMS_EPS: f64 = 1e-6;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Mul,
    Scale,
    Silu,
    RmsNorm,
    GatherCols,
    SelectCols,
    SliceRows,
    ConcatRows,
    CausalSoftmax,
    CrossEntropy,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    RmsNorm { a: Var, inv_rms: Vec<f64> },
    GatherCols { table: Var, ids: Vec<usize> },
    SelectCols { a: Var, cols: Vec<usize> },
    SliceRows { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    CausalSoftmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Matrix },
    Sum(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Silu(_) => OpKind::Silu,
            Op::RmsNorm { .. } => OpKind::RmsNorm,
            Op::GatherCols { .. } => OpKind::GatherCols,
            Op::SelectCols { .. } => OpKind::SelectCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::CausalSoftmax(_) => OpKind::CausalSoftmax,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Sum(_) => OpKind::Sum,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Silu(a)
            | Op::RmsNorm { a, .. }
            | Op::SelectCols { a, .. }
            | Op::SliceRows { a, .. }
            | Op::CausalSoftmax(a)
            | Op::Sum(a) => vec![*a],
            Op::GatherCols { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Recorded computation of one forward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar with respect to the trainable leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a trainable leaf. `None` for frozen leaves, interior nodes,
    /// and leaves the loss does not depend on.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    /// Number of allocated gradient buffers.
    pub fn allocated(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn op_kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    pub fn inputs(&self, var: Var) -> Vec<Var> {
        self.nodes[var.0].op.inputs()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Matrix) -> Var {
        self.leaf(Cow::Borrowed(value), true)
    }

    /// Frozen leaf borrowing its value.
    pub fn constant(&mut self, value: &'a Matrix) -> Var {
        self.leaf(Cow::Borrowed(value), false)
    }

    /// Frozen leaf owning its value.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.leaf(Cow::Owned(value), false)
    }

    /// Trainable leaf owning its value.
    pub fn param_owned(&mut self, value: Matrix) -> Var {
        self.leaf(Cow::Owned(value), true)
    }

    fn leaf(&mut self, value: Cow<'a, Matrix>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op_name(op.kind())));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) * op(b)` with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, TensorError> {
        let value = gemm(self.value(a), ta, self.value(b), tb)?;
        self.push(value, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "mul")?;
        let value = va.zip_map(vb, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x * sigmoid(x));
        self.push(value, Op::Silu(a))
    }

    /// Normalizes every column to unit root-mean-square.
    pub fn rms_norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let (value, inv_rms) = rms_norm_cols(self.value(a));
        self.push(value, Op::RmsNorm { a, inv_rms })
    }

    /// Selects columns of `table` by index (embedding lookup).
    pub fn gather_cols(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.cols()) {
            return Err(TensorError::IndexOutOfRange {
                index: bad,
                len: t.cols(),
            });
        }
        let value = select_columns(t, ids);
        self.push(
            value,
            Op::GatherCols {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Selects a subset of columns; gradient scatters back.
    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var, TensorError> {
        let m = self.value(a);
        if let Some(&bad) = cols.iter().find(|&&i| i >= m.cols()) {
            return Err(TensorError::IndexOutOfRange {
                index: bad,
                len: m.cols(),
            });
        }
        let value = select_columns(m, cols);
        self.push(
            value,
            Op::SelectCols {
                a,
                cols: cols.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let m = self.value(a);
        if start + len > m.rows() {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                len: m.rows(),
            });
        }
        let value = m.row_slice(start, len);
        self.push(value, Op::SliceRows { a, start })
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            if m.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(*first).shape(),
                    right: m.shape(),
                });
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Row-wise softmax of a square score matrix where row `i` only sees
    /// columns `0..=i`; masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let m = self.value(a);
        if m.rows() != m.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "causal_softmax",
                left: m.shape(),
                right: (m.cols(), m.cols()),
            });
        }
        let value = causal_softmax_rows(m);
        self.push(value, Op::CausalSoftmax(a))
    }

    /// Mean cross-entropy of columns of `logits` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let l = self.value(logits);
        if targets.len() != l.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: l.shape(),
                right: (1, targets.len()),
            });
        }
        if targets.is_empty() {
            return Err(TensorError::Empty("cross_entropy"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= l.rows()) {
            return Err(TensorError::IndexOutOfRange {
                index: bad,
                len: l.rows(),
            });
        }
        let probs = softmax_cols(l);
        let n = targets.len() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(c, &t)| -probs.get(t, c).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n;
        self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Propagates d(loss)/d(node) back to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(TensorError::NonScalarLoss(lv.shape()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.trainable {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node<'a>,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<(), TensorError> {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                // C = op(A) op(B); dA = g op(B)^T (transposed back if ta),
                // dB = op(A)^T g (transposed back if tb).
                if needs(a) {
                    let bv = self.value(*b);
                    let da = if *ta {
                        gemm(bv, *tb, g, true)?
                    } else {
                        gemm(g, false, bv, !*tb)?
                    };
                    accumulate(grads, *a, da)?;
                }
                if needs(b) {
                    let av = self.value(*a);
                    let db = if *tb {
                        gemm(g, true, av, *ta)?
                    } else {
                        gemm(av, !*ta, g, false)?
                    };
                    accumulate(grads, *b, db)?;
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if needs(b) {
                    accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y))?;
                }
                if needs(b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y))?;
                }
            }
            Op::Scale(a, f) => {
                if needs(a) {
                    accumulate(grads, *a, g.scale(*f))?;
                }
            }
            Op::Silu(a) => {
                if needs(a) {
                    let d = g.zip_map(self.value(*a), |gy, x| {
                        let s = sigmoid(x);
                        gy * s * (1.0 + x * (1.0 - s))
                    });
                    accumulate(grads, *a, d)?;
                }
            }
            Op::RmsNorm { a, inv_rms } => {
                if needs(a) {
                    let y = &node.value;
                    let (rows, cols) = y.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for c in 0..cols {
                        let mut dot = 0.0;
                        for r in 0..rows {
                            dot += g.get(r, c) * y.get(r, c);
                        }
                        let mean = dot / rows as f64;
                        for r in 0..rows {
                            d.set(r, c, (g.get(r, c) - y.get(r, c) * mean) * inv_rms[c]);
                        }
                    }
                    accumulate(grads, *a, d)?;
                }
            }
            Op::GatherCols { table, ids } => {
                if needs(table) {
                    let t = self.value(*table);
                    let mut d = Matrix::zeros(t.rows(), t.cols());
                    scatter_add_cols(&mut d, g, ids);
                    accumulate(grads, *table, d)?;
                }
            }
            Op::SelectCols { a, cols } => {
                if needs(a) {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    scatter_add_cols(&mut d, g, cols);
                    accumulate(grads, *a, d)?;
                }
            }
            Op::SliceRows { a, start } => {
                if needs(a) {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    let w = src.cols();
                    d.data_mut()[start * w..start * w + g.len()].copy_from_slice(g.data());
                    accumulate(grads, *a, d)?;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if needs(p) {
                        accumulate(grads, *p, g.row_slice(offset, rows))?;
                    }
                    offset += rows;
                }
            }
            Op::CausalSoftmax(a) => {
                if needs(a) {
                    let p = &node.value;
                    let n = p.rows();
                    let mut d = Matrix::zeros(n, n);
                    for i in 0..n {
                        let mut dot = 0.0;
                        for j in 0..=i {
                            dot += g.get(i, j) * p.get(i, j);
                        }
                        for j in 0..=i {
                            d.set(i, j, p.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(grads, *a, d)?;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if needs(logits) {
                    let scale = g.data()[0] / targets.len() as f64;
                    let mut d = probs.scale(scale);
                    for (c, &t) in targets.iter().enumerate() {
                        let v = d.get(t, c) - scale;
                        d.set(t, c, v);
                    }
                    accumulate(grads, *logits, d)?;
                }
            }
            Op::Sum(a) => {
                if needs(a) {
                    let (r, c) = self.value(*a).shape();
                    accumulate(grads, *a, Matrix::filled(r, c, g.data()[0]))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, delta: Matrix) -> Result<(), TensorError> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

fn op_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Leaf => "leaf",
        OpKind::MatMul => "matmul",
        OpKind::Add => "add",
        OpKind::Mul => "mul",
        OpKind::Scale => "scale",
        OpKind::Silu => "silu",
        OpKind::RmsNorm => "rms_norm",
        OpKind::GatherCols => "gather_cols",
        OpKind::SelectCols => "select_cols",
        OpKind::SliceRows => "slice_rows",
        OpKind::ConcatRows => "concat_rows",
        OpKind::CausalSoftmax => "causal_softmax",
        OpKind::CrossEntropy => "cross_entropy",
        OpKind::Sum => "sum",
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn rms_norm_cols(m: &Matrix) -> (Matrix, Vec<f64>) {
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(rows, cols);
    let mut inv = Vec::with_capacity(cols);
    for c in 0..cols {
        let ms = (0..rows).map(|r| m.get(r, c).powi(2)).sum::<f64>() / rows as f64;
        let s = 1.0 / (ms + RMS_EPS).sqrt();
        for r in 0..rows {
            out.set(r, c, m.get(r, c) * s);
        }
        inv.push(s);
    }
    (out, inv)
}

pub(crate) fn causal_softmax_rows(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let row = &m.data()[i * n..i * n + i + 1];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out.set(i, j, e);
            z += e;
        }
        for j in 0..=i {
            let v = out.get(i, j) / z;
            out.set(i, j, v);
        }
    }
    out
}

pub(crate) fn softmax_cols(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    let mut out = Matrix::zeros(rows, cols);
    for c in 0..cols {
        let max = (0..rows).map(|r| m.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for r in 0..rows {
            let e = (m.get(r, c) - max).exp();
            out.set(r, c, e);
            z += e;
        }
        for r in 0..rows {
            let v = out.get(r, c) / z;
            out.set(r, c, v);
        }
    }
    out
}

fn select_columns(m: &Matrix, cols: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), cols.len());
    for (j, &c) in cols.iter().enumerate() {
        for r in 0..m.rows() {
            out.set(r, j, m.get(r, c));
        }
    }
    out
}

fn scatter_add_cols(dst: &mut Matrix, g: &Matrix, cols: &[usize]) {
    for (j, &c) in cols.iter().enumerate() {
        for r in 0..g.rows() {
            let v = dst.get(r, c) + g.get(r, j);
            dst.set(r, c, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_of_identity_product() {
        let w = Matrix::identity(2);
        let x = Matrix::column(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let wv = tape.constant(&w);
        let xv = tape.param(&x);
        let y = tape.matmul(wv, xv).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &Matrix::column(&[1.0, 1.0]));
        assert!(grads.get(wv).is_none());
    }

    #[test]
    fn backward_of_squared_norm() {
        let x = Matrix::column(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &Matrix::column(&[2.0, 4.0]));
    }

    #[test]
    fn unrelated_parameter_gets_no_gradient() {
        let x = Matrix::column(&[1.0, 2.0]);
        let p = Matrix::column(&[5.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let pv = tape.param(&p);
        let loss = tape.sum(xv).unwrap();
        let grads = tape.backward(loss).unwrap();
        // Loss does not depend on p: gradient is identically zero, i.e. absent.
        assert!(grads.get(pv).is_none());
        assert_eq!(grads.allocated(), 1);
    }

    #[test]
    fn frozen_chain_allocates_nothing() {
        let w = Matrix::identity(3);
        let x = Matrix::column(&[1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let wv = tape.constant(&w);
        let xv = tape.constant(&x);
        let y = tape.matmul(wv, xv).unwrap();
        let loss = tape.sum(y).unwrap();
        assert!(!tape.requires_grad(y));
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.allocated(), 0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Matrix::column(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        assert!(matches!(
            tape.backward(xv),
            Err(TensorError::NonScalarLoss((2, 1)))
        ));
    }

    #[test]
    fn causal_softmax_masks_future() {
        let m = Matrix::from_rows(&[&[1.0, 9.0, 9.0], &[0.0, 0.0, 9.0], &[1.0, 2.0, 3.0]]);
        let p = causal_softmax_rows(&m);
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(p.get(0, 1), 0.0);
        assert_eq!(p.get(1, 2), 0.0);
        assert!((p.get(1, 0) - 0.5).abs() < 1e-15);
        let row2: f64 = (0..3).map(|j| p.get(2, j)).sum();
        assert!((row2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tape_inputs_form_a_dag_in_recording_order() {
        let x = Matrix::column(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let a = tape.scale(xv, 2.0).unwrap();
        let b = tape.add(a, xv).unwrap();
        let loss = tape.sum(b).unwrap();
        for i in 0..tape.len() {
            for input in tape.inputs(Var(i)) {
                assert!(input.index() < i);
            }
        }
        assert_eq!(tape.op_kind(loss), OpKind::Sum);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &Matrix::column(&[3.0, 3.0]));
    }
}
