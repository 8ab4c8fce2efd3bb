//! Minimal reverse-mode tensor engine.
//!
//! Operations are recorded on an explicit tape and replayed in reverse to
//! accumulate gradients. Everything is 64-bit and single-graph-threaded: a
//! tape and its tensors belong to one training task (the handles are `Rc`,
//! so the compiler enforces confinement). Parallel training runs each own a
//! private tape.
//!
//! Parameters are registered first; per-step intermediates are dropped by
//! truncating back to a checkpoint, so one tape lives through a whole
//! training loop.

mod adam;
mod matrix;

pub use adam::{restore_params, snapshot_params, zero_grads, AdamState};
pub use matrix::Matrix;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Spmm(Arc<SparseMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    LogSigmoid(usize),
    Prelu(usize, usize),
    Log(usize),
    SoftmaxRows(usize),
    Transpose(usize),
    MeanRows(usize),
    MeanAll(usize),
    SumAll(usize),
    FrobeniusSq(usize),
    ConcatCols(Vec<usize>),
    Col(usize, usize),
    CrossEntropyMean(usize, Arc<Vec<usize>>),
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Shared handle to an operation tape.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one tape node. Cloning is cheap; the value lives on the tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, value: Matrix, requires_grad: bool, op: Op) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            tape: self.clone(),
            id,
        }
    }

    /// Register a constant (no gradient is ever computed for it).
    pub fn constant(&self, value: Matrix) -> Tensor {
        self.push(value, false, Op::Leaf)
    }

    /// Register a trainable parameter.
    pub fn param(&self, value: Matrix) -> Tensor {
        self.push(value, true, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mark the current node count; pair with [`Tape::truncate`].
    pub fn checkpoint(&self) -> usize {
        self.len()
    }

    /// Drop every node recorded after `checkpoint`. Handles created after the
    /// checkpoint must not be used again.
    pub fn truncate(&self, checkpoint: usize) {
        self.inner.borrow_mut().nodes.truncate(checkpoint);
    }
}

fn check_finite(op: &'static str, m: &Matrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without ever forming sigmoid(x).
fn stable_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -((-x).exp().ln_1p())
    } else {
        x - x.exp().ln_1p()
    }
}

fn softmax_rows_matrix(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out_row = out.row_mut(i);
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.inner.borrow().nodes[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Clone of the node's value.
    pub fn value(&self) -> Matrix {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    /// Clone of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Matrix> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        self.tape.inner.borrow_mut().nodes[self.id].grad = None;
    }

    /// Overwrite the node's value in place (optimizer updates).
    pub fn set_value(&self, value: Matrix) {
        let mut inner = self.tape.inner.borrow_mut();
        let node = &mut inner.nodes[self.id];
        assert_eq!(node.value.shape(), value.shape(), "set_value shape");
        node.value = value;
    }

    fn with<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    fn binary_same_shape(
        &self,
        rhs: &Tensor,
        op_name: &'static str,
        check: bool,
        f: impl FnOnce(&Matrix, &Matrix) -> Matrix,
        op: Op,
    ) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id].value;
        let b = &inner.nodes[rhs.id].value;
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        if check {
            check_finite(op_name, a)?;
            check_finite(op_name, b)?;
        }
        let value = f(a, b);
        let rg = inner.nodes[self.id].requires_grad || inner.nodes[rhs.id].requires_grad;
        drop(inner);
        Ok(self.tape.push(value, rg, op))
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id].value;
        let b = &inner.nodes[rhs.id].value;
        if a.cols() != b.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let value = Matrix::matmul(a, b);
        let rg = inner.nodes[self.id].requires_grad || inner.nodes[rhs.id].requires_grad;
        drop(inner);
        Ok(self.tape.push(value, rg, Op::Matmul(self.id, rhs.id)))
    }

    /// Sparse-dense product; the adjacency is a constant, gradients flow
    /// through the dense side only.
    pub fn spmm(adj: &Arc<SparseMatrix>, x: &Tensor) -> Result<Tensor> {
        let inner = x.tape.inner.borrow();
        let xv = &inner.nodes[x.id].value;
        if adj.cols() != xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                lhs: (adj.rows(), adj.cols()),
                rhs: xv.shape(),
            });
        }
        let value = Matrix::spmm(adj, xv);
        let rg = inner.nodes[x.id].requires_grad;
        drop(inner);
        Ok(x.tape.push(value, rg, Op::Spmm(Arc::clone(adj), x.id)))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(
            rhs,
            "add",
            true,
            |a, b| {
                let mut out = a.clone();
                out.add_scaled(b, 1.0);
                out
            },
            Op::Add(self.id, rhs.id),
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(
            rhs,
            "sub",
            true,
            |a, b| {
                let mut out = a.clone();
                out.add_scaled(b, -1.0);
                out
            },
            Op::Sub(self.id, rhs.id),
        )
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(
            rhs,
            "mul",
            true,
            |a, b| {
                let mut out = a.clone();
                for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
                    *o *= bv;
                }
                out
            },
            Op::Mul(self.id, rhs.id),
        )
    }

    /// Add a 1xC row vector to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id].value;
        let r = &inner.nodes[row.id].value;
        if r.rows() != 1 || r.cols() != a.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: a.shape(),
                rhs: r.shape(),
            });
        }
        let mut value = a.clone();
        for i in 0..value.rows() {
            let vrow = value.row_mut(i);
            for (o, &rv) in vrow.iter_mut().zip(r.row(0)) {
                *o += rv;
            }
        }
        let rg = inner.nodes[self.id].requires_grad || inner.nodes[row.id].requires_grad;
        drop(inner);
        Ok(self.tape.push(value, rg, Op::AddRow(self.id, row.id)))
    }

    /// Scale row i by col[i], where `col` is Nx1.
    pub fn mul_col(&self, col: &Tensor) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id].value;
        let c = &inner.nodes[col.id].value;
        if c.cols() != 1 || c.rows() != a.rows() {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                lhs: a.shape(),
                rhs: c.shape(),
            });
        }
        let mut value = a.clone();
        for i in 0..value.rows() {
            let s = c[(i, 0)];
            for o in value.row_mut(i) {
                *o *= s;
            }
        }
        let rg = inner.nodes[self.id].requires_grad || inner.nodes[col.id].requires_grad;
        drop(inner);
        Ok(self.tape.push(value, rg, Op::MulCol(self.id, col.id)))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (node.value.map(|v| k * v), node.requires_grad)
        };
        self.tape.push(value, rg, Op::Scale(self.id, k))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            check_finite("sigmoid", &node.value)?;
            (node.value.map(stable_sigmoid), node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::Sigmoid(self.id)))
    }

    pub fn log_sigmoid(&self) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            check_finite("log_sigmoid", &node.value)?;
            (node.value.map(stable_log_sigmoid), node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::LogSigmoid(self.id)))
    }

    /// PReLU with one learnable slope shared across the tensor.
    pub fn prelu(&self, slope: &Tensor) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.id].value;
        let s = &inner.nodes[slope.id].value;
        if s.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "prelu slope",
                lhs: x.shape(),
                rhs: s.shape(),
            });
        }
        check_finite("prelu", x)?;
        let a = s.item();
        let value = x.map(|v| if v > 0.0 { v } else { a * v });
        let rg = inner.nodes[self.id].requires_grad || inner.nodes[slope.id].requires_grad;
        drop(inner);
        Ok(self.tape.push(value, rg, Op::Prelu(self.id, slope.id)))
    }

    pub fn log(&self) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            check_finite("log", &node.value)?;
            (node.value.map(f64::ln), node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::Log(self.id)))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            check_finite("softmax_rows", &node.value)?;
            (softmax_rows_matrix(&node.value), node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::SoftmaxRows(self.id)))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            check_finite("transpose", &node.value)?;
            (node.value.transposed(), node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::Transpose(self.id)))
    }

    /// Column-wise mean over rows; output is 1xC.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            check_finite("mean_rows", &node.value)?;
            let x = &node.value;
            if x.rows() == 0 {
                return Err(Error::ShapeMismatch {
                    op: "mean_rows on empty input",
                    lhs: x.shape(),
                    rhs: (1, x.cols()),
                });
            }
            let mut out = Matrix::zeros(1, x.cols());
            for i in 0..x.rows() {
                for (o, &v) in out.row_mut(0).iter_mut().zip(x.row(i)) {
                    *o += v;
                }
            }
            let inv = 1.0 / x.rows() as f64;
            for o in out.data_mut() {
                *o *= inv;
            }
            (out, node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::MeanRows(self.id)))
    }

    /// Mean of all entries (scalar).
    pub fn mean_all(&self) -> Tensor {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let sum: f64 = node.value.data().iter().sum();
            (
                Matrix::scalar(sum / node.value.len() as f64),
                node.requires_grad,
            )
        };
        self.tape.push(value, rg, Op::MeanAll(self.id))
    }

    /// Sum of all entries (scalar).
    pub fn sum_all(&self) -> Tensor {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let sum: f64 = node.value.data().iter().sum();
            (Matrix::scalar(sum), node.requires_grad)
        };
        self.tape.push(value, rg, Op::SumAll(self.id))
    }

    /// Squared Frobenius norm (scalar).
    pub fn frobenius_sq(&self) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            check_finite("frobenius_sq", &node.value)?;
            let sum: f64 = node.value.data().iter().map(|v| v * v).sum();
            (Matrix::scalar(sum), node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::FrobeniusSq(self.id)))
    }

    /// Concatenate tensors with equal row counts side by side.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let tape = parts[0].tape.clone();
        let inner = tape.inner.borrow();
        let rows = inner.nodes[parts[0].id].value.rows();
        let mut total = 0;
        for p in parts {
            let v = &inner.nodes[p.id].value;
            if v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (rows, total),
                    rhs: v.shape(),
                });
            }
            total += v.cols();
        }
        let mut value = Matrix::zeros(rows, total);
        let mut offset = 0;
        let mut rg = false;
        for p in parts {
            let v = &inner.nodes[p.id].value;
            rg |= inner.nodes[p.id].requires_grad;
            for i in 0..rows {
                value.row_mut(i)[offset..offset + v.cols()].copy_from_slice(v.row(i));
            }
            offset += v.cols();
        }
        drop(inner);
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(value, rg, Op::ConcatCols(ids)))
    }

    /// Extract column j as an Nx1 tensor.
    pub fn col(&self, j: usize) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let x = &node.value;
            if j >= x.cols() {
                return Err(Error::ShapeMismatch {
                    op: "col",
                    lhs: x.shape(),
                    rhs: (j, 1),
                });
            }
            let mut out = Matrix::zeros(x.rows(), 1);
            for i in 0..x.rows() {
                out[(i, 0)] = x[(i, j)];
            }
            (out, node.requires_grad)
        };
        Ok(self.tape.push(value, rg, Op::Col(self.id, j)))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn cross_entropy_mean(&self, labels: &[usize]) -> Result<Tensor> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            let x = &node.value;
            check_finite("cross_entropy_mean", x)?;
            if labels.len() != x.rows() {
                return Err(Error::ShapeMismatch {
                    op: "cross_entropy_mean",
                    lhs: x.shape(),
                    rhs: (labels.len(), 1),
                });
            }
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= x.cols() {
                    return Err(Error::ShapeMismatch {
                        op: "cross_entropy_mean label out of range",
                        lhs: x.shape(),
                        rhs: (i, y),
                    });
                }
                let row = x.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[y];
            }
            (
                Matrix::scalar(total / labels.len() as f64),
                node.requires_grad,
            )
        };
        Ok(self.tape.push(
            value,
            rg,
            Op::CrossEntropyMean(self.id, Arc::new(labels.to_vec())),
        ))
    }

    /// Reverse pass from a scalar loss. Parameter gradients accumulate across
    /// calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        let mut inner = self.tape.inner.borrow_mut();
        let nodes = &mut inner.nodes;
        {
            let loss = &nodes[self.id];
            if loss.value.shape() != (1, 1) {
                return Err(Error::NonScalarLoss {
                    shape: loss.value.shape(),
                });
            }
        }
        // Seed: d(loss)/d(loss) = 1, added on top of anything already there
        // only for the duration of this pass.
        match &mut nodes[self.id].grad {
            Some(g) if !matches!(nodes[self.id].op, Op::Leaf) => g.add_scaled(&Matrix::scalar(1.0), 1.0),
            slot => {
                let mut seed = Matrix::scalar(1.0);
                if let Some(prev) = slot.take() {
                    seed.add_scaled(&prev, 1.0);
                }
                *slot = Some(seed);
            }
        }

        for i in (0..=self.id).rev() {
            if matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = nodes[i].grad.take() else {
                continue;
            };
            let op = nodes[i].op.clone();
            let (before, rest) = nodes.split_at_mut(i);
            let out_value = &rest[0].value;
            let mut deltas: Vec<(usize, Matrix)> = Vec::with_capacity(2);
            backward_op(&op, &g, out_value, before, &mut deltas);
            for (target, delta) in deltas {
                let node = &mut before[target];
                match &mut node.grad {
                    Some(acc) => acc.add_scaled(&delta, 1.0),
                    slot => *slot = Some(delta),
                }
            }
            // Intermediate grads are transient; only leaves retain them.
        }
        Ok(())
    }
}

/// Compute per-input gradient contributions for one op.
fn backward_op(
    op: &Op,
    g: &Matrix,
    out_value: &Matrix,
    before: &[Node],
    deltas: &mut Vec<(usize, Matrix)>,
) {
    let wants = |id: usize| before[id].requires_grad;
    match op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            if wants(*a) {
                deltas.push((*a, Matrix::matmul(g, &before[*b].value.transposed())));
            }
            if wants(*b) {
                deltas.push((*b, Matrix::matmul(&before[*a].value.transposed(), g)));
            }
        }
        Op::Spmm(adj, x) => {
            if wants(*x) {
                deltas.push((*x, Matrix::spmm_transpose(adj, g)));
            }
        }
        Op::Add(a, b) => {
            if wants(*a) {
                deltas.push((*a, g.clone()));
            }
            if wants(*b) {
                deltas.push((*b, g.clone()));
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                deltas.push((*a, g.clone()));
            }
            if wants(*b) {
                deltas.push((*b, g.map(|v| -v)));
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                let mut d = g.clone();
                for (o, &bv) in d.data_mut().iter_mut().zip(before[*b].value.data()) {
                    *o *= bv;
                }
                deltas.push((*a, d));
            }
            if wants(*b) {
                let mut d = g.clone();
                for (o, &av) in d.data_mut().iter_mut().zip(before[*a].value.data()) {
                    *o *= av;
                }
                deltas.push((*b, d));
            }
        }
        Op::AddRow(a, r) => {
            if wants(*a) {
                deltas.push((*a, g.clone()));
            }
            if wants(*r) {
                let mut d = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &gv) in d.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o += gv;
                    }
                }
                deltas.push((*r, d));
            }
        }
        Op::MulCol(a, c) => {
            let cv = &before[*c].value;
            if wants(*a) {
                let mut d = g.clone();
                for i in 0..d.rows() {
                    let s = cv[(i, 0)];
                    for o in d.row_mut(i) {
                        *o *= s;
                    }
                }
                deltas.push((*a, d));
            }
            if wants(*c) {
                let av = &before[*a].value;
                let mut d = Matrix::zeros(g.rows(), 1);
                for i in 0..g.rows() {
                    d[(i, 0)] = g
                        .row(i)
                        .iter()
                        .zip(av.row(i))
                        .map(|(&gv, &xv)| gv * xv)
                        .sum();
                }
                deltas.push((*c, d));
            }
        }
        Op::Scale(a, k) => {
            if wants(*a) {
                deltas.push((*a, g.map(|v| k * v)));
            }
        }
        Op::Sigmoid(a) => {
            if wants(*a) {
                let mut d = g.clone();
                for (o, &y) in d.data_mut().iter_mut().zip(out_value.data()) {
                    *o *= y * (1.0 - y);
                }
                deltas.push((*a, d));
            }
        }
        Op::LogSigmoid(a) => {
            if wants(*a) {
                let mut d = g.clone();
                for (o, &x) in d.data_mut().iter_mut().zip(before[*a].value.data()) {
                    *o *= stable_sigmoid(-x);
                }
                deltas.push((*a, d));
            }
        }
        Op::Prelu(x, s) => {
            let xv = &before[*x].value;
            if wants(*x) {
                let a = before[*s].value.item();
                let mut d = g.clone();
                for (o, &v) in d.data_mut().iter_mut().zip(xv.data()) {
                    *o *= if v > 0.0 { 1.0 } else { a };
                }
                deltas.push((*x, d));
            }
            if wants(*s) {
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &v)| if v > 0.0 { 0.0 } else { gv * v })
                    .sum();
                deltas.push((*s, Matrix::scalar(ds)));
            }
        }
        Op::Log(a) => {
            if wants(*a) {
                let mut d = g.clone();
                for (o, &x) in d.data_mut().iter_mut().zip(before[*a].value.data()) {
                    *o /= x;
                }
                deltas.push((*a, d));
            }
        }
        Op::SoftmaxRows(a) => {
            if wants(*a) {
                let y = out_value;
                let mut d = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let dot: f64 = g
                        .row(i)
                        .iter()
                        .zip(y.row(i))
                        .map(|(&gv, &yv)| gv * yv)
                        .sum();
                    for ((o, &gv), &yv) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = yv * (gv - dot);
                    }
                }
                deltas.push((*a, d));
            }
        }
        Op::Transpose(a) => {
            if wants(*a) {
                deltas.push((*a, g.transposed()));
            }
        }
        Op::MeanRows(a) => {
            if wants(*a) {
                let n = before[*a].value.rows();
                let inv = 1.0 / n as f64;
                let mut d = Matrix::zeros(n, g.cols());
                for i in 0..n {
                    for (o, &gv) in d.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = gv * inv;
                    }
                }
                deltas.push((*a, d));
            }
        }
        Op::MeanAll(a) => {
            if wants(*a) {
                let v = &before[*a].value;
                let s = g.item() / v.len() as f64;
                deltas.push((*a, Matrix::from_vec(v.rows(), v.cols(), vec![s; v.len()])));
            }
        }
        Op::SumAll(a) => {
            if wants(*a) {
                let v = &before[*a].value;
                let s = g.item();
                deltas.push((*a, Matrix::from_vec(v.rows(), v.cols(), vec![s; v.len()])));
            }
        }
        Op::FrobeniusSq(a) => {
            if wants(*a) {
                let s = 2.0 * g.item();
                deltas.push((*a, before[*a].value.map(|v| s * v)));
            }
        }
        Op::ConcatCols(ids) => {
            let mut offset = 0;
            for &id in ids {
                let w = before[id].value.cols();
                if wants(id) {
                    let mut d = Matrix::zeros(g.rows(), w);
                    for i in 0..g.rows() {
                        d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    deltas.push((id, d));
                }
                offset += w;
            }
        }
        Op::Col(a, j) => {
            if wants(*a) {
                let v = &before[*a].value;
                let mut d = Matrix::zeros(v.rows(), v.cols());
                for i in 0..v.rows() {
                    d[(i, *j)] = g[(i, 0)];
                }
                deltas.push((*a, d));
            }
        }
        Op::CrossEntropyMean(a, labels) => {
            if wants(*a) {
                let x = &before[*a].value;
                let p = softmax_rows_matrix(x);
                let scale = g.item() / labels.len() as f64;
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for (i, &y) in labels.iter().enumerate() {
                    for (j, (o, &pv)) in d.row_mut(i).iter_mut().zip(p.row(i)).enumerate() {
                        let ind = if j == y { 1.0 } else { 0.0 };
                        *o = scale * (pv - ind);
                    }
                }
                deltas.push((*a, d));
            }
        }
    }
}

#[cfg(test)]
mod tests;
