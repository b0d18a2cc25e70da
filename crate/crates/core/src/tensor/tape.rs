//! Tape-based reverse-mode differentiation over [`DenseMatrix`] values.
//!
//! Every operation evaluates eagerly and appends a node holding its value
//! and the operands it read. Because a node can only reference nodes that
//! already exist, the tape is in topological order by construction and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Shapes never broadcast. Binary elementwise operations require identical
//! shapes and reductions always produce a `1x1` matrix.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation kinds accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Exp,
    Scale(f64),
}

/// Row replacement applied by [`Tape::replace_rows_with_mean`]: `row` takes
/// the mean of the `sources` rows of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMean {
    pub row: usize,
    pub sources: Vec<usize>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Exp(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SelectRows(Var, Arc<[usize]>),
    ReplaceRowsWithMean(Var, Arc<[RowMean]>),
    CrossEntropy {
        logits: Var,
        targets: Arc<[(usize, usize)]>,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients of a scalar with respect to every parameter on the tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: HashMap<Var, DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<DenseMatrix> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
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

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    /// Records a constant that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push(v);
        v
    }

    fn push(&mut self, value: DenseMatrix, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            Op::SpMM(_, a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SelectRows(a, _)
            | Op::ReplaceRowsWithMean(a, _) => self.nodes[a.0].requires_grad,
            Op::CrossEntropy { logits, .. } => self.nodes[logits.0].requires_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    /// Sparse-times-dense product; the sparse factor is a constant.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, b: Var) -> Result<Var> {
        let value = s.spmm(self.value(b))?;
        self.push(value, Op::SpMM(Arc::clone(s), b), "spmm")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a), "relu")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        self.push(value, Op::Mul(a, b), "mul")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a), "exp")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), "scale")
    }

    /// Adds the same constant to every entry.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a), "add_scalar")
    }

    /// Dispatches on [`Elementwise`]; `b` is required for the binary kinds.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need = |b: Option<Var>| {
            b.ok_or_else(|| Error::contract("binary elementwise operation needs two operands"))
        };
        match kind {
            Elementwise::Add => self.add(a, need(b)?),
            Elementwise::Sub => self.sub(a, need(b)?),
            Elementwise::Mul => self.mul(a, need(b)?),
            Elementwise::Exp => self.exp(a),
            Elementwise::Scale(s) => self.scale(a, s),
        }
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = DenseMatrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let value = DenseMatrix::filled(1, 1, self.value(a).mean());
        self.push(value, Op::Mean(a), "mean")
    }

    /// Gathers rows (duplicates allowed) into a new matrix.
    pub fn select_rows(&mut self, a: Var, rows: impl Into<Arc<[usize]>>) -> Result<Var> {
        let rows = rows.into();
        let value = self.value(a).select_rows(&rows)?;
        self.push(value, Op::SelectRows(a, rows), "select_rows")
    }

    /// Overwrites each listed row with the mean of its source rows, all read
    /// from the input (so replaced rows never feed one another). Entries
    /// with no sources are ignored.
    pub fn replace_rows_with_mean(&mut self, a: Var, plan: impl Into<Arc<[RowMean]>>) -> Result<Var> {
        let plan = plan.into();
        let input = self.value(a);
        let mut value = input.clone();
        let mut seen = vec![false; input.rows()];
        for entry in plan.iter() {
            if entry.row >= input.rows() || entry.sources.iter().any(|&s| s >= input.rows()) {
                return Err(Error::dim("replace_rows_with_mean", "row index out of range"));
            }
            if std::mem::replace(&mut seen[entry.row], true) {
                return Err(Error::contract(format!(
                    "row {} replaced more than once",
                    entry.row
                )));
            }
            if entry.sources.is_empty() {
                continue;
            }
            let w = 1.0 / entry.sources.len() as f64;
            let out = value.row_mut(entry.row);
            out.fill(0.0);
            for &s in &entry.sources {
                for (o, &x) in out.iter_mut().zip(input.row(s)) {
                    *o += x;
                }
            }
            for o in out.iter_mut() {
                *o *= w;
            }
        }
        self.push(value, Op::ReplaceRowsWithMean(a, plan), "replace_rows_with_mean")
    }

    /// Mean negative log-likelihood of `targets` (row, class) under the
    /// row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: impl Into<Arc<[(usize, usize)]>>) -> Result<Var> {
        let targets = targets.into();
        if targets.is_empty() {
            return Err(Error::contract("cross entropy over an empty node set"));
        }
        let l = self.value(logits);
        let mut total = 0.0;
        for &(row, class) in targets.iter() {
            if row >= l.rows() || class >= l.cols() {
                return Err(Error::dim(
                    "cross_entropy",
                    format!("target ({row}, {class}) outside {}x{}", l.rows(), l.cols()),
                ));
            }
            total -= log_softmax_at(l.row(row), class);
        }
        let value = DenseMatrix::filled(1, 1, total / targets.len() as f64);
        self.push(value, Op::CrossEntropy { logits, targets }, "cross_entropy")
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    /// Parameters the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }

        let mut out = Gradients::default();
        for &p in &self.params {
            let g = grads
                .get_mut(p.0)
                .and_then(Option::take)
                .unwrap_or_else(|| {
                    let (r, c) = self.value(p).shape();
                    DenseMatrix::zeros(r, c)
                });
            out.grads.insert(p, g);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.matmul_t(self.value(*b))?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, self.value(*a).t_matmul(g)?)?;
                }
            }
            Op::SpMM(s, b) => {
                if wants(*b) {
                    accumulate(grads, *b, s.spmm_transpose(g)?)?;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g.zip_with(x, "relu_backward", |g, x| if x > 0.0 { g } else { 0.0 })?;
                accumulate(grads, *a, d)?;
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.scale(-1.0))?;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Exp(a) => accumulate(grads, *a, g.hadamard(&node.value)?)?,
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::AddScalar(a) => accumulate(grads, *a, g.clone())?,
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(grads, *a, DenseMatrix::filled(r, c, g.data()[0]))?;
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let w = g.data()[0] / (r * c) as f64;
                accumulate(grads, *a, DenseMatrix::filled(r, c, w))?;
            }
            Op::SelectRows(a, rows) => {
                let (r, c) = self.value(*a).shape();
                let mut d = DenseMatrix::zeros(r, c);
                for (k, &row) in rows.iter().enumerate() {
                    for (o, &x) in d.row_mut(row).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::ReplaceRowsWithMean(a, plan) => {
                let mut d = g.clone();
                for entry in plan.iter().filter(|e| !e.sources.is_empty()) {
                    d.row_mut(entry.row).fill(0.0);
                }
                for entry in plan.iter().filter(|e| !e.sources.is_empty()) {
                    let w = 1.0 / entry.sources.len() as f64;
                    for &s in &entry.sources {
                        for j in 0..g.cols() {
                            let v = d.get(s, j) + w * g.get(entry.row, j);
                            d.set(s, j, v);
                        }
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::CrossEntropy { logits, targets } => {
                let l = self.value(*logits);
                let mut d = DenseMatrix::zeros(l.rows(), l.cols());
                let w = g.data()[0] / targets.len() as f64;
                for &(row, class) in targets.iter() {
                    let p = softmax(l.row(row));
                    let out = d.row_mut(row);
                    for (k, (o, pk)) in out.iter_mut().zip(p).enumerate() {
                        let y = if k == class { 1.0 } else { 0.0 };
                        *o += w * (pk - y);
                    }
                }
                accumulate(grads, *logits, d)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, d: DenseMatrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

/// `log softmax(row)[k]` with max subtraction.
fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    row[k] - lse
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
