//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Nodes are appended in creation order, so the node list is already a
//! topological order. [`Tape::backward`] walks it in reverse and accumulates
//! vector-Jacobian products into the inputs of every node that needs a
//! gradient. The accumulation order is fixed, so gradients are bit-for-bit
//! reproducible.

use super::{Axis, Matrix, Rng};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Hadamard,
    Relu,
    Softmax,
    Scale,
    RowSum,
    RsqrtDiagScale,
    ClampMin,
    ConcatCols,
    SliceCols,
    ConcatRows,
    SliceRows,
    Reshape,
    Transpose,
    AddRowBroadcast,
    Dropout,
    CrossEntropy,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    Softmax(Var, Axis),
    Scale(Var, f64),
    RowSum(Var),
    RsqrtDiagScale(Var, Var),
    ClampMin(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    Transpose(Var),
    AddRowBroadcast(Var, Var),
    Dropout(Var, Matrix),
    CrossEntropy(Var, Vec<(usize, usize)>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Relu(..) => OpKind::Relu,
            Op::Softmax(..) => OpKind::Softmax,
            Op::Scale(..) => OpKind::Scale,
            Op::RowSum(..) => OpKind::RowSum,
            Op::RsqrtDiagScale(..) => OpKind::RsqrtDiagScale,
            Op::ClampMin(..) => OpKind::ClampMin,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Transpose(..) => OpKind::Transpose,
            Op::AddRowBroadcast(..) => OpKind::AddRowBroadcast,
            Op::Dropout(..) => OpKind::Dropout,
            Op::CrossEntropy(..) => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Probability floor inside the cross-entropy logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// A recording of matrix operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<(OpKind, f64)>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; all zeros when `v` does not
    /// influence the loss or is a constant.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scales every backward contribution of `kind` by `factor`. Used only to
    /// show that the gradient check catches a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {:?} at node {}",
                op.kind(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn grad_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: Matrix) -> Result<Var> {
        self.push(Op::Leaf, m, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Result<Var> {
        self.push(Op::Leaf, m, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.grad_any(&[a, b]);
        self.push(Op::MatMul(a, b), value, g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let g = self.grad_any(&[a, b]);
        self.push(Op::Add(a, b), value, g)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let g = self.grad_any(&[a, b]);
        self.push(Op::Hadamard(a, b), value, g)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).relu();
        let g = self.grad_any(&[x]);
        self.push(Op::Relu(x), value, g)
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let value = self.value(x).softmax(axis);
        let g = self.grad_any(&[x]);
        self.push(Op::Softmax(x, axis), value, g)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let value = self.value(x).scale(k);
        let g = self.grad_any(&[x]);
        self.push(Op::Scale(x, k), value, g)
    }

    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).row_sums();
        let g = self.grad_any(&[x]);
        self.push(Op::RowSum(x), value, g)
    }

    /// `out[i][j] = m[i][j] / sqrt(d[i] · d[j])` for a square `m` and column
    /// vector `d` of positive entries: the `D^{-1/2} M D^{-1/2}` scaling.
    pub fn rsqrt_diag_scale(&mut self, m: Var, d: Var) -> Result<Var> {
        let mv = self.value(m);
        let dv = self.value(d);
        let n = mv.rows();
        if mv.cols() != n || dv.shape() != (n, 1) {
            return Err(Error::Shape(format!(
                "rsqrt_diag_scale: {}x{} with {}x{}",
                mv.rows(),
                mv.cols(),
                dv.rows(),
                dv.cols()
            )));
        }
        if let Some(bad) = dv.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Contract(format!(
                "rsqrt_diag_scale needs positive degrees, got {bad}"
            )));
        }
        let value = mv.sym_degree_scale(dv);
        let g = self.grad_any(&[m, d]);
        self.push(Op::RsqrtDiagScale(m, d), value, g)
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Result<Var> {
        let value = self.value(x).map(|v| if v > lo { v } else { lo });
        let g = self.grad_any(&[x]);
        self.push(Op::ClampMin(x, lo), value, g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&mats)?;
        let g = self.grad_any(parts);
        self.push(Op::ConcatCols(parts.to_vec()), value, g)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let value = self.value(x).slice_cols(start, width)?;
        let g = self.grad_any(&[x]);
        self.push(Op::SliceCols(x, start), value, g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&mats)?;
        let g = self.grad_any(parts);
        self.push(Op::ConcatRows(parts.to_vec()), value, g)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let value = self.value(x).slice_rows(start, count)?;
        let g = self.grad_any(&[x]);
        self.push(Op::SliceRows(x, start), value, g)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(x).reshape(rows, cols)?;
        let g = self.grad_any(&[x]);
        self.push(Op::Reshape(x), value, g)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose();
        let g = self.grad_any(&[x]);
        self.push(Op::Transpose(x), value, g)
    }

    /// Adds the `1 × m` row `bias` to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "add_row_broadcast: {}x{} with bias {}x{}",
                xv.rows(),
                xv.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let value = Matrix::from_fn(xv.rows(), xv.cols(), |r, c| xv.get(r, c) + bv.get(0, c));
        let g = self.grad_any(&[x, bias]);
        self.push(Op::AddRowBroadcast(x, bias), value, g)
    }

    /// Inverted dropout: each unit survives with probability `1 - p` and is
    /// scaled by `1 / (1 - p)`. With `p == 0` the input is returned as is.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        let (r, c) = self.value(x).shape();
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_fn(r, c, |_, _| if rng.uniform() >= p { keep } else { 0.0 });
        let value = self.value(x).hadamard(&mask)?;
        let g = self.grad_any(&[x]);
        self.push(Op::Dropout(x, mask), value, g)
    }

    /// Mean over `targets` of `-ln(max(probs[row][class], LOG_FLOOR))`.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[(usize, usize)]) -> Result<Var> {
        if targets.is_empty() {
            return Err(Error::Config("cross-entropy over an empty training mask".into()));
        }
        let p = self.value(probs);
        for &(r, c) in targets {
            if r >= p.rows() || c >= p.cols() {
                return Err(Error::Contract(format!(
                    "target ({r}, {c}) outside {}x{} probabilities",
                    p.rows(),
                    p.cols()
                )));
            }
        }
        let total: f64 = targets
            .iter()
            .map(|&(r, c)| -p.get(r, c).max(LOG_FLOOR).ln())
            .sum();
        let value = Matrix::filled(1, 1, total / targets.len() as f64);
        let g = self.grad_any(&[probs]);
        self.push(Op::CrossEntropy(probs, targets.to_vec()), value, g)
    }

    /// Sum of all entries as a `1 × 1` node (built from taped primitives).
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let rows = self.row_sum(x)?;
        let t = self.transpose(rows)?;
        self.row_sum(t)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::ones(1, 1));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.vjp(node, &g)?;
            let fault = match self.fault {
                Some((kind, f)) if kind == node.op.kind() => f,
                _ => 1.0,
            };
            for (input, mut contrib) in contributions {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                if fault != 1.0 {
                    contrib = contrib.scale(fault);
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            // Leaves keep their gradient; interior nodes were consumed above.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn vjp(&self, node: &Node, g: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let out = &node.value;
        let mut res = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.matmul_nt(self.value(*b))?));
                }
                if self.wants(*b) {
                    res.push((*b, self.value(*a).matmul_tn(g)?));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Hadamard(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.hadamard(self.value(*b))?));
                }
                if self.wants(*b) {
                    res.push((*b, g.hadamard(self.value(*a))?));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                res.push((*x, g.zip_with(xv, |gv, v| if v > 0.0 { gv } else { 0.0 })?));
            }
            Op::ClampMin(x, lo) => {
                let xv = self.value(*x);
                let lo = *lo;
                res.push((*x, g.zip_with(xv, |gv, v| if v > lo { gv } else { 0.0 })?));
            }
            Op::Softmax(x, axis) => {
                let dx = match axis {
                    Axis::Rows => softmax_rows_vjp(out, g),
                    Axis::Cols => softmax_rows_vjp(&out.transpose(), &g.transpose()).transpose(),
                };
                res.push((*x, dx));
            }
            Op::Scale(x, k) => res.push((*x, g.scale(*k))),
            Op::RowSum(x) => {
                let (r, c) = self.value(*x).shape();
                res.push((*x, Matrix::from_fn(r, c, |i, _| g.get(i, 0))));
            }
            Op::RsqrtDiagScale(m, d) => {
                let dv = self.value(*d);
                let n = out.rows();
                let r: Vec<f64> = dv.data().iter().map(|x| 1.0 / x.sqrt()).collect();
                if self.wants(*m) {
                    res.push((*m, Matrix::from_fn(n, n, |i, j| g.get(i, j) * r[i] * r[j])));
                }
                if self.wants(*d) {
                    let go = g.hadamard(out)?;
                    let row = go.row_sums();
                    let col = go.col_sums();
                    let dd = Matrix::from_fn(n, 1, |k, _| {
                        -0.5 / dv.get(k, 0) * (row.get(k, 0) + col.get(0, k))
                    });
                    res.push((*d, dd));
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        res.push((*p, g.slice_cols(start, w)?));
                    }
                    start += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.value(*x).shape();
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..g.cols() {
                        dx.set(i, start + j, g.get(i, j));
                    }
                }
                res.push((*x, dx));
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.value(*p).rows();
                    if self.wants(*p) {
                        res.push((*p, g.slice_rows(start, h)?));
                    }
                    start += h;
                }
            }
            Op::SliceRows(x, start) => {
                let (r, c) = self.value(*x).shape();
                let mut dx = Matrix::zeros(r, c);
                let off = start * c;
                dx.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                res.push((*x, dx));
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                res.push((*x, g.reshape(r, c)?));
            }
            Op::Transpose(x) => res.push((*x, g.transpose())),
            Op::AddRowBroadcast(x, b) => {
                res.push((*x, g.clone()));
                if self.wants(*b) {
                    res.push((*b, g.col_sums()));
                }
            }
            Op::Dropout(x, mask) => res.push((*x, g.hadamard(mask)?)),
            Op::CrossEntropy(p, targets) => {
                let pv = self.value(*p);
                let scale = g.get(0, 0) / targets.len() as f64;
                let mut dp = Matrix::zeros(pv.rows(), pv.cols());
                for &(r, c) in targets {
                    let v = pv.get(r, c);
                    if v > LOG_FLOOR {
                        dp.set(r, c, dp.get(r, c) - scale / v);
                    }
                }
                res.push((*p, dp));
            }
        }
        Ok(res)
    }
}

fn softmax_rows_vjp(y: &Matrix, g: &Matrix) -> Matrix {
    let (r, c) = y.shape();
    let mut dx = Matrix::zeros(r, c);
    for i in 0..r {
        let yr = y.row(i);
        let gr = g.row(i);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..c {
            dx.set(i, j, yr[j] * (gr[j] - dot));
        }
    }
    dx
}
