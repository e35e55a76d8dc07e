//! Reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and the
//! information needed to push gradients back to its inputs. Nodes are
//! appended in evaluation order, so walking the node list backwards is a
//! valid topological order for the backward pass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{gemm_nt_acc, gemm_tn_acc, SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Tape::custom_unary`]: `(input, output, grad_output) -> grad_input`.
pub type BackwardFn = Box<dyn Fn(&Tensor, &Tensor, &Tensor) -> Tensor>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    RowSoftmax(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    LayerNorm(Var, Vec<f64>),
    L2NormalizeRows(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SpMM(Arc<SparseMatrix>, Var),
    Custom(Var, BackwardFn),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip_map preserves shape")
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient, `None` if nothing reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Div(a, b), rg))
    }

    /// `a (n×c) + row (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut value = ta.clone();
        let r = tr.data().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// `a (n×c) ⊙ row (1×c)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("mul_row", ta, tr));
        }
        let mut value = ta.clone();
        let r = tr.data().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v *= b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    /// `a (n×c) ⊙ col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("mul_col", ta, tc));
        }
        let mut value = ta.clone();
        for i in 0..value.rows() {
            let s = tc.get(i, 0);
            value.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(value, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Concatenates along the last (column) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Shape {
            op: "concat",
            lhs: [0, 0],
            rhs: [0, 0],
        })?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start > end || end > ta.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: ta.shape(),
                rhs: [start, end],
            });
        }
        let value = Tensor::from_fn(ta.rows(), end - start, |i, j| ta.get(i, start + j));
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Ln(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    /// Normalizes each row to zero mean and unit (population) variance.
    /// Gain and bias are applied separately with [`Tape::mul`]/[`Tape::add_row`].
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols() as f64;
        let mut inv_std = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let rg = self.rg(a);
        self.push(value, Op::LayerNorm(a, inv_std), rg)
    }

    /// Scales each row to unit L2 norm. All-zero rows pass through as zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            norms.push(norm);
        }
        let rg = self.rg(a);
        self.push(value, Op::L2NormalizeRows(a, norms), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Per-row sums as an `n × 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::column((0..t.rows()).map(|i| t.row(i).iter().sum()).collect());
        let rg = self.rg(a);
        self.push(value, Op::SumRows(a), rg)
    }

    /// Product of a constant sparse operator with `x`.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if s.cols() != tx.rows() {
            return Err(Error::Shape {
                op: "spmm",
                lhs: [s.rows(), s.cols()],
                rhs: tx.shape(),
            });
        }
        let value = s.mul_dense(tx);
        let rg = self.rg(x);
        Ok(self.push(value, Op::SpMM(s, x), rg))
    }

    /// Elementwise op with caller-supplied forward and backward rules.
    pub fn custom_unary(&mut self, a: Var, forward: impl Fn(f64) -> f64, backward: BackwardFn) -> Var {
        let value = self.value(a).map(forward);
        let rg = self.rg(a);
        self.push(value, Op::Custom(a, backward), rg)
    }

    /// Clears every accumulated gradient so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Propagates `∂loss/∂·` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        self.value(loss).item()?;
        self.backward_done = true;
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, t) in contributions {
                self.accumulate(v, t);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, t: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    gemm_nt_acc(g, tb, &mut ga);
                    res.push((*a, ga));
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    gemm_tn_acc(ta, g, &mut gb);
                    res.push((*b, gb));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                res.push((*a, zip_map(g, val(*b), |x, y| x * y)));
                res.push((*b, zip_map(g, val(*a), |x, y| x * y)));
            }
            Op::Div(a, b) => {
                let tb = val(*b);
                res.push((*a, zip_map(g, tb, |x, y| x / y)));
                let gb = zip_map(&zip_map(g, out, |x, y| x * y), tb, |x, y| -x / y);
                res.push((*b, gb));
            }
            Op::AddRow(a, r) => {
                res.push((*a, g.clone()));
                let mut gr = Tensor::zeros(1, g.cols());
                for k in 0..g.rows() {
                    for (acc, v) in gr.data_mut().iter_mut().zip(g.row(k)) {
                        *acc += v;
                    }
                }
                res.push((*r, gr));
            }
            Op::MulRow(a, r) => {
                let (ta, tr) = (val(*a), val(*r));
                let mut ga = g.clone();
                let mut gr = Tensor::zeros(1, g.cols());
                for k in 0..g.rows() {
                    for (c, gv) in ga.row_mut(k).iter_mut().enumerate() {
                        gr.data_mut()[c] += *gv * ta.get(k, c);
                        *gv *= tr.data()[c];
                    }
                }
                res.push((*a, ga));
                res.push((*r, gr));
            }
            Op::MulCol(a, c) => {
                let (ta, tc) = (val(*a), val(*c));
                let mut ga = g.clone();
                let mut gc = Tensor::zeros(tc.rows(), 1);
                for k in 0..g.rows() {
                    let s = tc.get(k, 0);
                    gc.set(k, 0, g.row(k).iter().zip(ta.row(k)).map(|(x, y)| x * y).sum());
                    ga.row_mut(k).iter_mut().for_each(|v| *v *= s);
                }
                res.push((*a, ga));
                res.push((*c, gc));
            }
            Op::Scale(a, f) => res.push((*a, g.map(|v| v * f))),
            Op::AddScalar(a) => res.push((*a, g.clone())),
            Op::Transpose(a) => res.push((*a, g.transpose())),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    res.push((p, Tensor::from_fn(g.rows(), w, |r, c| g.get(r, offset + c))));
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                res.push((*a, ga));
            }
            Op::RowSoftmax(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for (k, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = y[k] * (gy[k] - dot);
                    }
                }
                res.push((*a, ga));
            }
            Op::Sigmoid(a) => res.push((*a, zip_map(g, out, |x, y| x * y * (1.0 - y)))),
            Op::Relu(a) => res.push((*a, zip_map(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 }))),
            Op::Exp(a) => res.push((*a, zip_map(g, out, |x, y| x * y))),
            Op::Ln(a) => res.push((*a, zip_map(g, val(*a), |x, y| x / y))),
            Op::Square(a) => res.push((*a, zip_map(g, val(*a), |x, y| 2.0 * x * y))),
            Op::LayerNorm(a, inv_std) => {
                let cols = out.cols() as f64;
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let mean_g = gy.iter().sum::<f64>() / cols;
                    let mean_gy = gy.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / cols;
                    for (k, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = inv_std[r] * (gy[k] - mean_g - y[k] * mean_gy);
                    }
                }
                res.push((*a, ga));
            }
            Op::L2NormalizeRows(a, norms) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    if norms[r] == 0.0 {
                        continue;
                    }
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for (k, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = (gy[k] - y[k] * dot) / norms[r];
                    }
                }
                res.push((*a, ga));
            }
            Op::Sum(a) => {
                let ta = val(*a);
                res.push((*a, Tensor::full(ta.rows(), ta.cols(), g.data()[0])));
            }
            Op::Mean(a) => {
                let ta = val(*a);
                res.push((*a, Tensor::full(ta.rows(), ta.cols(), g.data()[0] / ta.len() as f64)));
            }
            Op::SumRows(a) => {
                let ta = val(*a);
                res.push((*a, Tensor::from_fn(ta.rows(), ta.cols(), |r, _| g.get(r, 0))));
            }
            Op::SpMM(s, x) => {
                let tx = val(*x);
                let mut gx = Tensor::zeros(tx.rows(), tx.cols());
                s.mul_transpose_acc(g, &mut gx);
                res.push((*x, gx));
            }
            Op::Custom(a, backward) => res.push((*a, backward(val(*a), out, g))),
        }
        res.retain(|(v, _)| self.rg(*v));
        res
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
