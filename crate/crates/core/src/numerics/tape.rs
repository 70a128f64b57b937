//! Tape-based reverse-mode differentiation over [`RealArray`] values.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. [`Tape::backward`] walks the nodes in reverse recording order
//! and returns a [`Gradients`] table keyed by node, from which parameter
//! gradients are accumulated into their [`Parameter`]s.
//!
//! Higher-order terms (the critic input-gradient used by the gradient
//! penalty) are built explicitly out of first-order nodes, so the tape never
//! needs to differentiate through its own backward pass.

use std::collections::HashMap;

use super::array::RealArray;
use super::param::{ParamId, Parameter};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    RowNorm(Var),
    NormalizeRows(Var),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    SliceCols(Var, usize),
    Transpose(Var),
    LogSumExpRows(Var, Option<Vec<bool>>),
    GatherCols(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: RealArray,
    op: Op,
}

/// Records a forward computation for one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dim_err(op: &'static str, a: &RealArray, b: &RealArray) -> Error {
    Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
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

    fn push(&mut self, value: RealArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    /// Inserts an input. Gradients are still computed for it and can be read
    /// back through [`Gradients::wrt`].
    pub fn constant(&mut self, value: RealArray) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Inserts a parameter. Repeated calls with the same parameter return the
    /// same node so that every use contributes to one gradient.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.push(p.value.clone(), Op::Leaf);
        self.params.insert(p.id(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.matmul(bv)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(dim_err("matmul_t", av, bv));
        }
        let out = av.matmul_t(bv);
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    /// Adds a `1 x m` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(dim_err("add_row", xv, rv));
        }
        let mut out = xv.clone();
        let r = rv.as_slice().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: &Parameter, b: &Parameter) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), w.shape());
        if xs.1 != ws.0 || b.shape() != (1, ws.1) {
            return Err(Error::Dimension {
                op: "linear",
                left: xs,
                right: ws,
            });
        }
        let wv = self.param(w);
        let bv = self.param(b);
        let h = self.matmul(x, wv)?;
        self.add_row(h, bv)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Scales row `i` of `x` by `col[i]`, where `col` is `n x 1`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.shape() != (xv.rows(), 1) {
            return Err(dim_err("mul_col", xv, cv));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let c = cv.get(i, 0);
            out.row_mut(i).iter_mut().for_each(|v| *v *= c);
        }
        Ok(self.push(out, Op::MulCol(x, col)))
    }

    /// Multiplies every row of `x` elementwise by the `1 x m` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.shape() != (1, xv.cols()) {
            return Err(dim_err("mul_row", xv, rv));
        }
        let r = rv.as_slice().to_vec();
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, s) in out.row_mut(i).iter_mut().zip(&r) {
                *o *= s;
            }
        }
        Ok(self.push(out, Op::MulRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        self.push(out, Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(x, lo, hi))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = RealArray::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            softmax_row(xv.row(i), out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for i in 0..xv.rows() {
            let row = out.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = RealArray::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = RealArray::scalar(self.value(x).mean());
        self.push(out, Op::MeanAll(x))
    }

    /// Per-row sum, `n x 1`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|i| xv.row(i).iter().sum()).collect();
        let out = RealArray::from_vec(xv.rows(), 1, data);
        self.push(out, Op::RowSum(x))
    }

    /// Per-row Euclidean norm, `n x 1`. The gradient at a zero row is taken
    /// to be zero.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|i| RealArray::norm(xv.row(i))).collect();
        let out = RealArray::from_vec(xv.rows(), 1, data);
        self.push(out, Op::RowNorm(x))
    }

    /// Scales every row to unit norm. Rows must be nonzero.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        for i in 0..xv.rows() {
            let n = RealArray::norm(xv.row(i));
            if n == 0.0 {
                return Err(Error::ZeroVector);
            }
            out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        Ok(self.push(out, Op::NormalizeRows(x)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = RealArray::hstack(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = RealArray::vstack(&[self.value(a), self.value(b)])?;
        Ok(self.push(out, Op::ConcatRows(a, b)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(Error::contract(format!(
                "column slice {start}..{end} out of range for {:?}",
                xv.shape()
            )));
        }
        let out = xv.slice_cols(start, end);
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    /// Per-row log-sum-exp, `n x 1`. With a mask, only entries marked `true`
    /// take part; every row must keep at least one entry.
    pub fn log_sum_exp_rows(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = &mask {
            if m.len() != xv.len() {
                return Err(Error::contract("log_sum_exp mask length differs from input"));
            }
        }
        let mut data = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m[i * xv.cols() + j]);
            let row = xv.row(i);
            let max = (0..row.len())
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::contract("log_sum_exp over an empty row"));
            }
            let s: f64 = (0..row.len())
                .filter(|&j| keep(j))
                .map(|j| (row[j] - max).exp())
                .sum();
            data.push(max + s.ln());
        }
        let out = RealArray::from_vec(xv.rows(), 1, data);
        Ok(self.push(out, Op::LogSumExpRows(x, mask)))
    }

    /// Picks `x[i, idx[i]]` for every row, `n x 1`.
    pub fn gather_cols(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if idx.len() != xv.rows() || idx.iter().any(|&j| j >= xv.cols()) {
            return Err(Error::contract(format!(
                "gather index out of range for shape {:?}",
                xv.shape()
            )));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| xv.get(i, j)).collect();
        let out = RealArray::from_vec(xv.rows(), 1, data);
        Ok(self.push(out, Op::GatherCols(x, idx)))
    }

    /// Reverse pass from a scalar node. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<RealArray>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(RealArray::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let val = |v: Var| &self.nodes[v.0].value;
            let mut acc = |v: Var, d: RealArray| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_t(val(*b)));
                    acc(*b, val(*a).t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.matmul_unchecked(val(*b)));
                    acc(*b, g.t_matmul(val(*a)));
                }
                Op::AddRow(x, r) => {
                    let mut gr = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (s, v) in gr.iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    acc(*r, RealArray::from_vec(1, g.cols(), gr));
                    acc(*x, g.clone());
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
                Op::MulCol(x, c) => {
                    let (xv, cv) = (val(*x), val(*c));
                    let mut gx = g.clone();
                    let mut gc = Vec::with_capacity(g.rows());
                    for i in 0..g.rows() {
                        let ci = cv.get(i, 0);
                        gc.push(RealArray::dot(g.row(i), xv.row(i)));
                        gx.row_mut(i).iter_mut().for_each(|v| *v *= ci);
                    }
                    acc(*x, gx);
                    acc(*c, RealArray::from_vec(g.rows(), 1, gc));
                }
                Op::MulRow(x, r) => {
                    let (xv, rv) = (val(*x), val(*r));
                    let mut gx = g.clone();
                    let mut gr = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (j, v) in gx.row_mut(i).iter_mut().enumerate() {
                            gr[j] += *v * xv.get(i, j);
                            *v *= rv.get(0, j);
                        }
                    }
                    acc(*x, gx);
                    acc(*r, RealArray::from_vec(1, g.cols(), gr));
                }
                Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
                Op::AddScalar(x) => acc(*x, g),
                Op::Relu(x) => acc(*x, g.zip_map(val(*x), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::LeakyRelu(x, s) => acc(
                    *x,
                    g.zip_map(val(*x), |g, x| if x > 0.0 { g } else { s * g }),
                ),
                Op::Sigmoid(x) => acc(*x, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))),
                Op::Exp(x) => acc(*x, g.zip_map(&node.value, |g, y| g * y)),
                Op::Ln(x) => acc(*x, g.zip_map(val(*x), |g, x| g / x)),
                Op::Square(x) => acc(*x, g.zip_map(val(*x), |g, x| 2.0 * g * x)),
                Op::Clamp(x, lo, hi) => acc(
                    *x,
                    g.zip_map(val(*x), |g, x| if x < *lo || x > *hi { 0.0 } else { g }),
                ),
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for i in 0..g.rows() {
                        let dot = RealArray::dot(g.row(i), y.row(i));
                        for (j, v) in gx.row_mut(i).iter_mut().enumerate() {
                            *v = y.get(i, j) * (*v - dot);
                        }
                    }
                    acc(*x, gx);
                }
                Op::LogSoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for i in 0..g.rows() {
                        let s: f64 = g.row(i).iter().sum();
                        for (j, v) in gx.row_mut(i).iter_mut().enumerate() {
                            *v -= y.get(i, j).exp() * s;
                        }
                    }
                    acc(*x, gx);
                }
                Op::SumAll(x) => {
                    let (r, c) = val(*x).shape();
                    acc(*x, RealArray::full(r, c, g.as_slice()[0]));
                }
                Op::MeanAll(x) => {
                    let (r, c) = val(*x).shape();
                    let n = (r * c).max(1) as f64;
                    acc(*x, RealArray::full(r, c, g.as_slice()[0] / n));
                }
                Op::RowSum(x) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = RealArray::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0);
                        gx.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    acc(*x, gx);
                }
                Op::RowNorm(x) => {
                    let xv = val(*x);
                    let mut gx = RealArray::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.rows() {
                        let n = node.value.get(i, 0);
                        if n > 0.0 {
                            let s = g.get(i, 0) / n;
                            for (o, &xi) in gx.row_mut(i).iter_mut().zip(xv.row(i)) {
                                *o = s * xi;
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::NormalizeRows(x) => {
                    let xv = val(*x);
                    let y = &node.value;
                    let mut gx = g.clone();
                    for i in 0..xv.rows() {
                        let n = RealArray::norm(xv.row(i));
                        let dot = RealArray::dot(g.row(i), y.row(i));
                        for (j, v) in gx.row_mut(i).iter_mut().enumerate() {
                            *v = (*v - y.get(i, j) * dot) / n;
                        }
                    }
                    acc(*x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = val(*a).cols();
                    acc(*a, g.slice_cols(0, ca));
                    acc(*b, g.slice_cols(ca, g.cols()));
                }
                Op::ConcatRows(a, b) => {
                    let ra = val(*a).rows();
                    let split = ra * g.cols();
                    let gs = g.as_slice();
                    acc(*a, RealArray::from_vec(ra, g.cols(), gs[..split].to_vec()));
                    acc(
                        *b,
                        RealArray::from_vec(g.rows() - ra, g.cols(), gs[split..].to_vec()),
                    );
                }
                Op::SliceCols(x, start) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = RealArray::zeros(r, c);
                    for i in 0..r {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(*x, gx);
                }
                Op::Transpose(x) => acc(*x, g.transpose()),
                Op::LogSumExpRows(x, mask) => {
                    let xv = val(*x);
                    let cols = xv.cols();
                    let mut gx = RealArray::zeros(xv.rows(), cols);
                    for i in 0..xv.rows() {
                        let lse = node.value.get(i, 0);
                        let gi = g.get(i, 0);
                        for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                            if mask.as_ref().is_none_or(|m| m[i * cols + j]) {
                                *o = gi * (xv.get(i, j) - lse).exp();
                            }
                        }
                    }
                    acc(*x, gx);
                }
                Op::GatherCols(x, idx) => {
                    let (r, c) = val(*x).shape();
                    let mut gx = RealArray::zeros(r, c);
                    for (i, &j) in idx.iter().enumerate() {
                        gx.set(i, j, g.get(i, 0));
                    }
                    acc(*x, gx);
                }
            }
        }

        Ok(Gradients {
            grads,
            params: self.params,
            loss_value: self.nodes[loss.0].value.as_slice()[0],
        })
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<RealArray>>,
    params: HashMap<ParamId, Var>,
    loss_value: f64,
}

impl Gradients {
    /// Gradient with respect to a leaf (constant or parameter) node. Interior
    /// node gradients are released during the pass and report `None`.
    pub fn wrt(&self, v: Var) -> Option<&RealArray> {
        self.grads[v.0].as_ref()
    }

    pub fn param(&self, p: &Parameter) -> Option<&RealArray> {
        self.params.get(&p.id()).and_then(|&v| self.wrt(v))
    }

    pub fn loss(&self) -> f64 {
        self.loss_value
    }

    /// Adds the gradient of every listed parameter that appeared on the tape
    /// into its `grad` buffer.
    pub fn accumulate_into<'a, I>(&self, params: I)
    where
        I: IntoIterator<Item = &'a mut Parameter>,
    {
        for p in params {
            if let Some(g) = self.param(p) {
                p.grad.add_assign(g);
            }
        }
    }
}
