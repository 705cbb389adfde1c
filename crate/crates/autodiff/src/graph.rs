//! Computation tape and reverse-mode backward pass.
//!
//! Every op appends a node holding its forward value and the inputs it was
//! computed from. Nodes are stored in creation order, which is already a
//! topological order, so `backward` is a single reverse sweep.

use std::f64::consts::{LN_2, PI};

use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Gather { x: Var, idx: Vec<usize> },
    Clamp { x: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    NormalLogProb { mu: Var, sigma: Var, x: Var },
    TanhLogDet(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// A single-owner computation tape.
///
/// A graph binds parameters from at most one [`ParamSet`]; repeated
/// [`Graph::param`] calls for the same id return the same node, so shared
/// weights (an LSTM unrolled over time) accumulate into one gradient.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    bindings: Vec<(Var, ParamId)>,
}

fn numerically_stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(AutodiffError::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(Some(v)) = self.bound.get(id.index()) {
            return *v;
        }
        let v = self.push(params.value(id).clone(), Op::Leaf, true);
        if self.bound.len() <= id.index() {
            self.bound.resize(id.index() + 1, None);
        }
        self.bound[id.index()] = Some(v);
        self.bindings.push((v, id));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// `x + b` with the `1 x n` bias broadcast over every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(AutodiffError::Shape(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % cols];
        }
        let tracked = self.tracked(x) || self.tracked(b);
        Ok(self.push(out, Op::AddRowBias(x, b), tracked))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let value = self.value(a).zip_map(self.value(b), f);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let tracked = self.tracked(x);
        self.push(value, op, tracked)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, numerically_stable_sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let tracked = self.tracked(x);
        self.push(value, Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        let tracked = self.tracked(x);
        self.push(value, Op::Mean(x), tracked)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(AutodiffError::Shape(format!(
                "columns {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let mut out = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let value = Tensor::new(xv.rows(), len, out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::SliceCols { x, start }, tracked))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| AutodiffError::Shape("concat of zero tensors".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(AutodiffError::Shape(format!(
                    "concat_rows: {cols} vs {} columns",
                    pv.cols()
                )));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let tracked = self.tracked(x);
        self.push(value, Op::Transpose(x), tracked)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let cols = xv.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let tracked = self.tracked(x);
        self.push(out, Op::SoftmaxRows(x), tracked)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let cols = xv.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let tracked = self.tracked(x);
        self.push(out, Op::LogSoftmaxRows(x), tracked)
    }

    /// Picks column `idx[r]` from every row `r`, giving an `m x 1` column.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if idx.len() != xv.rows() || idx.iter().any(|&c| c >= xv.cols()) {
            return Err(AutodiffError::Shape(format!(
                "gather of {} indices from {:?}",
                idx.len(),
                xv.shape()
            )));
        }
        let picked = idx.iter().enumerate().map(|(r, &c)| xv.get(r, c)).collect();
        let value = Tensor::column(picked);
        let tracked = self.tracked(x);
        Ok(self.push(
            value,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            tracked,
        ))
    }

    /// Elementwise `log N(x; mu, sigma)`.
    pub fn normal_log_prob(&mut self, mu: Var, sigma: Var, x: Var) -> Result<Var> {
        let (m, s, a) = (self.value(mu), self.value(sigma), self.value(x));
        same_shape(m, s, "normal_log_prob mu/sigma")?;
        same_shape(m, a, "normal_log_prob mu/x")?;
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        let data = m
            .data()
            .iter()
            .zip(s.data())
            .zip(a.data())
            .map(|((&m, &s), &a)| {
                let z = (a - m) / s;
                -half_ln_2pi - s.ln() - 0.5 * z * z
            })
            .collect();
        let value = Tensor::new(m.rows(), m.cols(), data)?;
        let tracked = self.tracked(mu) || self.tracked(sigma) || self.tracked(x);
        Ok(self.push(value, Op::NormalLogProb { mu, sigma, x }, tracked))
    }

    /// Elementwise `ln(1 - tanh(u)^2)`, the log-Jacobian of `tanh`.
    pub fn tanh_log_det(&mut self, u: Var) -> Var {
        self.unary(
            u,
            |u| 2.0 * (LN_2 - u - softplus(-2.0 * u)),
            Op::TanhLogDet(u),
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(AutodiffError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
        }

        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    let ga = gy.matmul_t(self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*b) {
                    let gb = self.value(*a).t_matmul(gy);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(grads, *x, gy.clone());
                if self.tracked(*b) {
                    let cols = gy.cols();
                    let mut gb = vec![0.0; cols];
                    for (i, v) in gy.data().iter().enumerate() {
                        gb[i % cols] += v;
                    }
                    self.accumulate(grads, *b, Tensor::row(gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    self.accumulate(grads, *a, gy.zip_map(bv, |g, b| g * b));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, gy.zip_map(av, |g, a| g * a));
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let take_a = av.zip_map(bv, |a, b| if a <= b { 1.0 } else { 0.0 });
                self.accumulate(grads, *a, gy.zip_map(&take_a, |g, m| g * m));
                self.accumulate(grads, *b, gy.zip_map(&take_a, |g, m| g * (1.0 - m)));
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, gy.map(|g| g * c));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, gy.clone()),
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    gy.zip_map(xv, |g, x| if x > 0.0 { g } else { 0.0 }),
                );
            }
            Op::Tanh(x) => self.accumulate(grads, *x, gy.zip_map(y, |g, t| g * (1.0 - t * t))),
            Op::Sigmoid(x) => self.accumulate(grads, *x, gy.zip_map(y, |g, s| g * s * (1.0 - s))),
            Op::Softplus(x) => {
                let xv = self.value(*x);
                self.accumulate(
                    grads,
                    *x,
                    gy.zip_map(xv, |g, x| g * numerically_stable_sigmoid(x)),
                );
            }
            Op::Exp(x) => self.accumulate(grads, *x, gy.zip_map(y, |g, e| g * e)),
            Op::Log(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, gy.zip_map(xv, |g, x| g / x));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let (lo, hi) = (*lo, *hi);
                self.accumulate(
                    grads,
                    *x,
                    gy.zip_map(xv, |g, x| if x >= lo && x <= hi { g } else { 0.0 }),
                );
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::filled(xv.rows(), xv.cols(), gy.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let g = gy.item() / xv.len() as f64;
                self.accumulate(grads, *x, Tensor::filled(xv.rows(), xv.cols(), g));
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                let (len, cols) = (gy.cols(), xv.cols());
                for r in 0..gy.rows() {
                    gx.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(gy.row_slice(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let cols = gy.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.tracked(p) {
                        let slice = gy.data()[offset * cols..(offset + rows) * cols].to_vec();
                        self.accumulate(grads, p, Tensor::new(rows, cols, slice).expect("shape"));
                    }
                    offset += rows;
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, gy.transpose()),
            Op::SoftmaxRows(x) => {
                let cols = y.cols();
                let mut gx = gy.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for (g, &y) in gr.iter_mut().zip(yr) {
                        *g = y * (*g - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmaxRows(x) => {
                let cols = y.cols();
                let mut gx = gy.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let total: f64 = gr.iter().sum();
                    for (g, &ly) in gr.iter_mut().zip(yr) {
                        *g -= ly.exp() * total;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Gather { x, idx } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                let cols = xv.cols();
                for (r, &c) in idx.iter().enumerate() {
                    gx.data_mut()[r * cols + c] += gy.data()[r];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::NormalLogProb { mu, sigma, x } => {
                let (m, s, a) = (self.value(*mu), self.value(*sigma), self.value(*x));
                let n = m.len();
                let mut gmu = Vec::with_capacity(n);
                let mut gsig = Vec::with_capacity(n);
                for i in 0..n {
                    let (m, s, a, g) = (m.data()[i], s.data()[i], a.data()[i], gy.data()[i]);
                    let d = a - m;
                    gmu.push(g * d / (s * s));
                    gsig.push(g * (-1.0 / s + d * d / (s * s * s)));
                }
                let (rows, cols) = (m.rows(), m.cols());
                let gx: Vec<f64> = gmu.iter().map(|v| -v).collect();
                self.accumulate(grads, *mu, Tensor::new(rows, cols, gmu).expect("shape"));
                self.accumulate(grads, *sigma, Tensor::new(rows, cols, gsig).expect("shape"));
                self.accumulate(grads, *x, Tensor::new(rows, cols, gx).expect("shape"));
            }
            Op::TanhLogDet(u) => {
                let uv = self.value(*u);
                self.accumulate(grads, *u, gy.zip_map(uv, |g, u| -2.0 * g * u.tanh()));
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(Var, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a tracked leaf, if it was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every bound parameter's gradient into `params`.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for &(v, id) in &self.bindings {
            if let Some(g) = self.get(v) {
                params.grad_mut(id).add_assign(g);
            }
        }
    }
}
