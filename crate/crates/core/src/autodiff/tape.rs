//! Reverse-mode differentiation over a flat tape of matrix primitives.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Tape::backward`] is a single reverse sweep.
//! Parameters are leaves bound by name; only names admitted by the tape's
//! trainable set receive gradients, and subgraphs that cannot reach a
//! trainable leaf are skipped entirely.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{matmul_t_unchecked, matmul_unchecked, t_matmul_unchecked, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    AddBias(Var, Var),
    MulCols(Var, Var),
    Gather { x: Var, index: Arc<Vec<usize>> },
    Slice { x: Var, r0: usize, c0: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    DiceLoss { pred: Var, target: Arc<Vec<f64>>, eps: f64 },
    MseLoss { x: Var, target: Matrix },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub by_name: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.by_name.get(name)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Adds `other` entrywise (missing entries are taken as zero).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (k, g) in &other.by_name {
            match self.by_name.get_mut(k) {
                Some(acc) => acc.add_assign_unchecked(g),
                None => {
                    self.by_name.insert(k.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.by_name.values_mut() {
            for v in g.as_mut_slice() {
                *v *= s;
            }
        }
    }
}

/// Which parameter names receive gradients.
#[derive(Debug, Clone, Copy)]
enum Trainable<'p> {
    All,
    Only(&'p BTreeSet<String>),
}

#[derive(Debug)]
pub struct Tape<'p> {
    nodes: Vec<Node>,
    trainable: Trainable<'p>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// Every bound parameter is trainable.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            trainable: Trainable::All,
        }
    }

    /// Only parameters whose names are in `names` are trainable.
    pub fn with_trainable(names: &'p BTreeSet<String>) -> Self {
        Self {
            nodes: Vec::new(),
            trainable: Trainable::Only(names),
        }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Input, value, false)
    }

    /// Named parameter leaf.
    pub fn param(&mut self, name: &str, value: &Matrix) -> Var {
        let trainable = match self.trainable {
            Trainable::All => true,
            Trainable::Only(set) => set.contains(name),
        };
        self.push(Op::Param(name.to_string()), value.clone(), trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    /// `a · bᵀ`; the row-batched linear map when `b` is a weight.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulT(a, b), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), value, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        let rg = self.rg(a);
        self.push(Op::Relu(a), value, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), value, rg)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let rg = self.rg(a);
        self.push(Op::SoftmaxRows(a), value, rg)
    }

    /// Row-wise normalization to zero mean, unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (t, d) = x.shape();
        let mut value = x.clone();
        let mut inv_std = Vec::with_capacity(t);
        for r in 0..t {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(Op::LayerNorm { x: a, inv_std }, value, rg)
    }

    /// Adds the column `b` (`m×1`) to every row of `x` (`t×m`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (t, m) = self.shape(x);
        if self.shape(b) != (m, 1) {
            return Err(Error::Shape(format!("add_bias: {t}x{m} with bias {:?}", self.shape(b))));
        }
        let mut value = self.value(x).clone();
        crate::adapters::layer::add_bias_rows(&mut value, self.value(b));
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Op::AddBias(x, b), value, rg))
    }

    /// Scales column `j` of `x` (`t×m`) by `g[j]` (`g: m×1`).
    pub fn mul_cols(&mut self, x: Var, g: Var) -> Result<Var> {
        let (t, m) = self.shape(x);
        if self.shape(g) != (m, 1) {
            return Err(Error::Shape(format!("mul_cols: {t}x{m} with gain {:?}", self.shape(g))));
        }
        let gain = self.value(g).as_slice().to_vec();
        let mut value = self.value(x).clone();
        for r in 0..t {
            for (v, gg) in value.row_mut(r).iter_mut().zip(&gain) {
                *v *= gg;
            }
        }
        let rg = self.rg(x) || self.rg(g);
        Ok(self.push(Op::MulCols(x, g), value, rg))
    }

    /// Output row `i` is input row `index[i]`. Covers permutations (window
    /// partition, cyclic shift, their inverses) and nearest-neighbour
    /// upsampling (repeated indices).
    pub fn gather_rows(&mut self, x: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("gather_rows: index {bad} out of {rows} rows")));
        }
        if index.is_empty() {
            return Err(Error::Shape("gather_rows: empty index".into()));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(src.row(i));
        }
        let value = Matrix::from_raw(index.len(), cols, data);
        let rg = self.rg(x);
        Ok(self.push(Op::Gather { x, index }, value, rg))
    }

    /// Sub-block `rows × cols` starting at `(r0, c0)`.
    pub fn slice(&mut self, x: Var, r0: usize, rows: usize, c0: usize, cols: usize) -> Result<Var> {
        let (xr, xc) = self.shape(x);
        if rows == 0 || cols == 0 || r0 + rows > xr || c0 + cols > xc {
            return Err(Error::Shape(format!(
                "slice [{r0}..{}, {c0}..{}] of {xr}x{xc}",
                r0 + rows,
                c0 + cols
            )));
        }
        let src = self.value(x);
        let value = Matrix::from_fn(rows, cols, |r, c| src[(r0 + r, c0 + c)]);
        let rg = self.rg(x);
        Ok(self.push(Op::Slice { x, r0, c0 }, value, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[c0..c0 + v.cols()].copy_from_slice(v.row(r));
            }
            c0 += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?).1;
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(Error::Shape("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).as_slice());
        }
        let rows = data.len() / cols;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Matrix::from_raw(rows, cols, data), rg))
    }

    /// Sum of all entries as a `1×1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::from_raw(1, 1, vec![self.value(x).sum()]);
        let rg = self.rg(x);
        self.push(Op::Sum(x), value, rg)
    }

    /// Soft Dice loss of one sample: `−(2Σ yŷ + ε)/(Σ y + Σ ŷ + ε)`.
    pub fn dice_loss(&mut self, pred: Var, target: Arc<Vec<f64>>, eps: f64) -> Result<Var> {
        let p = self.value(pred).as_slice();
        if p.len() != target.len() {
            return Err(Error::Shape(format!(
                "dice_loss: prediction has {} voxels, target {}",
                p.len(),
                target.len()
            )));
        }
        let value = Matrix::from_raw(1, 1, vec![-soft_dice(p, &target, eps)]);
        let rg = self.rg(pred);
        Ok(self.push(Op::DiceLoss { pred, target, eps }, value, rg))
    }

    /// Mean squared error against a fixed target.
    pub fn mse_loss(&mut self, x: Var, target: Matrix) -> Result<Var> {
        let d = self.value(x).sub(&target)?;
        let n = d.len() as f64;
        let value = Matrix::from_raw(1, 1, vec![d.as_slice().iter().map(|v| v * v).sum::<f64>() / n]);
        let rg = self.rg(x);
        Ok(self.push(Op::MseLoss { x, target }, value, rg))
    }

    /// Sign pattern (`> 0`) of every ReLU input on the tape, in tape order.
    /// Two evaluations with different patterns straddle a ReLU kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.nodes[x.0].value.as_slice().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    /// Smallest `|input|` over all ReLU nodes.
    pub fn min_relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for v in self.nodes[x.0].value.as_slice() {
                    m = m.min(v.abs());
                }
            }
        }
        m
    }

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter reachable from it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(name) => match out.by_name.get_mut(name) {
                    Some(acc) => acc.add_assign_unchecked(&g),
                    None => {
                        out.by_name.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = matmul_t_unchecked(&g, self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = t_matmul_unchecked(self.value(*a), &g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        let ga = matmul_unchecked(&g, self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = t_matmul_unchecked(&g, self.value(*a));
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g);
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    self.acc(&mut grads, *a, g.map(|v| v * s));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let gx = g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    self.acc(&mut grads, *a, gx);
                }
                Op::Sigmoid(a) => {
                    let gx = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                    self.acc(&mut grads, *a, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (o, (&gv, &yv)) in gx.row_mut(r).iter_mut().zip(g.row(r).iter().zip(yr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    self.acc(&mut grads, *a, gx);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let d = y.cols() as f64;
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mean_g = gr.iter().sum::<f64>() / d;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d;
                        for (o, (&gv, &yv)) in gx.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                            *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    self.acc(&mut grads, *x, gx);
                }
                Op::AddBias(x, b) => {
                    if self.rg(*b) {
                        let mut gb = Matrix::zeros(g.cols(), 1);
                        for r in 0..g.rows() {
                            for (acc, v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                        self.acc(&mut grads, *b, gb);
                    }
                    if self.rg(*x) {
                        self.acc(&mut grads, *x, g);
                    }
                }
                Op::MulCols(x, gain) => {
                    if self.rg(*gain) {
                        let xv = self.value(*x);
                        let mut gg = Matrix::zeros(g.cols(), 1);
                        for r in 0..g.rows() {
                            for ((acc, a), b) in gg.as_mut_slice().iter_mut().zip(g.row(r)).zip(xv.row(r)) {
                                *acc += a * b;
                            }
                        }
                        self.acc(&mut grads, *gain, gg);
                    }
                    if self.rg(*x) {
                        let gv = self.value(*gain).as_slice();
                        let mut gx = g;
                        for r in 0..gx.rows() {
                            for (o, s) in gx.row_mut(r).iter_mut().zip(gv) {
                                *o *= s;
                            }
                        }
                        self.acc(&mut grads, *x, gx);
                    }
                }
                Op::Gather { x, index } => {
                    let (rows, cols) = self.shape(*x);
                    let slot = grads[x.0].get_or_insert_with(|| Matrix::zeros(rows, cols));
                    for (i, &src) in index.iter().enumerate() {
                        for (o, v) in slot.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                Op::Slice { x, r0, c0 } => {
                    let (rows, cols) = self.shape(*x);
                    let slot = grads[x.0].get_or_insert_with(|| Matrix::zeros(rows, cols));
                    for r in 0..g.rows() {
                        for (o, v) in slot.row_mut(r0 + r)[*c0..*c0 + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        if self.rg(p) {
                            let gp = g.cols_range(c0, c0 + pc);
                            self.acc(&mut grads, p, gp);
                        }
                        c0 += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let pr = self.shape(p).0;
                        if self.rg(p) {
                            let gp = g.rows_range(r0, r0 + pr);
                            self.acc(&mut grads, p, gp);
                        }
                        r0 += pr;
                    }
                }
                Op::Sum(x) => {
                    let (r, c) = self.shape(*x);
                    self.acc(&mut grads, *x, Matrix::filled(r, c, g[(0, 0)]));
                }
                Op::DiceLoss { pred, target, eps } => {
                    let p = self.value(*pred);
                    let gx = dice_gradient(p.as_slice(), target, *eps);
                    let s = -g[(0, 0)];
                    let (r, c) = p.shape();
                    self.acc(&mut grads, *pred, Matrix::from_raw(r, c, gx.into_iter().map(|v| v * s).collect()));
                }
                Op::MseLoss { x, target } => {
                    let xv = self.value(*x);
                    let n = xv.len() as f64;
                    let s = 2.0 * g[(0, 0)] / n;
                    let gx = xv.zip_map(target, |a, b| s * (a - b));
                    self.acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign_unchecked(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `(2Σ yp + ε)/(Σ y + Σ p + ε)` for one sample.
pub(crate) fn soft_dice(pred: &[f64], target: &[f64], eps: f64) -> f64 {
    let (mut inter, mut total) = (0.0, 0.0);
    for (p, y) in pred.iter().zip(target) {
        inter += p * y;
        total += p + y;
    }
    (2.0 * inter + eps) / (total + eps)
}

/// Derivative of [`soft_dice`] with respect to each prediction.
fn dice_gradient(pred: &[f64], target: &[f64], eps: f64) -> Vec<f64> {
    let (mut inter, mut total) = (0.0, 0.0);
    for (p, y) in pred.iter().zip(target) {
        inter += p * y;
        total += p + y;
    }
    let num = 2.0 * inter + eps;
    let den = total + eps;
    target.iter().map(|y| (2.0 * y * den - num) / (den * den)).collect()
}
