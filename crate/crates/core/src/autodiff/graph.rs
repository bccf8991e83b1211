//! Tape of differentiable operations.
//!
//! Nodes are appended in construction order, so the tape is already a
//! topological order; the backward pass walks it in reverse.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use super::{AutodiffError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Stored {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    PowF(Var, f64),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    CausalSoftmax(Var),
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    SegmentSum(Var, Vec<Vec<usize>>),
    MulConst(Var, Tensor),
    RowOverride(Var, Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Stored,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation graph reading parameters from a store.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    inference: bool,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), inference: false }
    }

    /// A graph where every parameter is a constant; `backward` yields no gradients.
    pub fn inference(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), inference: true }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Stored::Owned(t) => t,
            Stored::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value: Stored::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Stored::Owned(t), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let requires_grad = !self.inference && !self.store.get(id).frozen;
        self.nodes.push(Node { value: Stored::Param(id), op: Op::Param(id), requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    // ---- forward ops -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = ta.matmul(tb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let out = ta.matmul_nt(tb);
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(ta.rows(), ta.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&self, name: &'static str, a: Var, r: Var) -> Result<()> {
        let (ta, tr) = (self.value(a), self.value(r));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err(name, ta, tr));
        }
        Ok(())
    }

    /// Add a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, r)?;
        let mut out = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&row) {
                *o += *b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, r), &[a, r]))
    }

    /// Multiply every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, r)?;
        let mut out = self.value(a).clone();
        let row = self.value(r).data().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&row) {
                *o *= *b;
            }
        }
        Ok(self.push(out, Op::MulRow(a, r), &[a, r]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let out = self.value(a).map(|x| x.powf(p));
        self.push(out, Op::PowF(a, p), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len().max(1) as f64;
        let s: f64 = t.data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a), &[a])
    }

    /// Column sums: `n × c → 1 × c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols());
        for i in 0..t.rows() {
            for (o, x) in out.row_mut(0).iter_mut().zip(t.row(i)) {
                *o += *x;
            }
        }
        self.push(out, Op::SumRows(a), &[a])
    }

    /// Column means: `n × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows().max(1) as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a), &[a])
    }

    /// Row softmax where row `i` only sees columns `0..=i`; masked entries are 0.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != t.cols() {
            return Err(shape_err("causal_softmax", t, t));
        }
        let mut out = t.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            softmax_in_place(&mut row[..=i]);
            for x in &mut row[i + 1..] {
                *x = 0.0;
            }
        }
        Ok(self.push(out, Op::CausalSoftmax(a), &[a]))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let c = t.cols() as f64;
        let mut out = t.clone();
        let mut inv_std = Vec::with_capacity(t.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mu = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / c;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mu) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm(a, inv_std), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Ok(self.constant(Tensor::zeros(0, 0)));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(first), t));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[off..off + t.cols()].copy_from_slice(t.row(i));
            }
            off += t.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Ok(self.constant(Tensor::zeros(0, 0)));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(shape_err("slice_cols", t, t));
        }
        let mut out = Tensor::zeros(t.rows(), len);
        for i in 0..t.rows() {
            out.row_mut(i).copy_from_slice(&t.row(i)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.iter().any(|&j| j >= t.cols()) {
            return Err(shape_err("select_cols", t, t));
        }
        let mut out = Tensor::zeros(t.rows(), idx.len());
        for i in 0..t.rows() {
            for (k, &j) in idx.iter().enumerate() {
                out.set(i, k, t.get(i, j));
            }
        }
        Ok(self.push(out, Op::SelectCols(a, idx.to_vec()), &[a]))
    }

    /// Row gather; also serves as embedding lookup when `a` is a table.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.iter().any(|&j| j >= t.rows()) {
            return Err(shape_err("gather_rows", t, t));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &j in idx {
            data.extend_from_slice(t.row(j));
        }
        let out = Tensor::from_vec(idx.len(), t.cols(), data);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), &[a]))
    }

    /// `out[i] = a[i, idx[i]]`, an `n × 1` column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() || idx.iter().any(|&j| j >= t.cols()) {
            return Err(shape_err("pick", t, t));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        Ok(self.push(Tensor::from_vec(idx.len(), 1, data), Op::Pick(a, idx.to_vec()), &[a]))
    }

    /// `out[i] = Σ_{j ∈ groups[i]} a[j]`, summed in the order given.
    pub fn segment_sum(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(a);
        if groups.iter().flatten().any(|&j| j >= t.rows()) {
            return Err(shape_err("segment_sum", t, t));
        }
        let mut out = Tensor::zeros(groups.len(), t.cols());
        for (i, g) in groups.iter().enumerate() {
            let o = out.row_mut(i);
            for &j in g {
                for (x, y) in o.iter_mut().zip(t.row(j)) {
                    *x += *y;
                }
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, groups.to_vec()), &[a]))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let t = self.value(a);
        if t.shape() != c.shape() {
            return Err(shape_err("mul_const", t, &c));
        }
        let data = t.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(t.rows(), t.cols(), data);
        Ok(self.push(out, Op::MulConst(a, c), &[a]))
    }

    /// Replace the rows of `a` flagged in `mask` with the single row `b`.
    ///
    /// Overridden rows carry no dependence on `a` at all, not even a zero
    /// multiple of it.
    pub fn row_override(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() || mask.len() != ta.rows() {
            return Err(shape_err("row_override", ta, tb));
        }
        let mut out = ta.clone();
        let brow = tb.data().to_vec();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).copy_from_slice(&brow);
            }
        }
        Ok(self.push(out, Op::RowOverride(a, b, mask.to_vec()), &[a, b]))
    }

    /// `x · w + b` with a `1 × out` bias row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Multi-head causal self-attention over the rows of `q`, `k`, `v`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let [n, d] = self.shape(q);
        if self.shape(k) != [n, d] || self.shape(v) != [n, d] || heads == 0 || d % heads != 0 {
            return Err(shape_err("causal_attention", self.value(q), self.value(k)));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.slice_cols(q, h * dh, dh)?;
            let kh = self.slice_cols(k, h * dh, dh)?;
            let vh = self.slice_cols(v, h * dh, dh)?;
            let scores = self.matmul_nt(qh, kh)?;
            let scores = self.scale(scores, scale);
            let attn = self.causal_softmax(scores)?;
            outs.push(self.matmul(attn, vh)?);
        }
        self.concat_cols(&outs)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(lt.shape()));
        }
        if !lt.item().is_finite() {
            return Err(AutodiffError::NonFiniteLoss(lt.item()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let out_val = self.value(Var(i));
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    match out.by_param.get_mut(id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            out.by_param.insert(*id, g);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.requires_grad(*a) {
                        let ga = g.matmul_nt(self.value(*b));
                        acc(&mut grads, *a, ga);
                    }
                    if self.requires_grad(*b) {
                        let gb = self.value(*a).matmul_tn(&g);
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.requires_grad(*a) {
                        let ga = g.matmul(self.value(*b));
                        acc(&mut grads, *a, ga);
                    }
                    if self.requires_grad(*b) {
                        let gb = g.matmul_tn(self.value(*a));
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.acc_if(&mut grads, *a, || g.clone());
                    self.acc_if(&mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.acc_if(&mut grads, *a, || g.clone());
                    self.acc_if(&mut grads, *b, || g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    self.acc_if(&mut grads, *a, || zip(&g, tb, |x, y| x * y));
                    self.acc_if(&mut grads, *b, || zip(&g, ta, |x, y| x * y));
                }
                Op::AddRow(a, r) => {
                    self.acc_if(&mut grads, *a, || g.clone());
                    self.acc_if(&mut grads, *r, || column_sums(&g));
                }
                Op::MulRow(a, r) => {
                    let (ta, tr) = (self.value(*a), self.value(*r));
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = g.clone();
                        for i in 0..ga.rows() {
                            for (x, y) in ga.row_mut(i).iter_mut().zip(tr.data()) {
                                *x *= *y;
                            }
                        }
                        ga
                    });
                    self.acc_if(&mut grads, *r, || column_sums(&zip(&g, ta, |x, y| x * y)));
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    self.acc_if(&mut grads, *a, || g.map(|x| x * s));
                }
                Op::AddScalar(a) => self.acc_if(&mut grads, *a, || g.clone()),
                Op::Relu(a) => {
                    self.acc_if(&mut grads, *a, || zip(&g, out_val, |x, y| if y > 0.0 { x } else { 0.0 }));
                }
                Op::Exp(a) => self.acc_if(&mut grads, *a, || zip(&g, out_val, |x, y| x * y)),
                Op::Log(a) => {
                    let ta = self.value(*a);
                    self.acc_if(&mut grads, *a, || zip(&g, ta, |x, y| x / y));
                }
                Op::PowF(a, p) => {
                    let (ta, p) = (self.value(*a), *p);
                    self.acc_if(&mut grads, *a, || {
                        if p == 0.0 {
                            Tensor::zeros(ta.rows(), ta.cols())
                        } else {
                            zip(&g, ta, |x, y| x * p * y.powf(p - 1.0))
                        }
                    });
                }
                Op::Abs(a) => {
                    let ta = self.value(*a);
                    self.acc_if(&mut grads, *a, || {
                        zip(&g, ta, |x, y| {
                            if y > 0.0 {
                                x
                            } else if y < 0.0 {
                                -x
                            } else {
                                0.0
                            }
                        })
                    });
                }
                Op::Sum(a) => {
                    let [r, c] = self.shape(*a);
                    self.acc_if(&mut grads, *a, || Tensor::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let [r, c] = self.shape(*a);
                    let n = (r * c).max(1) as f64;
                    self.acc_if(&mut grads, *a, || Tensor::filled(r, c, g.item() / n));
                }
                Op::SumRows(a) => {
                    let [r, c] = self.shape(*a);
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(r, c);
                        for i in 0..r {
                            ga.row_mut(i).copy_from_slice(g.row(0));
                        }
                        ga
                    });
                }
                Op::SoftmaxRows(a) | Op::CausalSoftmax(a) => {
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(out_val.rows(), out_val.cols());
                        for i in 0..out_val.rows() {
                            let y = out_val.row(i);
                            let gy = g.row(i);
                            let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                            for ((o, yi), gi) in ga.row_mut(i).iter_mut().zip(y).zip(gy) {
                                *o = yi * (gi - dot);
                            }
                        }
                        ga
                    });
                }
                Op::LogSoftmaxRows(a) => {
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(out_val.rows(), out_val.cols());
                        for i in 0..out_val.rows() {
                            let gs: f64 = g.row(i).iter().sum();
                            for ((o, ls), gi) in ga.row_mut(i).iter_mut().zip(out_val.row(i)).zip(g.row(i)) {
                                *o = gi - ls.exp() * gs;
                            }
                        }
                        ga
                    });
                }
                Op::LayerNorm(a, inv_std) => {
                    self.acc_if(&mut grads, *a, || {
                        let c = out_val.cols() as f64;
                        let mut ga = Tensor::zeros(out_val.rows(), out_val.cols());
                        for i in 0..out_val.rows() {
                            let xh = out_val.row(i);
                            let gi = g.row(i);
                            let mg = gi.iter().sum::<f64>() / c;
                            let mgx = gi.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c;
                            for ((o, x), gv) in ga.row_mut(i).iter_mut().zip(xh).zip(gi) {
                                *o = inv_std[i] * (gv - mg - x * mgx);
                            }
                        }
                        ga
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let [r, c] = self.shape(p);
                        self.acc_if(&mut grads, p, || {
                            let mut gp = Tensor::zeros(r, c);
                            for i in 0..r {
                                gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                            }
                            gp
                        });
                        off += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let [r, c] = self.shape(p);
                        self.acc_if(&mut grads, p, || {
                            Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec())
                        });
                        off += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let [r, c] = self.shape(*a);
                    let start = *start;
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(r, c);
                        for i in 0..r {
                            ga.row_mut(i)[start..start + g.cols()].copy_from_slice(g.row(i));
                        }
                        ga
                    });
                }
                Op::SelectCols(a, idx) => {
                    let [r, c] = self.shape(*a);
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(r, c);
                        for i in 0..r {
                            for (k, &j) in idx.iter().enumerate() {
                                let v = ga.get(i, j) + g.get(i, k);
                                ga.set(i, j, v);
                            }
                        }
                        ga
                    });
                }
                Op::GatherRows(a, idx) => {
                    let [r, c] = self.shape(*a);
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(r, c);
                        for (k, &j) in idx.iter().enumerate() {
                            for (x, y) in ga.row_mut(j).iter_mut().zip(g.row(k)) {
                                *x += *y;
                            }
                        }
                        ga
                    });
                }
                Op::Pick(a, idx) => {
                    let [r, c] = self.shape(*a);
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(r, c);
                        for (i, &j) in idx.iter().enumerate() {
                            ga.set(i, j, g.get(i, 0));
                        }
                        ga
                    });
                }
                Op::SegmentSum(a, groups) => {
                    let [r, c] = self.shape(*a);
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = Tensor::zeros(r, c);
                        for (i, grp) in groups.iter().enumerate() {
                            for &j in grp {
                                for (x, y) in ga.row_mut(j).iter_mut().zip(g.row(i)) {
                                    *x += *y;
                                }
                            }
                        }
                        ga
                    });
                }
                Op::MulConst(a, cst) => self.acc_if(&mut grads, *a, || zip(&g, cst, |x, y| x * y)),
                Op::RowOverride(a, b, mask) => {
                    self.acc_if(&mut grads, *a, || {
                        let mut ga = g.clone();
                        for (i, &m) in mask.iter().enumerate() {
                            if m {
                                ga.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
                            }
                        }
                        ga
                    });
                    self.acc_if(&mut grads, *b, || {
                        let mut gb = Tensor::zeros(1, g.cols());
                        for (i, &m) in mask.iter().enumerate() {
                            if m {
                                for (x, y) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                                    *x += *y;
                                }
                            }
                        }
                        gb
                    });
                }
            }
        }
        Ok(out)
    }

    fn acc_if(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.nodes[v.0].requires_grad {
            acc(grads, v, f());
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, x) in out.row_mut(0).iter_mut().zip(g.row(i)) {
            *o += *x;
        }
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}
