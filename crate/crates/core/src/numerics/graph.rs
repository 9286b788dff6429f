//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its primal value and
//! the inputs it was built from. [`Graph::backward`] sweeps the nodes in
//! reverse creation order, applying one hand-written adjoint rule per op.
//! Nodes are only ever appended, so creation order is a topological order.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gelu, gelu_grad, matmul_into, row_stats, sigmoid, softplus, Tensor};
use crate::error::{shape_err, MimError, Result};

/// Handle to a node of a [`Graph`]: a primal value whose gradient is
/// accumulated by the next backward sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op whose adjoint is supplied by the caller (e.g. fused scan kernels).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Gelu,
    Sigmoid,
    Softplus,
    Exp,
    Neg,
    Abs,
    Relu,
    Ln,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Unary(Var, Unary),
    SumAll(Var),
    MeanRows(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows {
        base: Var,
        update: Var,
        rows: Arc<[usize]>,
    },
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    Reshape(Var),
    BceWithLogits(Var, Tensor),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bound: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a bound parameter, zeros when unreachable or unbound.
    pub fn param(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.bound
            .get(&id)
            .and_then(|v| self.wrt(*v).cloned())
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    /// One gradient per parameter of `store`, in store order.
    pub fn params(&self, store: &ParamStore) -> Vec<Tensor> {
        store.ids().map(|id| self.param(id, store)).collect()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a constant or input leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a stored parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let v = self.leaf(store.get(id).clone());
        self.bound.insert(id, v);
        v
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let v = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(v, op))
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

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "min", f64::min, Op::Min(a, b))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "max", f64::max, Op::Max(a, b))
    }

    fn check_row(&self, a: Var, row: Var, what: &str) -> Result<()> {
        let (x, r) = (self.value(a), self.value(row));
        if r.len() != x.cols() {
            return shape_err(format!("{what}: row {:?} for {:?}", r.shape(), x.shape()));
        }
        Ok(())
    }

    /// `a + row`, broadcasting a `1 × c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row(a, row, "add_row")?;
        let r = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        let c = v.cols();
        for chunk in v.data_mut().chunks_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// `a * row`, broadcasting a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row(a, row, "mul_row")?;
        let r = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        let c = v.cols();
        for chunk in v.data_mut().chunks_mut(c.max(1)) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x *= y;
            }
        }
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` has one value per row).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(col));
        if c.len() != x.rows() {
            return shape_err(format!("mul_col: {:?} for {:?}", c.shape(), x.shape()));
        }
        let cv = c.data().to_vec();
        let mut v = x.clone();
        let cols = v.cols();
        for (chunk, s) in v.data_mut().chunks_mut(cols.max(1)).zip(&cv) {
            for x in chunk {
                *x *= s;
            }
        }
        Ok(self.push(v, Op::MulCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Softmax along the last axis of every row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = x.softmax(x.rank().max(1) - 1)?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization with `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.check_row(x, gain, "layer_norm gain")?;
        self.check_row(x, bias, "layer_norm bias")?;
        let xv = self.value(x);
        let c = xv.cols();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(c.max(1)) {
            let (mean, inv) = row_stats(row);
            inv_std.push(inv);
            for (j, &val) in row.iter().enumerate() {
                let h = (val - mean) * inv;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Gelu => gelu,
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Neg => |x| -x,
            Unary::Abs => f64::abs,
            Unary::Relu => |x| x.max(0.0),
            Unary::Ln => f64::ln,
        };
        let v = self.value(a).map(f);
        self.push(v, Op::Unary(a, kind))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    /// Sum of all entries, as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means over all rows, giving a `1 × c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let mut out = vec![0.0; c];
        for row in x.data().chunks(c.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        self.push(Tensor::row(out), Op::MeanRows(a))
    }

    /// Selects rows of a rank-2 value; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: impl Into<Arc<[usize]>>) -> Result<Var> {
        let rows: Arc<[usize]> = rows.into();
        let x = self.value(a);
        let c = x.cols();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows.iter() {
            if r >= x.rows() {
                return shape_err(format!("gather row {r} of {}", x.rows()));
            }
            out.extend_from_slice(x.row_slice(r));
        }
        let v = Tensor::new(vec![rows.len(), c], out)?;
        Ok(self.push(v, Op::GatherRows(a, rows)))
    }

    /// Copy of `base` with `update` row `i` added into row `rows[i]`.
    pub fn scatter_add_rows(&mut self, base: Var, update: Var, rows: impl Into<Arc<[usize]>>) -> Result<Var> {
        let rows: Arc<[usize]> = rows.into();
        let (b, u) = (self.value(base), self.value(update));
        if u.rows() != rows.len() || u.cols() != b.cols() {
            return shape_err(format!("scatter {:?} into {:?}", u.shape(), b.shape()));
        }
        let mut v = b.clone();
        for (i, &r) in rows.iter().enumerate() {
            if r >= v.rows() {
                return shape_err(format!("scatter row {r} of {}", v.rows()));
            }
            let src = u.row_slice(i).to_vec();
            for (d, s) in v.row_slice_mut(r).iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(self.push(v, Op::ScatterAddRows { base, update, rows }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map_or(0, |p| self.value(*p).cols());
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            if x.cols() != c {
                return shape_err("concat_rows width mismatch");
            }
            rows += x.rows();
            out.extend_from_slice(x.data());
        }
        let v = Tensor::new(vec![rows, c], out)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end` of a rank-2 value.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return shape_err(format!("slice {start}..{end} of width {}", x.cols()));
        }
        let mut out = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            out.extend_from_slice(&x.row_slice(r)[start..end]);
        }
        let v = Tensor::new(vec![x.rows(), end - start], out)?;
        Ok(self.push(v, Op::SliceCols(a, start, end)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return shape_err("concat_cols row mismatch");
        }
        let mut out = Vec::with_capacity(x.len() + y.len());
        for r in 0..x.rows() {
            out.extend_from_slice(x.row_slice(r));
            out.extend_from_slice(y.row_slice(r));
        }
        let v = Tensor::new(vec![x.rows(), x.cols() + y.cols()], out)?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return shape_err("bce targets");
        }
        let n = z.len() as f64;
        let total: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(Tensor::scalar(total / n), Op::BceWithLogits(logits, targets)))
    }

    /// Records an op with a caller-supplied adjoint.
    pub fn custom(&mut self, inputs: Vec<Var>, output: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(output, Op::Custom(inputs, op))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(MimError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            bound: self.bound.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |g, y| g * y)?);
                acc(*b, g.zip_map(val(*a), |g, x| g * x)?);
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(*a, g.zip_map(y, |g, y| g / y)?);
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                acc(*b, Tensor::new(g.shape().to_vec(), gb)?);
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (x, y) = (val(*a), val(*b));
                let mut ga = g.clone();
                let mut gb = g.clone();
                for k in 0..g.len() {
                    let pick_a = if is_min {
                        x.data()[k] <= y.data()[k]
                    } else {
                        x.data()[k] >= y.data()[k]
                    };
                    if pick_a {
                        gb.data_mut()[k] = 0.0;
                    } else {
                        ga.data_mut()[k] = 0.0;
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, column_sums(g).reshape(val(*row).shape())?);
            }
            Op::MulRow(a, row) => {
                let r = val(*row).data();
                let x = val(*a);
                let c = g.cols();
                let mut ga = g.clone();
                let mut gr = vec![0.0; c];
                for (k, v) in ga.data_mut().iter_mut().enumerate() {
                    gr[k % c] += *v * x.data()[k];
                    *v *= r[k % c];
                }
                acc(*a, ga);
                acc(*row, Tensor::new(val(*row).shape().to_vec(), gr)?);
            }
            Op::MulCol(a, col) => {
                let s = val(*col).data();
                let x = val(*a);
                let c = g.cols();
                let mut ga = g.clone();
                let mut gc = vec![0.0; s.len()];
                for (k, v) in ga.data_mut().iter_mut().enumerate() {
                    gc[k / c] += *v * x.data()[k];
                    *v *= s[k / c];
                }
                acc(*a, ga);
                acc(*col, Tensor::new(val(*col).shape().to_vec(), gc)?);
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                // dA = G · Bᵀ, dB = Aᵀ · G
                let yt = y.transpose();
                let mut ga = vec![0.0; m * k];
                matmul_into(g.data(), yt.data(), &mut ga, m, n, k);
                let xt = x.transpose();
                let mut gb = vec![0.0; k * n];
                matmul_into(xt.data(), g.data(), &mut gb, k, m, n);
                acc(*a, Tensor::new(x.shape().to_vec(), ga)?);
                acc(*b, Tensor::new(y.shape().to_vec(), gb)?);
            }
            Op::Transpose(a) => acc(*a, g.transpose().reshape(val(*a).shape())?),
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let c = s.cols();
                let mut out = vec![0.0; s.len()];
                for ((o, sr), gr) in out
                    .chunks_mut(c)
                    .zip(s.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let dot: f64 = sr.iter().zip(gr).map(|(s, g)| s * g).sum();
                    for j in 0..c {
                        o[j] = sr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::new(s.shape().to_vec(), out)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = val(*gain).data();
                let c = g.cols();
                let n = c as f64;
                let mut gx = vec![0.0; g.len()];
                let mut ggain = vec![0.0; c];
                let mut gbias = vec![0.0; c];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..c {
                        let dh = gr[j] * gv[j];
                        ggain[j] += gr[j] * hr[j];
                        gbias[j] += gr[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    for j in 0..c {
                        let dh = gr[j] * gv[j];
                        gx[r * c + j] = inv * (dh - sum_dh / n - hr[j] * sum_dh_h / n);
                    }
                }
                acc(*x, Tensor::new(g.shape().to_vec(), gx)?);
                acc(*gain, Tensor::new(val(*gain).shape().to_vec(), ggain)?);
                acc(*bias, Tensor::new(val(*bias).shape().to_vec(), gbias)?);
            }
            Op::Unary(a, kind) => {
                let x = val(*a);
                let y = &node.value;
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&g, (&x, &y))| {
                        g * match kind {
                            Unary::Gelu => gelu_grad(x),
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::Softplus => sigmoid(x),
                            Unary::Exp => y,
                            Unary::Neg => -1.0,
                            Unary::Abs => x.signum() * f64::from(x != 0.0),
                            Unary::Relu => f64::from(x > 0.0),
                            Unary::Ln => 1.0 / x,
                        }
                    })
                    .collect();
                acc(*a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::SumAll(a) => acc(*a, Tensor::full(val(*a).shape(), g.data()[0])),
            Op::MeanRows(a) => {
                let x = val(*a);
                let r = x.rows() as f64;
                let c = x.cols();
                let d: Vec<f64> = (0..x.len()).map(|k| g.data()[k % c] / r).collect();
                acc(*a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::GatherRows(a, rows) => {
                let x = val(*a);
                let mut d = Tensor::zeros(&[x.rows(), x.cols()]);
                for (i, &r) in rows.iter().enumerate() {
                    let src = g.row_slice(i);
                    for (t, s) in d.row_slice_mut(r).iter_mut().zip(src) {
                        *t += s;
                    }
                }
                acc(*a, d.reshape(x.shape())?);
            }
            Op::ScatterAddRows { base, update, rows } => {
                acc(*base, g.clone());
                let c = g.cols();
                let mut out = Vec::with_capacity(rows.len() * c);
                for &r in rows.iter() {
                    out.extend_from_slice(g.row_slice(r));
                }
                acc(*update, Tensor::new(val(*update).shape().to_vec(), out)?);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let x = val(*p);
                    acc(*p, Tensor::new(x.shape().to_vec(), g.data()[offset..offset + x.len()].to_vec())?);
                    offset += x.len();
                }
            }
            Op::SliceCols(a, start, end) => {
                let x = val(*a);
                let mut d = Tensor::zeros(&[x.rows(), x.cols()]);
                for r in 0..x.rows() {
                    d.row_slice_mut(r)[*start..*end].copy_from_slice(g.row_slice(r));
                }
                acc(*a, d.reshape(x.shape())?);
            }
            Op::ConcatCols(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (ca, cb) = (x.cols(), y.cols());
                let mut ga = Vec::with_capacity(x.len());
                let mut gb = Vec::with_capacity(y.len());
                for r in 0..g.rows() {
                    let row = g.row_slice(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..ca + cb]);
                }
                acc(*a, Tensor::new(x.shape().to_vec(), ga)?);
                acc(*b, Tensor::new(y.shape().to_vec(), gb)?);
            }
            Op::Reshape(a) => acc(*a, g.clone().reshape(val(*a).shape())?),
            Op::BceWithLogits(a, targets) => {
                let z = val(*a);
                let n = z.len() as f64;
                let s = g.data()[0];
                let d: Vec<f64> = z
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&z, &y)| s * (sigmoid(z) - y) / n)
                    .collect();
                acc(*a, Tensor::new(z.shape().to_vec(), d)?);
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let gs = op.backward(&ins, &node.value, g);
                debug_assert_eq!(gs.len(), inputs.len(), "{} adjoint arity", op.name());
                for (v, t) in inputs.iter().zip(gs) {
                    acc(*v, t);
                }
            }
        }
        Ok(())
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for row in g.data().chunks(c.max(1)) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::row(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient_is_input() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap());
        let x = g.leaf(Tensor::from_rows(&[vec![1.5], vec![-2.0], vec![0.5]]).unwrap());
        let y = g.matmul(w, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[1.5, -2.0, 0.5]);
    }

    #[test]
    fn two_class_cross_entropy_gradient_is_p_minus_y() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![0.7, -0.2]));
        let p = g.softmax_rows(z).unwrap();
        let p1 = g.slice_cols(p, 1, 2).unwrap();
        let logp = g.unary(p1, Unary::Ln);
        let loss = g.neg(logp);
        let grads = g.backward(loss).unwrap();
        let e0 = 0.7f64.exp();
        let e1 = (-0.2f64).exp();
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let gz = grads.wrt(z).unwrap().data();
        assert!((gz[0] - p[0]).abs() < 1e-12);
        assert!((gz[1] - (p[1] - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::row(vec![1.0, 2.0])).unwrap();
        let unused = store.add("unused", Tensor::row(vec![3.0])).unwrap();
        let mut g = Graph::new();
        let u = g.param(&store, used);
        let _ = g.param(&store, unused);
        let loss = g.sum(u);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(unused, &store).data(), &[0.0]);
        assert_eq!(grads.param(used, &store).data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }
}
