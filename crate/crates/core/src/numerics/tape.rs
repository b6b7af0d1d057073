//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation is recorded on a [`Tape`] in execution order and returns a
//! [`Var`] handle. [`Tape::backward`] replays adjoints in strict reverse order
//! and accumulates (`+=`) parameter gradients into a [`ParamStore`], so a
//! parameter referenced from several places receives the sum of all paths.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Built-in primitive kinds with analytic adjoints.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    /// `a[r×c] + b[c]` broadcast over rows.
    AddRow,
    /// `a[r×c] ⊙ b[c]` broadcast over rows.
    MulRow,
    Scale(f64),
    Exp,
    Softplus,
    Silu,
    Sigmoid,
    Relu,
    /// Elementwise Smooth-L1 with β = 1.
    SmoothL1,
    SoftmaxLastDim,
    L2NormalizeLastDim,
    /// Per-row standardization without affine terms.
    LayerNorm,
    FlipTime,
    ConcatTime,
    ConcatCols,
    Mean,
    Sum,
    /// Column-wise maximum of `L×D`, producing `1×D`.
    MaxOverTime,
    SliceTime { start: usize, end: usize },
    SliceCols { start: usize, end: usize },
    Reshape(Vec<usize>),
    Transpose,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::MulRow => "mul_row",
            OpKind::Scale(_) => "scale",
            OpKind::Exp => "exp",
            OpKind::Softplus => "softplus",
            OpKind::Silu => "silu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::SmoothL1 => "smooth_l1",
            OpKind::SoftmaxLastDim => "softmax_lastdim",
            OpKind::L2NormalizeLastDim => "l2_normalize_lastdim",
            OpKind::LayerNorm => "layer_norm",
            OpKind::FlipTime => "flip_time",
            OpKind::ConcatTime => "concat_time",
            OpKind::ConcatCols => "concat_cols",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::MaxOverTime => "max_over_time",
            OpKind::SliceTime { .. } => "slice_time",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::Reshape(_) => "reshape",
            OpKind::Transpose => "transpose",
        }
    }
}

/// A fused operation defined outside this module (scans, convolutions).
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; only the adjoint lives here.
pub trait Primitive: Send {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor)
        -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Param,
    Builtin { kind: OpKind, inputs: Vec<Var> },
    Custom { inputs: Vec<Var>, prim: Box<dyn Primitive> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one scalar with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
    macs: u64,
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

    /// Multiply-accumulate operations executed by forward primitives so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_leaf(t: &Tensor) -> Result<()> {
        if t.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op: "leaf" })
        }
    }

    /// Records a constant: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        Self::check_leaf(&t)?;
        Ok(self.push(t, Op::Leaf, false))
    }

    /// Records a free input whose gradient can be read from [`Gradients`].
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        Self::check_leaf(&t)?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// Binds a stored parameter. Repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let value = store.value(id).clone();
        Self::check_leaf(&value)?;
        let v = self.push(value, Op::Param, true);
        self.params.insert(id, v);
        Ok(v)
    }

    /// Records a fused primitive whose forward value the caller computed.
    pub fn custom(
        &mut self,
        prim: Box<dyn Primitive>,
        inputs: &[Var],
        output: Tensor,
        macs: u64,
    ) -> Result<Var> {
        if !output.is_finite() {
            return Err(Error::NonFinite { op: prim.name() });
        }
        self.macs += macs;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                prim,
            },
            needs_grad,
        ))
    }

    /// Evaluates a built-in primitive and records it.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (out, macs) = forward(&kind, &vals)?;
        if !out.is_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        self.macs += macs;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(
            out,
            Op::Builtin {
                kind,
                inputs: inputs.to_vec(),
            },
            needs_grad,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(OpKind::AddRow, &[a, row])
    }
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(OpKind::MulRow, &[a, row])
    }
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::Scale(factor), &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Softplus, &[a])
    }
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Silu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[a])
    }
    pub fn smooth_l1(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::SmoothL1, &[a])
    }
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::SoftmaxLastDim, &[a])
    }
    pub fn l2_normalize_lastdim(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::L2NormalizeLastDim, &[a])
    }
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::LayerNorm, &[a])
    }
    pub fn flip_time(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::FlipTime, &[a])
    }
    pub fn concat_time(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatTime, parts)
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatCols, parts)
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::MaxOverTime, &[a])
    }
    pub fn slice_time(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(OpKind::SliceTime { start, end }, &[a])
    }
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(OpKind::SliceCols { start, end }, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(OpKind::Reshape(shape.to_vec()), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a])
    }

    /// `x · W + b` for `x: r×in`, `W: in×out`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Gradients of `loss` with respect to every recorded value.
    pub fn gradients(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape(
                "backward already ran on this tape; record a new graph".into(),
            ));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                lv.shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for i in (0..=loss.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let (inputs, input_grads) = match &node.op {
                Op::Leaf | Op::Param => continue,
                Op::Builtin { kind, inputs } => {
                    let vals: Vec<&Tensor> =
                        inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    (inputs, backward(kind, &vals, &node.value, g)?)
                }
                Op::Custom { inputs, prim } => {
                    let vals: Vec<&Tensor> =
                        inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    (inputs, prim.backward(&vals, &node.value, g)?)
                }
            };
            for (v, ig) in inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut lower[v.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backpropagates `loss` and accumulates into trainable parameter gradients.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.params {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            if let Some(g) = grads.get(v) {
                if g.shape() != p.grad.shape() {
                    return Err(Error::shape("backward", p.grad.shape(), g.shape()));
                }
                p.grad.add_assign(g);
            }
        }
        Ok(grads)
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op, t.shape(), &[0, 0]));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn arity(op: &'static str, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::invalid(format!(
            "{op} expects {n} inputs, got {}",
            inputs.len()
        )));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn row_op(t: &Tensor, mut f: impl FnMut(&[f64], &mut [f64]) -> Result<()>) -> Result<Tensor> {
    let c = t.cols();
    let mut out = vec![0.0; t.len()];
    if c > 0 {
        for (src, dst) in t.data().chunks(c).zip(out.chunks_mut(c)) {
            f(src, dst)?;
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

fn forward(kind: &OpKind, x: &[&Tensor]) -> Result<(Tensor, u64)> {
    let name = kind.name();
    let unary = |f: &dyn Fn(f64) -> f64| -> Result<(Tensor, u64)> {
        arity(name, x, 1)?;
        Ok((x[0].map(f), 0))
    };
    match kind {
        OpKind::MatMul => {
            arity(name, x, 2)?;
            let (m, k) = dims2(name, x[0])?;
            let (k2, n) = dims2(name, x[1])?;
            if k != k2 {
                return Err(Error::shape(name, x[0].shape(), x[1].shape()));
            }
            let out = matmul_raw(x[0].data(), x[1].data(), m, k, n);
            Ok((Tensor::new([m, n], out)?, (m * k * n) as u64))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            arity(name, x, 2)?;
            same_shape(name, x[0], x[1])?;
            let out = match kind {
                OpKind::Add => zip_map(x[0], x[1], |a, b| a + b),
                OpKind::Sub => zip_map(x[0], x[1], |a, b| a - b),
                _ => zip_map(x[0], x[1], |a, b| a * b),
            };
            Ok((out, 0))
        }
        OpKind::AddRow | OpKind::MulRow => {
            arity(name, x, 2)?;
            let c = x[0].cols();
            if x[1].len() != c || x[1].rank() > 2 || x[1].rows() != 1 {
                return Err(Error::shape(name, x[0].shape(), x[1].shape()));
            }
            let row = x[1].data();
            let mul = matches!(kind, OpKind::MulRow);
            let out = row_op(x[0], |src, dst| {
                for ((d, &s), &r) in dst.iter_mut().zip(src).zip(row) {
                    *d = if mul { s * r } else { s + r };
                }
                Ok(())
            })?;
            Ok((out, 0))
        }
        OpKind::Scale(f) => {
            let f = *f;
            unary(&move |v| v * f)
        }
        OpKind::Exp => unary(&f64::exp),
        OpKind::Softplus => unary(&softplus),
        OpKind::Silu => unary(&|v| v * sigmoid(v)),
        OpKind::Sigmoid => unary(&sigmoid),
        OpKind::Relu => unary(&|v| v.max(0.0)),
        OpKind::SmoothL1 => unary(&|d| {
            if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            }
        }),
        OpKind::SoftmaxLastDim => {
            arity(name, x, 1)?;
            let out = row_op(x[0], |src, dst| {
                let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = (v - m).exp();
                    s += *d;
                }
                for d in dst.iter_mut() {
                    *d /= s;
                }
                Ok(())
            })?;
            Ok((out, 0))
        }
        OpKind::L2NormalizeLastDim => {
            arity(name, x, 1)?;
            let out = row_op(x[0], |src, dst| {
                let norm = src.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::invalid(
                        "l2_normalize_lastdim: zero-norm row has no direction",
                    ));
                }
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v / norm;
                }
                Ok(())
            })?;
            Ok((out, 0))
        }
        OpKind::LayerNorm => {
            arity(name, x, 1)?;
            let out = row_op(x[0], |src, dst| {
                let (mean, inv) = norm_stats(src);
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = (v - mean) * inv;
                }
                Ok(())
            })?;
            Ok((out, 0))
        }
        OpKind::FlipTime => {
            arity(name, x, 1)?;
            let (r, c) = dims2(name, x[0])?;
            let mut out = Vec::with_capacity(r * c);
            for i in (0..r).rev() {
                out.extend_from_slice(x[0].row(i));
            }
            Ok((Tensor::new([r, c], out)?, 0))
        }
        OpKind::ConcatTime => {
            if x.is_empty() {
                return Err(Error::invalid("concat_time of nothing"));
            }
            let (_, c) = dims2(name, x[0])?;
            let mut rows = 0;
            let mut out = Vec::new();
            for t in x {
                let (r, c2) = dims2(name, t)?;
                if c2 != c {
                    return Err(Error::shape(name, x[0].shape(), t.shape()));
                }
                rows += r;
                out.extend_from_slice(t.data());
            }
            Ok((Tensor::new([rows, c], out)?, 0))
        }
        OpKind::ConcatCols => {
            if x.is_empty() {
                return Err(Error::invalid("concat_cols of nothing"));
            }
            let (r, _) = dims2(name, x[0])?;
            let mut cols = 0;
            for t in x {
                let (r2, c) = dims2(name, t)?;
                if r2 != r {
                    return Err(Error::shape(name, x[0].shape(), t.shape()));
                }
                cols += c;
            }
            let mut out = Vec::with_capacity(r * cols);
            for i in 0..r {
                for t in x {
                    out.extend_from_slice(t.row(i));
                }
            }
            Ok((Tensor::new([r, cols], out)?, 0))
        }
        OpKind::Mean => {
            arity(name, x, 1)?;
            if x[0].is_empty() {
                return Err(Error::invalid("mean of empty tensor"));
            }
            let s: f64 = x[0].data().iter().sum();
            Ok((Tensor::scalar(s / x[0].len() as f64), 0))
        }
        OpKind::Sum => {
            arity(name, x, 1)?;
            Ok((Tensor::scalar(x[0].data().iter().sum()), 0))
        }
        OpKind::MaxOverTime => {
            arity(name, x, 1)?;
            let (r, c) = dims2(name, x[0])?;
            if r == 0 {
                return Err(Error::invalid("max_over_time of empty sequence"));
            }
            let mut out = x[0].row(0).to_vec();
            for i in 1..r {
                for (o, &v) in out.iter_mut().zip(x[0].row(i)) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
            Ok((Tensor::new([1, c], out)?, 0))
        }
        OpKind::SliceTime { start, end } => {
            arity(name, x, 1)?;
            let (r, c) = dims2(name, x[0])?;
            if start >= end || *end > r {
                return Err(Error::shape(name, x[0].shape(), &[*start, *end]));
            }
            let out = x[0].data()[start * c..end * c].to_vec();
            Ok((Tensor::new([end - start, c], out)?, 0))
        }
        OpKind::SliceCols { start, end } => {
            arity(name, x, 1)?;
            let (r, c) = dims2(name, x[0])?;
            if start >= end || *end > c {
                return Err(Error::shape(name, x[0].shape(), &[*start, *end]));
            }
            let mut out = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                out.extend_from_slice(&x[0].row(i)[*start..*end]);
            }
            Ok((Tensor::new([r, end - start], out)?, 0))
        }
        OpKind::Reshape(shape) => {
            arity(name, x, 1)?;
            Ok((x[0].clone().reshape(shape.clone())?, 0))
        }
        OpKind::Transpose => {
            arity(name, x, 1)?;
            dims2(name, x[0])?;
            Ok((x[0].transpose(), 0))
        }
    }
}

fn norm_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn backward(kind: &OpKind, x: &[&Tensor], y: &Tensor, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let elementwise = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Option<Tensor>> {
        // f(input, upstream) -> local gradient contribution
        vec![Some(zip_map(x[0], g, f))]
    };
    let out = match kind {
        OpKind::MatMul => {
            let (m, k) = (x[0].shape()[0], x[0].shape()[1]);
            let n = x[1].shape()[1];
            let ga = matmul_nt(g.data(), x[1].data(), m, n, k);
            let gb = matmul_tn(x[0].data(), g.data(), m, k, n);
            vec![
                Some(Tensor::new([m, k], ga)?),
                Some(Tensor::new([k, n], gb)?),
            ]
        }
        OpKind::Add => vec![Some(g.clone()), Some(g.clone())],
        OpKind::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        OpKind::Mul => vec![
            Some(zip_map(g, x[1], |a, b| a * b)),
            Some(zip_map(g, x[0], |a, b| a * b)),
        ],
        OpKind::AddRow => {
            let c = x[0].cols();
            let mut gr = vec![0.0; c];
            for row in g.data().chunks(c) {
                for (a, &v) in gr.iter_mut().zip(row) {
                    *a += v;
                }
            }
            vec![
                Some(g.clone()),
                Some(Tensor::new(x[1].shape().to_vec(), gr)?),
            ]
        }
        OpKind::MulRow => {
            let c = x[0].cols();
            let row = x[1].data();
            let mut gr = vec![0.0; c];
            let mut ga = vec![0.0; g.len()];
            for ((grow, xrow), garow) in g
                .data()
                .chunks(c)
                .zip(x[0].data().chunks(c))
                .zip(ga.chunks_mut(c))
            {
                for j in 0..c {
                    gr[j] += grow[j] * xrow[j];
                    garow[j] = grow[j] * row[j];
                }
            }
            vec![
                Some(Tensor::new(x[0].shape().to_vec(), ga)?),
                Some(Tensor::new(x[1].shape().to_vec(), gr)?),
            ]
        }
        OpKind::Scale(f) => vec![Some(g.map(|v| v * f))],
        OpKind::Exp => vec![Some(zip_map(y, g, |a, b| a * b))],
        OpKind::Softplus => elementwise(&|v, gv| gv * sigmoid(v)),
        OpKind::Silu => elementwise(&|v, gv| {
            let s = sigmoid(v);
            gv * s * (1.0 + v * (1.0 - s))
        }),
        OpKind::Sigmoid => vec![Some(zip_map(y, g, |s, gv| gv * s * (1.0 - s)))],
        OpKind::Relu => elementwise(&|v, gv| if v > 0.0 { gv } else { 0.0 }),
        OpKind::SmoothL1 => elementwise(&|d, gv| {
            if d.abs() < 1.0 {
                gv * d
            } else {
                gv * d.signum()
            }
        }),
        OpKind::SoftmaxLastDim => {
            let c = y.cols();
            let mut gx = vec![0.0; y.len()];
            for ((yr, gr), dst) in y.data().chunks(c).zip(g.data().chunks(c)).zip(gx.chunks_mut(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    dst[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), gx)?)]
        }
        OpKind::L2NormalizeLastDim => {
            let c = y.cols();
            let mut gx = vec![0.0; y.len()];
            for (((xr, yr), gr), dst) in x[0]
                .data()
                .chunks(c)
                .zip(y.data().chunks(c))
                .zip(g.data().chunks(c))
                .zip(gx.chunks_mut(c))
            {
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    dst[j] = (gr[j] - yr[j] * dot) / norm;
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), gx)?)]
        }
        OpKind::LayerNorm => {
            let c = y.cols();
            let n = c as f64;
            let mut gx = vec![0.0; y.len()];
            for (((xr, yr), gr), dst) in x[0]
                .data()
                .chunks(c)
                .zip(y.data().chunks(c))
                .zip(g.data().chunks(c))
                .zip(gx.chunks_mut(c))
            {
                let (_, inv) = norm_stats(xr);
                let gm = gr.iter().sum::<f64>() / n;
                let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                for j in 0..c {
                    dst[j] = inv * (gr[j] - gm - yr[j] * gy);
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), gx)?)]
        }
        OpKind::FlipTime => {
            let (r, c) = (g.rows(), g.cols());
            let mut out = Vec::with_capacity(r * c);
            for i in (0..r).rev() {
                out.extend_from_slice(g.row(i));
            }
            vec![Some(Tensor::new([r, c], out)?)]
        }
        OpKind::ConcatTime => {
            let c = g.cols();
            let mut offset = 0;
            let mut res = Vec::with_capacity(x.len());
            for t in x {
                let n = t.len();
                res.push(Some(Tensor::new(
                    t.shape().to_vec(),
                    g.data()[offset..offset + n].to_vec(),
                )?));
                offset += n;
            }
            debug_assert_eq!(offset, g.rows() * c);
            res
        }
        OpKind::ConcatCols => {
            let r = g.rows();
            let mut res = Vec::with_capacity(x.len());
            let mut col = 0;
            for t in x {
                let c = t.cols();
                let mut part = Vec::with_capacity(r * c);
                for i in 0..r {
                    part.extend_from_slice(&g.row(i)[col..col + c]);
                }
                res.push(Some(Tensor::new(t.shape().to_vec(), part)?));
                col += c;
            }
            res
        }
        OpKind::Mean => {
            let gv = g.item()? / x[0].len() as f64;
            vec![Some(Tensor::full(x[0].shape().to_vec(), gv))]
        }
        OpKind::Sum => vec![Some(Tensor::full(x[0].shape().to_vec(), g.item()?))],
        OpKind::MaxOverTime => {
            let (r, c) = (x[0].rows(), x[0].cols());
            let mut gx = vec![0.0; r * c];
            for j in 0..c {
                let mut best = 0;
                for i in 1..r {
                    if x[0].at(i, j) > x[0].at(best, j) {
                        best = i;
                    }
                }
                gx[best * c + j] = g.data()[j];
            }
            vec![Some(Tensor::new(x[0].shape().to_vec(), gx)?)]
        }
        OpKind::SliceTime { start, .. } => {
            let c = x[0].cols();
            let mut gx = vec![0.0; x[0].len()];
            gx[start * c..start * c + g.len()].copy_from_slice(g.data());
            vec![Some(Tensor::new(x[0].shape().to_vec(), gx)?)]
        }
        OpKind::SliceCols { start, end } => {
            let (r, c) = (x[0].rows(), x[0].cols());
            let w = end - start;
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            vec![Some(Tensor::new(x[0].shape().to_vec(), gx)?)]
        }
        OpKind::Reshape(_) => vec![Some(g.clone().reshape(x[0].shape().to_vec())?)],
        OpKind::Transpose => vec![Some(g.transpose())],
    };
    Ok(out)
}
