//! Record-and-replay reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the record in reverse and
//! returns the adjoint of every node that depends on a differentiable leaf.
//! A graph belongs to one forward pass; build a fresh one per sample.

use std::fmt;
use std::sync::Arc;

use super::ops;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation defined outside this module that still participates in
/// differentiation. `backward` returns one optional adjoint per input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

/// A value together with the adjoint of the loss with respect to it.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTensor {
    pub value: Tensor,
    pub adjoint: Tensor,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulBias(Var, Var),
    MulColumn(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Tensor>),
    AddConst(Var),
    Matmul(Var, Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Softmax(Var, usize),
    ModeMul(Var, Var, usize),
    Gather(Var, Arc<Vec<Option<usize>>>),
    ConcatLast(Vec<Var>),
    Sum(Var),
    Mse(Var, Arc<Tensor>),
    Custom(Arc<dyn CustomOp>, Vec<Var>),
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Custom(op, _) => write!(f, "Custom({})", op.name()),
            Op::Leaf => write!(f, "Leaf"),
            _ => write!(f, "Op"),
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad, None)
    }

    fn push_shared(
        &mut self,
        value: Arc<Tensor>,
        op: Op,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf not backed by a parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A differentiable leaf borrowing a parameter value.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_shared(store.shared(id), Op::Leaf, true, Some(id))
    }

    /// A parameter recorded as a constant (frozen for this pass).
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_shared(store.shared(id), Op::Leaf, false, None)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    fn check_bias(&self, x: Var, b: Var, what: &str) -> Result<usize> {
        let d = self.value(x).last_dim();
        if self.value(b).len() != d {
            return Err(Error::shape(format!(
                "{what}: feature width {d} vs vector {:?}",
                self.value(b).shape()
            )));
        }
        Ok(d)
    }

    /// `x[..., d] + b[d]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.check_bias(x, b, "add_bias")?;
        let bd = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += bd[i % d];
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(v, Op::AddBias(x, b), rg))
    }

    /// `x[..., d] * g[d]`.
    pub fn mul_bias(&mut self, x: Var, g: Var) -> Result<Var> {
        let d = self.check_bias(x, g, "mul_bias")?;
        let gd = self.value(g).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= gd[i % d];
        }
        let rg = self.rg(x) || self.rg(g);
        Ok(self.push(v, Op::MulBias(x, g), rg))
    }

    /// `x[..., d] * c[..., 1]`: one scalar per position broadcast over features.
    pub fn mul_column(&mut self, x: Var, c: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let cs = self.value(c).shape();
        let d = self.value(x).last_dim();
        if xs.len() != cs.len() || xs[..xs.len() - 1] != cs[..cs.len() - 1] || cs[cs.len() - 1] != 1
        {
            return Err(Error::shape(format!("mul_column: {xs:?} vs {cs:?}")));
        }
        let cd = self.value(c).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= cd[i / d];
        }
        let rg = self.rg(x) || self.rg(c);
        Ok(self.push(v, Op::MulColumn(x, c), rg))
    }

    /// `s * x` for a one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by expects a one-element scale"));
        }
        let sv = self.value(s).item();
        let v = self.value(x).map(|e| e * sv);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(v, Op::ScaleBy(x, s), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e * c);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, c), rg)
    }

    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let v = self.value(x).zip_map(&c, |a, b| a * b)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::MulConst(x, Arc::new(c)), rg))
    }

    pub fn add_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let v = self.value(x).zip_map(&c, |a, b| a + b)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::AddConst(x), rg))
    }

    /// `x[..., in] @ w[in, out]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = ops::matmul_last(self.value(x), self.value(w))?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(v, Op::Matmul(x, w), rg))
    }

    /// `x @ w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = ops::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = ops::softplus(self.value(x));
        let rg = self.rg(x);
        self.push(v, Op::Softplus(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        self.push(v, Op::Ln(x), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = ops::softmax_axis(self.value(x), axis)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Softmax(x, axis), rg))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let axis = self.value(x).rank().saturating_sub(1);
        self.softmax(x, axis)
    }

    pub fn mode_multiply(&mut self, a: Var, b: Var, mode: usize) -> Result<Var> {
        let v = ops::mode_multiply(self.value(a), self.value(b), mode)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::ModeMul(a, b, mode), rg))
    }

    /// `out[i] = x[index[i]]`, or zero where the index is `None`.
    pub fn gather(
        &mut self,
        x: Var,
        index: Arc<Vec<Option<usize>>>,
        shape: &[usize],
    ) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != index.len() {
            return Err(Error::shape(format!(
                "gather into {shape:?} with {} indices",
                index.len()
            )));
        }
        let src = self.value(x).data();
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= src.len()) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = index.iter().map(|i| i.map_or(0.0, |j| src[j])).collect();
        let v = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Gather(x, index), rg))
    }

    /// Reshape without moving data.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        let index = Arc::new((0..n).map(Some).collect());
        self.gather(x, index, shape)
    }

    /// Concatenate along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!("concat: {:?} vs leading {lead:?}", s)));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total + col..r * total + col + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead;
        shape.push(total);
        let v = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::ConcatLast(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::shape(format!(
                "mse of {:?} against {:?}",
                self.value(pred).shape(),
                target.shape()
            )));
        }
        let n = target.len().max(1) as f64;
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, Arc::new(target)), rg))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&values)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::Custom(op, inputs.to_vec()), rg))
    }

    /// Adjoints of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Result<Adjoints> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called before any forward pass".into(),
            ));
        }
        if root.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "root {} is not recorded on this tape",
                root.0
            )));
        }
        if self.value(root).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Adjoints { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|e| -e));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, g.zip_map(bv, |x, y| x * y).unwrap());
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(av, |x, y| x * y).unwrap());
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                if self.rg(*b) {
                    let d = g.last_dim();
                    let mut db = vec![0.0; d];
                    for (i, e) in g.data().iter().enumerate() {
                        db[i % d] += e;
                    }
                    acc(
                        *b,
                        Tensor::new(self.value(*b).shape().to_vec(), db).unwrap(),
                    );
                }
            }
            Op::MulBias(x, s) => {
                let d = g.last_dim();
                let sv = self.value(*s).data();
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (i, e) in dx.data_mut().iter_mut().enumerate() {
                        *e *= sv[i % d];
                    }
                    acc(*x, dx);
                }
                if self.rg(*s) {
                    let xv = self.value(*x).data();
                    let mut ds = vec![0.0; d];
                    for (i, e) in g.data().iter().enumerate() {
                        ds[i % d] += e * xv[i];
                    }
                    acc(
                        *s,
                        Tensor::new(self.value(*s).shape().to_vec(), ds).unwrap(),
                    );
                }
            }
            Op::MulColumn(x, c) => {
                let d = g.last_dim();
                let cv = self.value(*c).data();
                if self.rg(*x) {
                    let mut dx = g.clone();
                    for (i, e) in dx.data_mut().iter_mut().enumerate() {
                        *e *= cv[i / d];
                    }
                    acc(*x, dx);
                }
                if self.rg(*c) {
                    let xv = self.value(*x).data();
                    let mut dc = vec![0.0; cv.len()];
                    for (i, e) in g.data().iter().enumerate() {
                        dc[i / d] += e * xv[i];
                    }
                    acc(
                        *c,
                        Tensor::new(self.value(*c).shape().to_vec(), dc).unwrap(),
                    );
                }
            }
            Op::ScaleBy(x, s) => {
                let sv = self.value(*s).item();
                if self.rg(*x) {
                    acc(*x, g.map(|e| e * sv));
                }
                if self.rg(*s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    acc(
                        *s,
                        Tensor::new(self.value(*s).shape().to_vec(), vec![dot]).unwrap(),
                    );
                }
            }
            Op::Scale(x, c) => acc(*x, g.map(|e| e * c)),
            Op::MulConst(x, c) => acc(*x, g.zip_map(c, |a, b| a * b).unwrap()),
            Op::AddConst(x) => acc(*x, g.clone()),
            Op::Matmul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = g.len() / n.max(1);
                let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
                if self.rg(*x) {
                    let mut dx = vec![0.0; rows * k];
                    for r in 0..rows {
                        let gr = &gd[r * n..(r + 1) * n];
                        for i in 0..k {
                            let wr = &wd[i * n..(i + 1) * n];
                            dx[r * k + i] = gr.iter().zip(wr).map(|(a, b)| a * b).sum();
                        }
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; k * n];
                    for r in 0..rows {
                        let gr = &gd[r * n..(r + 1) * n];
                        for i in 0..k {
                            let xval = xd[r * k + i];
                            if xval == 0.0 {
                                continue;
                            }
                            for (o, &gv) in dw[i * n..(i + 1) * n].iter_mut().zip(gr) {
                                *o += xval * gv;
                            }
                        }
                    }
                    acc(*w, Tensor::new(wv.shape().to_vec(), dw).unwrap());
                }
            }
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, |gv, s| gv * s * (1.0 - s)).unwrap()),
            Op::Softplus(x) => {
                let xv = self.value(*x);
                acc(
                    *x,
                    g.zip_map(xv, |gv, t| gv * ops::sigmoid_scalar(t)).unwrap(),
                )
            }
            Op::Tanh(x) => acc(*x, g.zip_map(y, |gv, t| gv * (1.0 - t * t)).unwrap()),
            Op::Exp(x) => acc(*x, g.zip_map(y, |gv, e| gv * e).unwrap()),
            Op::Ln(x) => acc(*x, g.zip_map(self.value(*x), |gv, t| gv / t).unwrap()),
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = ops::axis_layout(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|k| yd[base + k * inner] * gd[base + k * inner])
                            .sum();
                        for k in 0..len {
                            let j = base + k * inner;
                            dx[j] = yd[j] * (gd[j] - dot);
                        }
                    }
                }
                acc(*x, Tensor::new(y.shape().to_vec(), dx).unwrap());
            }
            Op::ModeMul(a, b, mode) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (da, db) = mode_multiply_vjp(av, bv, g, *mode, self.rg(*a), self.rg(*b));
                if let Some(da) = da {
                    acc(*a, da);
                }
                if let Some(db) = db {
                    acc(*b, db);
                }
            }
            Op::Gather(x, index) => {
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.len()];
                for (gv, ix) in g.data().iter().zip(index.iter()) {
                    if let Some(j) = ix {
                        dx[*j] += gv;
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
            }
            Op::ConcatLast(parts) => {
                let total = g.last_dim();
                let rows = g.len() / total.max(1);
                let mut col = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.last_dim();
                    if self.rg(p) {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * total + col..r * total + col + w]);
                        }
                        acc(p, Tensor::new(pv.shape().to_vec(), dp).unwrap());
                    }
                    col += w;
                }
            }
            Op::Sum(x) => {
                let gv = g.item();
                acc(*x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::Mse(pred, target) => {
                let pv = self.value(*pred);
                let scale = 2.0 * g.item() / target.len().max(1) as f64;
                acc(*pred, pv.zip_map(target, |p, t| scale * (p - t)).unwrap());
            }
            Op::Custom(op, inputs) => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let deltas = op.backward(&values, y, g);
                for (&v, d) in inputs.iter().zip(deltas) {
                    if let Some(d) = d {
                        acc(v, d);
                    }
                }
            }
        }
    }
}

fn mode_multiply_vjp(
    a: &Tensor,
    b: &Tensor,
    g: &Tensor,
    mode: usize,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (p, n, d) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut da = need_a.then(|| vec![0.0; ad.len()]);
    let mut db = need_b.then(|| vec![0.0; bd.len()]);
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
    match mode {
        1 => {
            for pi in 0..p {
                for q in 0..p {
                    for ni in 0..n {
                        let gs = &gd[(pi * n + ni) * d..(pi * n + ni + 1) * d];
                        let bo = (q * n + ni) * d;
                        let ai = (pi * p + q) * n + ni;
                        if let Some(da) = da.as_mut() {
                            da[ai] = dot(gs, &bd[bo..bo + d]);
                        }
                        if let Some(db) = db.as_mut() {
                            let w = ad[ai];
                            for (o, &gv) in db[bo..bo + d].iter_mut().zip(gs) {
                                *o += w * gv;
                            }
                        }
                    }
                }
            }
        }
        _ => {
            for pi in 0..p {
                for ni in 0..n {
                    let gs = &gd[(pi * n + ni) * d..(pi * n + ni + 1) * d];
                    for m in 0..n {
                        let bo = (pi * n + m) * d;
                        let ai = (pi * n + ni) * n + m;
                        if let Some(da) = da.as_mut() {
                            da[ai] = dot(gs, &bd[bo..bo + d]);
                        }
                        if let Some(db) = db.as_mut() {
                            let w = ad[ai];
                            for (o, &gv) in db[bo..bo + d].iter_mut().zip(gs) {
                                *o += w * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        da.map(|v| Tensor::new(a.shape().to_vec(), v).unwrap()),
        db.map(|v| Tensor::new(b.shape().to_vec(), v).unwrap()),
    )
}

/// Result of a backward pass.
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn dual(&self, graph: &Graph, v: Var) -> DualTensor {
        let value = graph.value(v).clone();
        let adjoint = self
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(value.shape()));
        DualTensor { value, adjoint }
    }

    /// Gradients of every parameter leaf, summed when a parameter was
    /// placed on the tape more than once.
    pub fn param_grads(&self, graph: &Graph) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for (i, node) in graph.nodes.iter().enumerate() {
            let Some(id) = node.param else { continue };
            let grad = self
                .grads
                .get(i)
                .and_then(Option::as_ref)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, t)) => {
                    for (e, d) in t.data_mut().iter_mut().zip(grad.data()) {
                        *e += d;
                    }
                }
                None => out.push((id, grad)),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
