//! Reverse-mode differentiation on a recorded tape.
//!
//! A [`Graph`] is built by calling its operations in forward order; every
//! call appends a node holding the computed value and whatever the backward
//! rule needs. [`Graph::backward`] walks the tape in reverse from a scalar
//! loss and returns gradients for every parameter leaf.

use std::sync::Arc;

use super::kernels::{self, ConvSpec, BN_EPS, BN_MOMENTUM};
use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Batch statistics to fold into a store's running buffers.
#[derive(Clone, Debug)]
pub struct RunningUpdate {
    pub(crate) tag: u64,
    pub(crate) mean: ParamId,
    pub(crate) var: ParamId,
    pub(crate) batch_mean: Vec<f64>,
    /// Unbiased.
    pub(crate) batch_var: Vec<f64>,
    pub(crate) momentum: f64,
}

/// Running-statistics buffers of one normalization layer.
#[derive(Clone, Copy, Debug)]
pub struct RunningStats {
    pub mean: ParamId,
    pub var: ParamId,
}

enum Op {
    Leaf,
    Param { tag: u64, id: ParamId },
    Dense { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec, cols: Vec<f64> },
    ConvT { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    BatchNorm { x: Var, scale: Var, shift: Var, xhat: Tensor, inv_std: Vec<f64>, train: bool },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Reshape(Var),
    Narrow { x: Var, start: usize },
    Concat(Var, Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Gradients keyed by `(store tag, parameter id)`.
#[derive(Debug, Default)]
pub struct Gradients {
    entries: Vec<(u64, ParamId, Tensor)>,
}

impl Gradients {
    #[cfg(test)]
    pub(crate) fn from_entries(entries: Vec<(u64, ParamId, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, ParamId, &Tensor)> {
        self.entries.iter().map(|(t, id, g)| (*t, *id, g))
    }

    pub fn get(&self, store: &ParameterStore, id: ParamId) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(t, i, _)| *t == store.tag() && *i == id)
            .map(|(_, _, g)| g)
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    keep_for_backward: bool,
    running: Vec<RunningUpdate>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            keep_for_backward: true,
            running: Vec::new(),
        }
    }

    /// A graph that skips backward-only buffers. `backward` still works for
    /// ops that do not need them, but convolution gradients are unavailable.
    pub fn inference() -> Self {
        Self {
            keep_for_backward: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.shared_value(id),
            op: Op::Param { tag: store.tag(), id },
        });
        Var(self.nodes.len() - 1)
    }

    /// Pending batch-norm running-statistics updates recorded in train mode.
    pub fn take_running_updates(&mut self) -> Vec<RunningUpdate> {
        std::mem::take(&mut self.running)
    }

    /// Applies pending running-statistics updates to `store`.
    pub fn commit_running_stats(&mut self, store: &mut ParameterStore) {
        let (mine, rest): (Vec<_>, Vec<_>) =
            self.take_running_updates().into_iter().partition(|u| u.tag == store.tag());
        store.apply_running_updates(&mine);
        self.running = rest;
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = kernels::dense_fwd(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Dense { x, w, b }))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (y, cols) = kernels::conv1d_fwd(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
            self.keep_for_backward,
        )?;
        Ok(self.push(y, Op::Conv { x, w, b, spec, cols }))
    }

    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = kernels::conv_transpose1d_fwd(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        Ok(self.push(y, Op::ConvT { x, w, b, spec }))
    }

    /// Per-channel normalization over batch and length. In train mode the
    /// batch statistics are used and a running-statistics update is queued;
    /// in eval mode the running buffers of `stats_store` are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        stats: RunningStats,
        stats_store: &ParameterStore,
        mode: Mode,
    ) -> Result<Var> {
        let xv = Arc::clone(&self.nodes[x.0].value);
        let (b, _, l) = kernels::bn_dims(&xv)?;
        let (mean, var, train) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(Error::DegenerateBatch);
                }
                let (m, v) = kernels::channel_stats(&xv)?;
                let n = (b * l) as f64;
                self.running.push(RunningUpdate {
                    tag: stats_store.tag(),
                    mean: stats.mean,
                    var: stats.var,
                    batch_mean: m.clone(),
                    batch_var: v.iter().map(|v| v * n / (n - 1.0)).collect(),
                    momentum: BN_MOMENTUM,
                });
                (m, v, true)
            }
            Mode::Eval => (
                stats_store.value(stats.mean).data().to_vec(),
                stats_store.value(stats.var).data().to_vec(),
                false,
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (y, xhat) = kernels::bn_apply(&xv, &mean, &inv_std, self.value(scale), self.value(shift))?;
        Ok(self.push(y, Op::BatchNorm { x, scale, shift, xhat, inv_std, train }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Tanh => self.tanh(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::exp);
        self.push(y, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        self.push(y, Op::Square(x))
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

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(av.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.zip(a, b, |x, y| x + y);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.zip(a, b, |x, y| x - y);
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.zip(a, b, |x, y| x * y);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| c * v);
        self.push(y, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::AddScalar(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = (*self.nodes[x.0].value).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Slice `start..start + len` along axis 1.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() < 2 || start + len > xv.dim(1) {
            return Err(Error::shape(format!("narrow {start}+{len} out of {:?}", xv.shape())));
        }
        let inner: usize = xv.shape()[2..].iter().product();
        let (b, c) = (xv.dim(0), xv.dim(1));
        let mut shape = xv.shape().to_vec();
        shape[1] = len;
        let mut data = Vec::with_capacity(b * len * inner);
        for i in 0..b {
            let base = i * c * inner;
            data.extend_from_slice(&xv.data()[base + start * inner..base + (start + len) * inner]);
        }
        let y = Tensor::from_vec(&shape, data)?;
        Ok(self.push(y, Op::Narrow { x, start }))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() < 2
            || av.ndim() != bv.ndim()
            || av.dim(0) != bv.dim(0)
            || av.shape()[2..] != bv.shape()[2..]
        {
            return Err(Error::shape(format!("concat {:?} with {:?}", av.shape(), bv.shape())));
        }
        let inner: usize = av.shape()[2..].iter().product();
        let (n, ca, cb) = (av.dim(0), av.dim(1), bv.dim(1));
        let mut shape = av.shape().to_vec();
        shape[1] = ca + cb;
        let mut data = Vec::with_capacity(n * (ca + cb) * inner);
        for i in 0..n {
            data.extend_from_slice(&av.data()[i * ca * inner..(i + 1) * ca * inner]);
            data.extend_from_slice(&bv.data()[i * cb * inner..(i + 1) * cb * inner]);
        }
        let y = Tensor::from_vec(&shape, data)?;
        Ok(self.push(y, Op::Concat(a, b)))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf
    /// it depends on. Parameters it does not depend on get no entry.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::NoTape);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients::default();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(e) => e.axpy(1.0, &g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param { tag, id } => {
                    match out.entries.iter_mut().find(|(t, p, _)| t == tag && p == id) {
                        Some((_, _, g)) => g.axpy(1.0, &dy),
                        None => out.entries.push((*tag, *id, dy)),
                    }
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = kernels::dense_bwd(&dy, self.value(*x), self.value(*w));
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    if let Some(b) = b {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Conv { x, w, b, spec, cols } => {
                    if !self.keep_for_backward {
                        return Err(Error::NoTape);
                    }
                    let (dx, dw, db) =
                        kernels::conv1d_bwd(&dy, self.value(*x).shape(), self.value(*w), cols, spec);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    if let Some(b) = b {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::ConvT { x, w, b, spec } => {
                    let (dx, dw, db) =
                        kernels::conv_transpose1d_bwd(&dy, self.value(*x), self.value(*w), spec);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    if let Some(b) = b {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::BatchNorm { x, scale, shift, xhat, inv_std, train } => {
                    let sv = self.value(*scale);
                    let (dx, ds, dsh) = if *train {
                        kernels::bn_train_bwd(&dy, xhat, inv_std, sv)
                    } else {
                        kernels::bn_eval_bwd(&dy, xhat, inv_std, sv)
                    };
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *scale, ds);
                    acc(&mut grads, *shift, dsh);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut dx = dy;
                    for (d, v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let mut dx = dy;
                    for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= 1.0 - y * y;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Exp(x) => {
                    let mut dx = dy;
                    for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= y;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Square(x) => {
                    let mut dx = dy;
                    for (d, v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        *d *= 2.0 * v;
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, dy.clone());
                    acc(&mut grads, *a, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, dy.map(|v| -v));
                    acc(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let mut da = dy.clone();
                    for (d, v) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *d *= v;
                    }
                    let mut db = dy;
                    for (d, v) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *d *= v;
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(x, c) => acc(&mut grads, *x, dy.map(|v| c * v)),
                Op::AddScalar(x) => acc(&mut grads, *x, dy),
                Op::Sum(x) => {
                    let g = dy.item();
                    acc(&mut grads, *x, Tensor::full(self.value(*x).shape(), g));
                }
                Op::Reshape(x) => {
                    let dx = dy.reshape(self.value(*x).shape())?;
                    acc(&mut grads, *x, dx);
                }
                Op::Narrow { x, start } => {
                    let xv = self.value(*x);
                    let inner: usize = xv.shape()[2..].iter().product();
                    let (b, c) = (xv.dim(0), xv.dim(1));
                    let len = dy.dim(1);
                    let mut dx = Tensor::zeros(xv.shape());
                    for i in 0..b {
                        let dst = i * c * inner + start * inner;
                        dx.data_mut()[dst..dst + len * inner]
                            .copy_from_slice(&dy.data()[i * len * inner..(i + 1) * len * inner]);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let inner: usize = av.shape()[2..].iter().product();
                    let (n, ca, cb) = (av.dim(0), av.dim(1), bv.dim(1));
                    let mut da = Tensor::zeros(av.shape());
                    let mut db = Tensor::zeros(bv.shape());
                    for i in 0..n {
                        let src = i * (ca + cb) * inner;
                        da.data_mut()[i * ca * inner..(i + 1) * ca * inner]
                            .copy_from_slice(&dy.data()[src..src + ca * inner]);
                        db.data_mut()[i * cb * inner..(i + 1) * cb * inner]
                            .copy_from_slice(&dy.data()[src + ca * inner..src + (ca + cb) * inner]);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
            }
        }
        Ok(out)
    }
}
