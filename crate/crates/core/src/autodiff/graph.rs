//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node whose inputs are earlier nodes, so the node
//! vector is already a topological order and `backward` is a single reverse
//! sweep.

use indexmap::IndexMap;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{self, axis_layout, reduced_shape, Tensor};
use crate::types::Real;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise kinds exposed through [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Exp,
    Log,
    Negate,
    Add,
    Multiply,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    AddBias(Var, Var),
    Softmax(Var, usize),
    MeanPool(Var, usize),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    Sum(Var),
    Scale(Var, T),
    CrossEntropy { logits: Var, target: usize, probs: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A recorded forward computation.
///
/// Parameters are named leaves; when the graph is built over a
/// [`ParamStore`], [`Graph::param`] pulls tensors from the store on first
/// use and returns the cached leaf afterwards.
pub struct Graph<'p, T: Real> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
    store: Option<&'p ParamStore<T>>,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Gradients<T>(IndexMap<String, Tensor<T>>);

impl<T: Real> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> IndexMap<String, Tensor<T>> {
        self.0
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: IndexMap::new(),
            store: None,
        }
    }

    pub fn with_store(store: &'p ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Names of parameters registered so far, in registration order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a trainable leaf under a fresh name.
    pub fn param_leaf(&mut self, name: &str, value: Tensor<T>) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(Error::Contract(format!("parameter {name} registered twice")));
        }
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Looks up `name` in the backing store, registering it on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let store = self.store.ok_or_else(|| Error::Lookup {
            kind: "parameter (graph has no store)",
            name: name.to_string(),
        })?;
        let value = store.get(name)?.clone();
        self.param_leaf(name, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "multiply", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Real::tanh_act);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = x.data().iter().find(|v| **v <= T::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive element {bad}"),
            });
        }
        let out = x.map(|v| v.ln());
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn elementwise(&mut self, kind: Elementwise, x: Var, y: Option<Var>) -> Result<Var> {
        let binary = |y: Option<Var>| {
            y.ok_or_else(|| Error::Contract(format!("{kind:?} needs a second operand")))
        };
        match kind {
            Elementwise::Sigmoid => Ok(self.sigmoid(x)),
            Elementwise::Exp => Ok(self.exp(x)),
            Elementwise::Log => self.log(x),
            Elementwise::Negate => Ok(self.neg(x)),
            Elementwise::Add => {
                let y = binary(y)?;
                self.add(x, y)
            }
            Elementwise::Multiply => {
                let y = binary(y)?;
                self.mul(x, y)
            }
        }
    }

    /// `x + b` with `b` of shape `[q]` broadcast over the rows of `x: [m, q]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        let q = *xs.last().unwrap_or(&0);
        if xs.len() != 2 || bs != [q] {
            return Err(Error::dim("affine bias", xs, bs));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(q) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o = *o + bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `X·W + b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        Ok(self.push(out, Op::Softmax(a, axis)))
    }

    pub fn mean_pool(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).mean_axis(axis)?;
        Ok(self.push(out, Op::MeanPool(a, axis)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Concatenates tensors that agree on every dimension except `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Contract(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_layout(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis)))
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Contract(format!(
                "slice [{start}, {}) on axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = axis_layout(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            data.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::Slice { input: a, axis, start }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    /// `-log softmax(logits)[target]`, evaluated with log-sum-exp. The
    /// logits are read as a flat vector whatever their shape.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(Error::Contract(format!(
                "cross-entropy target {target} outside {} logits",
                z.len()
            )));
        }
        let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let loss = total.ln() + max - z[target];
        let probs = exps.into_iter().map(|e| e / total).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar node. Returns a gradient for every
    /// parameter registered on the graph and, when a store backs the graph,
    /// a zero gradient for each stored parameter the loss never touched.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut grads = self.backward_nodes(loss)?;
        let mut take = |v: Var| -> Result<Tensor<T>> {
            let shape = self.shape(v).to_vec();
            match grads[v.0].take() {
                Some(g) => Tensor::new(shape, g),
                None => Ok(Tensor::zeros(&shape)),
            }
        };
        let mut out = IndexMap::new();
        if let Some(store) = self.store {
            for (name, t) in store.iter() {
                let g = match self.params.get(name) {
                    Some(&v) => take(v)?,
                    None => Tensor::zeros(t.shape()),
                };
                out.insert(name.clone(), g);
            }
        }
        for (name, &v) in &self.params {
            if !out.contains_key(name) {
                out.insert(name.clone(), take(v)?);
            }
        }
        Ok(Gradients(out))
    }

    /// Gradient of the scalar `loss` with respect to an arbitrary node.
    pub fn grad_wrt(&self, loss: Var, wrt: Var) -> Result<Tensor<T>> {
        let grads = self.backward_nodes(loss)?;
        let shape = self.shape(wrt).to_vec();
        match &grads[wrt.0] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(&shape)),
        }
    }

    fn backward_nodes(&self, loss: Var) -> Result<Vec<Option<Vec<T>>>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    tensor::matmul_nt_acc(&g, bv.data(), m, n, k, slot(&mut grads, *a, m * k));
                    tensor::matmul_tn_acc(av.data(), &g, m, k, n, slot(&mut grads, *b, k * n));
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    let gt = tensor::transpose_raw(&g, s[0], s[1]);
                    axpy(slot(&mut grads, *a, gt.len()), &gt);
                }
                Op::Add(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), &g);
                    axpy(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    axpy(slot(&mut grads, *a, g.len()), &g);
                    for (o, &d) in slot(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *o = *o - d;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    zip_acc(slot(&mut grads, *a, g.len()), &g, bv, |d, y| d * y);
                    zip_acc(slot(&mut grads, *b, g.len()), &g, av, |d, x| d * x);
                }
                Op::Neg(a) => {
                    for (o, &d) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *o = *o - d;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    zip_acc(slot(&mut grads, *a, g.len()), &g, y, |d, y| d * y * (T::one() - y));
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    zip_acc(slot(&mut grads, *a, g.len()), &g, y, |d, y| d * (T::one() - y * y));
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    zip_acc(slot(&mut grads, *a, g.len()), &g, y, |d, y| d * y);
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    zip_acc(slot(&mut grads, *a, g.len()), &g, x, |d, x| d / x);
                }
                Op::AddBias(x, b) => {
                    axpy(slot(&mut grads, *x, g.len()), &g);
                    let q = self.shape(*b)[0];
                    let gb = slot(&mut grads, *b, q);
                    for row in g.chunks(q) {
                        axpy(gb, row);
                    }
                }
                Op::Softmax(a, axis) => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_layout(node.value.shape(), *axis);
                    let ga = slot(&mut grads, *a, g.len());
                    for o in 0..outer {
                        for k in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + k;
                            let dot: T = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum();
                            for i in 0..len {
                                let j = idx(i);
                                ga[j] = ga[j] + y[j] * (g[j] - dot);
                            }
                        }
                    }
                }
                Op::MeanPool(a, axis) => {
                    let shape = self.shape(*a).to_vec();
                    let (outer, len, inner) = axis_layout(&shape, *axis);
                    let scale = T::one() / T::from_f64(len as f64);
                    let ga = slot(&mut grads, *a, outer * len * inner);
                    for o in 0..outer {
                        for i in 0..len {
                            let dst = &mut ga[(o * len + i) * inner..(o * len + i + 1) * inner];
                            for (d, &gv) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *d = *d + gv * scale;
                            }
                        }
                    }
                    debug_assert_eq!(reduced_shape(&shape, *axis), node.value.shape());
                }
                Op::Reshape(a) => axpy(slot(&mut grads, *a, g.len()), &g),
                Op::Concat(parts, axis) => {
                    let (outer, total, inner) = axis_layout(node.value.shape(), *axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = self.shape(*p)[*axis];
                        let gp = slot(&mut grads, *p, outer * len * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            axpy(
                                &mut gp[o * len * inner..(o + 1) * len * inner],
                                &g[from..from + len * inner],
                            );
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let shape = self.shape(*input).to_vec();
                    let (outer, full, inner) = axis_layout(&shape, *axis);
                    let len = node.value.shape()[*axis];
                    let gi = slot(&mut grads, *input, outer * full * inner);
                    for o in 0..outer {
                        let to = (o * full + start) * inner;
                        axpy(
                            &mut gi[to..to + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    for o in slot(&mut grads, *a, n).iter_mut() {
                        *o = *o + g[0];
                    }
                }
                Op::Scale(a, c) => {
                    for (o, &d) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *o = *o + d * *c;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let gl = slot(&mut grads, *logits, probs.len());
                    for (j, (o, &p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { T::one() } else { T::zero() };
                        *o = *o + g[0] * (p - onehot);
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn axpy<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn zip_acc<T: Real>(dst: &mut [T], g: &[T], other: &[T], f: impl Fn(T, T) -> T) {
    for ((d, &gv), &ov) in dst.iter_mut().zip(g).zip(other) {
        *d = *d + f(gv, ov);
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
