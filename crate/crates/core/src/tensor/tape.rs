//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in creation
//! order, so node inputs always precede the node. [`Tape::backward`] consumes
//! the tape and walks it in reverse, summing gradient contributions into each
//! input. Leaves created with `requires_grad` receive their gradient in the
//! returned [`Gradients`].

use super::{Broadcast, Tensor};
use crate::error::{Error, Result};
use crate::nn::{self, ConvGeom, PoolKind};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    PoolSpatial {
        x: Var,
        kind: PoolKind,
        argmax: Vec<u32>,
    },
    PoolChannel {
        x: Var,
        kind: PoolKind,
        argmax: Vec<u32>,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
    scope: usize,
    flops: u64,
}

/// Append-only record of a forward computation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    scopes: Vec<String>,
    scope_stack: Vec<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            scopes: vec![String::new()],
            scope_stack: Vec::new(),
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(value, Op::Leaf, requires_grad, 0)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    // ---- scopes, used for per-layer accounting ----

    /// Enters a named scope; nested scopes join with `.`.
    pub fn push_scope(&mut self, name: &str) {
        let parent = self.current_scope();
        let full = if self.scopes[parent].is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.scopes[parent], name)
        };
        let id = match self.scopes.iter().position(|s| *s == full) {
            Some(id) => id,
            None => {
                self.scopes.push(full);
                self.scopes.len() - 1
            }
        };
        self.scope_stack.push(id);
    }

    pub fn pop_scope(&mut self) {
        self.scope_stack.pop();
    }

    fn current_scope(&self) -> usize {
        self.scope_stack.last().copied().unwrap_or(0)
    }

    /// Per-scope `(name, flops, output shape of the last node)` in first-use order.
    pub fn scope_report(&self) -> Vec<(String, u64, Vec<usize>)> {
        let mut order: Vec<usize> = Vec::new();
        let mut flops = vec![0u64; self.scopes.len()];
        let mut last_shape: Vec<Vec<usize>> = vec![Vec::new(); self.scopes.len()];
        for n in &self.nodes {
            if matches!(n.op, Op::Leaf) {
                continue;
            }
            if !order.contains(&n.scope) {
                order.push(n.scope);
            }
            flops[n.scope] += n.flops;
            last_shape[n.scope] = n.value.shape().to_vec();
        }
        order
            .into_iter()
            .map(|s| (self.scopes[s].clone(), flops[s], last_shape[s].clone()))
            .collect()
    }

    pub fn total_flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub(crate) fn push_node(
        &mut self,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
        flops: u64,
    ) -> Var {
        let scope = self.current_scope();
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            scope,
            flops,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise and structural primitives ----

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, Broadcast)> {
        let bc = Broadcast::new(op, self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); bc.out_shape.iter().product()];
        bc.for_each(|o, i, j| out[o] = f(av[i], bv[j]));
        Ok((Tensor::new(bc.out_shape.clone(), out)?, bc))
    }

    /// Elementwise sum; operands broadcast along size-1 dims of equal rank.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        let flops = value.numel() as u64;
        Ok(self.push_node(value, Op::Add(a, b, bc), rg, flops))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        let flops = value.numel() as u64;
        Ok(self.push_node(value, Op::Sub(a, b, bc), rg, flops))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        let flops = value.numel() as u64;
        Ok(self.push_node(value, Op::Mul(a, b, bc), rg, flops))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x]);
        let flops = value.numel() as u64;
        self.push_node(value, Op::Scale(x, c), rg, flops)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        let flops = value.numel() as u64;
        self.push_node(value, Op::Relu(x), rg, flops)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.any_grad(&[x]);
        let flops = value.numel() as u64;
        self.push_node(value, Op::Sigmoid(x), rg, flops)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let rg = self.any_grad(&[x]);
        let flops = value.numel() as u64;
        self.push_node(value, Op::Tanh(x), rg, flops)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.any_grad(&[x]);
        Ok(self.push_node(value, Op::Reshape(x), rg, 0))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("axis {} range {}..{} of {:?}", axis, start, start + len, shape),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push_node(Tensor::new(oshape, out)?, Op::Narrow { x, axis, start }, rg, 0))
    }

    /// Picks entry `index` of `axis` and drops that axis.
    pub fn index_axis(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let n = self.narrow(x, axis, index, 1)?;
        let mut shape = self.shape(n).to_vec();
        shape.remove(axis);
        self.reshape(n, &shape)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {} for {:?}", axis, base)));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} incompatible with {:?} on axis {}", s, base, axis),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        let rg = self.any_grad(xs);
        Ok(self.push_node(
            Tensor::new(oshape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
            0,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        let flops = self.value(x).numel() as u64;
        self.push_node(Tensor::scalar(s), Op::Sum(x), rg, flops)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.any_grad(&[x]);
        self.push_node(
            Tensor::scalar(s / T::of(n as f64)),
            Op::Mean(x),
            rg,
            n as u64,
        )
    }

    /// Mean squared error between `pred` and a same-shaped `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    // ---- reverse pass ----

    /// Differentiates the scalar `loss` and consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        Ok(Gradients { grads: leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(contrib.len(), self.nodes[v.0].value.numel());
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn reduce_to(&self, v: Var, bc: &Broadcast, g: &[T], which_a: bool, factor: Option<&[T]>) -> Vec<T> {
        let mut out = vec![T::zero(); self.nodes[v.0].value.numel()];
        bc.for_each(|o, ia, ib| {
            let (dst, other) = if which_a { (ia, ib) } else { (ib, ia) };
            let gv = match factor {
                Some(f) => g[o] * f[other],
                None => g[o],
            };
            out[dst] += gv;
        });
        out
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let negate_b = matches!(node.op, Op::Sub(..));
                if self.wants(*a) {
                    let ga = self.reduce_to(*a, bc, g, true, None);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = self.reduce_to(*b, bc, g, false, None);
                    if negate_b {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b, bc) => {
                if self.wants(*a) {
                    let ga = self.reduce_to(*a, bc, g, true, Some(val(*b)));
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = self.reduce_to(*b, bc, g, false, Some(val(*a)));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, c) => {
                let gx = g.iter().map(|&v| v * *c).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let gx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let gx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Conv2d { x, w, b, geom } => {
                if self.wants(*x) {
                    let dx = nn::conv::backward_data(g, val(*w), geom);
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let dw = nn::conv::backward_filter(val(*x), g, geom);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        self.accumulate(grads, *b, nn::conv::channel_sums(g, geom.out_c));
                    }
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                // `geom` describes the forward convolution this op is the adjoint of.
                if self.wants(*x) {
                    let dx = nn::conv::forward(g, val(*w), None, geom);
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let dw = nn::conv::backward_filter(g, val(*x), geom);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        self.accumulate(grads, *b, nn::conv::channel_sums(g, geom.in_c));
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let wshape = self.nodes[w.0].value.shape();
                let (din, dout) = (wshape[0], wshape[1]);
                let batch = self.nodes[x.0].value.numel() / din;
                if self.wants(*x) {
                    self.accumulate(grads, *x, nn::dense::backward_input(g, val(*w), batch, din, dout));
                }
                if self.wants(*w) {
                    self.accumulate(grads, *w, nn::dense::backward_weight(val(*x), g, batch, din, dout));
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        self.accumulate(grads, *b, nn::conv::channel_sums(g, dout));
                    }
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (dx, dgamma, dbeta) =
                    nn::batchnorm::backward_train(g, xhat, inv_std, val(*gamma));
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (dx, dgamma, dbeta) =
                    nn::batchnorm::backward_eval(g, xhat, inv_std, val(*gamma));
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::PoolSpatial { x, kind, argmax } => {
                let dx = nn::pool::spatial_backward(g, self.nodes[x.0].value.shape(), *kind, argmax);
                self.accumulate(grads, *x, dx);
            }
            Op::PoolChannel { x, kind, argmax } => {
                let dx = nn::pool::channel_backward(g, self.nodes[x.0].value.shape(), *kind, argmax);
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Narrow { x, axis, start } => {
                let shape = self.nodes[x.0].value.shape();
                let len = node.value.shape()[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut gx = vec![T::zero(); self.nodes[x.0].value.numel()];
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { xs, axis } => {
                let oshape = node.value.shape();
                let outer: usize = oshape[..*axis].iter().product();
                let inner: usize = oshape[*axis + 1..].iter().product();
                let total = oshape[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let len = self.nodes[v.0].value.shape()[*axis] * inner;
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let s = o * total + offset;
                            gv.extend_from_slice(&g[s..s + len]);
                        }
                        self.accumulate(grads, v, gv);
                    }
                    offset += len;
                }
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, *x, vec![g[0] / T::of(n as f64); n]);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Gradients of the leaves that required them, keyed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` was not a grad-requiring leaf reachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn max_abs(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .fold(T::zero(), |m, g| m.max(g.max_abs()))
    }

    pub fn has_non_finite(&self) -> bool {
        self.grads.iter().flatten().any(|g| g.has_non_finite())
    }
}
