//! Parameter storage and the parameterized layers the blocks are built from.

use crate::error::{Error, Result};
use crate::nn::init::{conv_fans, glorot_uniform};
use crate::nn::{BatchStats, BnMode, Padding};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Named<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Trainable parameters plus non-trainable buffers (BN running statistics),
/// each under a unique dotted name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Named<T>>,
    buffers: Vec<Named<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn params(&self) -> &[Named<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Named<T>] {
        &self.buffers
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Named<T>> {
        self.params.iter_mut()
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Named<T>> {
        self.buffers.iter_mut()
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn num_trainable(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |v: &[Named<T>]| {
            v.iter()
                .map(|n| Named {
                    name: n.name.clone(),
                    value: n.value.cast(),
                })
                .collect()
        };
        ParamStore {
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }

    /// Folds one batch's statistics into the running mean/variance.
    pub fn apply_bn_update(&mut self, update: &BnUpdate<T>) {
        let m = T::of(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (buf, fresh) in [(update.mean, &update.stats.mean), (update.var, &update.stats.var)] {
            for (r, &b) in self.buffers[buf.0].value.data_mut().iter_mut().zip(fresh) {
                *r = m * *r + one_m * b;
            }
        }
    }
}

/// Creates parameters in a deterministic order from one seeded stream.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: Rng,
    prefix: Vec<String>,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: Rng) -> Self {
        Builder {
            store,
            rng,
            prefix: Vec::new(),
        }
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.to_string());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn path(&self, local: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(local.to_string());
        parts.join(".")
    }

    pub fn param(&mut self, local: &str, value: Tensor<T>) -> ParamId {
        let name = self.path(local);
        debug_assert!(self.store.params.iter().all(|p| p.name != name), "duplicate {name}");
        self.store.params.push(Named { name, value });
        ParamId(self.store.params.len() - 1)
    }

    pub fn buffer(&mut self, local: &str, value: Tensor<T>) -> BufferId {
        let name = self.path(local);
        self.store.buffers.push(Named { name, value });
        BufferId(self.store.buffers.len() - 1)
    }

    pub fn glorot(&mut self, local: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let t = glorot_uniform(&mut self.rng, shape, fan_in, fan_out);
        self.param(local, t)
    }
}

/// Batch statistics waiting to be folded into running averages.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats<T>,
}

/// Forward-pass context: the tape, parameter leaves and normalization mode.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    vars: &'a [Var],
    store: &'a ParamStore<T>,
    pub train: bool,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, vars: &'a [Var], store: &'a ParamStore<T>, train: bool) -> Self {
        Ctx {
            tape,
            vars,
            store,
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.tape.push_scope(name);
        let r = f(self);
        self.tape.pop_scope();
        r
    }
}

/// Registers every parameter of `store` on `tape` as a leaf.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, requires_grad: bool) -> Vec<Var> {
    store
        .params()
        .iter()
        .map(|p| tape.leaf(p.value.clone(), requires_grad))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// 2-D convolution with bias, weight `[k, k, in, out]`.
#[derive(Debug, Clone)]
pub struct Conv {
    name: String,
    pub w: ParamId,
    pub b: Option<ParamId>,
    stride: usize,
    pad: Padding,
}

impl Conv {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let pad = if stride == 1 {
            Padding::same(kernel, kernel)
        } else {
            let p = (kernel - 1) / 2;
            Padding::new(p, p, p, p)
        };
        Self::with_padding(b, name, cin, cout, kernel, stride, pad, true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_padding<T: Scalar>(
        b: &mut Builder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: Padding,
        bias: bool,
    ) -> Self {
        let shape = [kernel, kernel, cin, cout];
        let (fi, fo) = conv_fans(&shape);
        let (w, bias) = b.scope(name, |b| {
            let w = b.glorot("w", &shape, fi, fo);
            let bias = bias.then(|| b.param("b", Tensor::zeros([cout])));
            (w, bias)
        });
        Conv {
            name: name.to_string(),
            w,
            b: bias,
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        cx.scope(&self.name, |cx| {
            let (w, b) = (cx.var(self.w), self.b.map(|b| cx.var(b)));
            cx.tape.conv2d(x, w, b, (self.stride, self.stride), self.pad)
        })
    }
}

/// Transposed convolution that doubles both spatial dims.
#[derive(Debug, Clone)]
pub struct Upsample {
    name: String,
    w: ParamId,
    b: ParamId,
    kernel: usize,
}

impl Upsample {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize, kernel: usize) -> Self {
        let shape = [kernel, kernel, cout, cin];
        // Keras fans for a transposed kernel: receptive field times the
        // channel counts as stored.
        let rf = kernel * kernel;
        let (w, bias) = b.scope(name, |b| {
            (b.glorot("w", &shape, rf * cout, rf * cin), b.param("b", Tensor::zeros([cout])))
        });
        Upsample {
            name: name.to_string(),
            w,
            b: bias,
            kernel,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let k = self.kernel;
        // Doubling: out = 2*in needs pad_total + 1 = k - 1 + output_padding.
        let (lo, hi) = ((k - 1) / 2, k / 2);
        let pad = Padding::new(lo, hi, lo, hi);
        let op = 2 + lo + hi - k;
        cx.scope(&self.name, |cx| {
            let (w, b) = (cx.var(self.w), cx.var(self.b));
            cx.tape.conv_transpose2d(x, w, Some(b), (2, 2), pad, (op, op))
        })
    }
}

/// Fully connected layer, weight `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, din: usize, dout: usize) -> Self {
        let (w, bias) = b.scope(name, |b| {
            (b.glorot("w", &[din, dout], din, dout), b.param("b", Tensor::zeros([dout])))
        });
        Dense {
            name: name.to_string(),
            w,
            b: bias,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        cx.scope(&self.name, |cx| {
            let (w, b) = (cx.var(self.w), cx.var(self.b));
            cx.tape.dense(x, w, Some(b))
        })
    }
}

/// Per-channel batch normalization over every axis but the last.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    name: String,
    gamma: ParamId,
    beta: ParamId,
    mean: BufferId,
    var: BufferId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, channels: usize) -> Self {
        b.scope(name, |b| BatchNorm {
            name: name.to_string(),
            gamma: b.param("gamma", Tensor::ones([channels])),
            beta: b.param("beta", Tensor::zeros([channels])),
            mean: b.buffer("running_mean", Tensor::zeros([channels])),
            var: b.buffer("running_var", Tensor::ones([channels])),
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        cx.scope(&self.name, |cx| {
            let (g, b) = (cx.var(self.gamma), cx.var(self.beta));
            let eps = T::of(BN_EPSILON);
            if cx.train {
                let (y, stats) = cx.tape.batch_norm(x, g, b, BnMode::Train { epsilon: eps })?;
                let stats = stats.ok_or_else(|| Error::Numerical("missing batch statistics".into()))?;
                cx.bn_updates.push(BnUpdate {
                    mean: self.mean,
                    var: self.var,
                    stats,
                });
                Ok(y)
            } else {
                let mode = BnMode::Eval {
                    mean: cx.store.buffer(self.mean).data(),
                    var: cx.store.buffer(self.var).data(),
                    epsilon: eps,
                };
                Ok(cx.tape.batch_norm(x, g, b, mode)?.0)
            }
        })
    }
}

/// Convolution, activation, then batch normalization.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    name: String,
    conv: Conv,
    act: Activation,
    bn: BatchNorm,
}

impl ConvBlock {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        b.scope(name, |b| ConvBlock {
            name: name.to_string(),
            conv: Conv::new(b, "conv", cin, cout, kernel, stride),
            act: Activation::Relu,
            bn: BatchNorm::new(b, "bn", cout),
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        cx.scope(&self.name, |cx| {
            let y = self.conv.forward(cx, x)?;
            let y = cx.scope("act", |cx| Ok(self.act.apply(cx.tape, y)))?;
            self.bn.forward(cx, y)
        })
    }
}

/// Two conv-ReLU-BN stages with an identity shortcut.
#[derive(Debug, Clone)]
pub struct ResUnit {
    name: String,
    c1: ConvBlock,
    c2: ConvBlock,
}

impl ResUnit {
    pub fn new<T: Scalar>(b: &mut Builder<T>, name: &str, channels: usize, kernel: usize) -> Self {
        b.scope(name, |b| ResUnit {
            name: name.to_string(),
            c1: ConvBlock::new(b, "c1", channels, channels, kernel, 1),
            c2: ConvBlock::new(b, "c2", channels, channels, kernel, 1),
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        cx.scope(&self.name, |cx| {
            let h = self.c1.forward(cx, x)?;
            let h = self.c2.forward(cx, h)?;
            cx.tape.add(x, h)
        })
    }
}
