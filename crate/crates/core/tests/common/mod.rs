//! Direct nested-loop transcriptions used as oracles. Everything accumulates
//! in f64 and indexes NHWC tensors by hand; nothing here touches im2col, GEMM
//! or the tape.
#![allow(dead_code)]

use stflow_core::blocks::{ChannelAttention, Cmu, Conv, Dense, Mu, ParamStore, SpatialAttention};
use stflow_core::nn::Padding;
use stflow_core::{Rng, Tensor};

pub fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform(-1.0, 1.0) as f32)
}

/// Overwrites every parameter with uniform values in [-r, r].
pub fn randomize(store: &mut ParamStore<f32>, r: f64, rng: &mut Rng) {
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.uniform(-r, r) as f32;
        }
    }
}

/// Largest `|a - o| / max(1, |o|)`.
pub fn max_err(actual: &[f32], oracle: &[f64]) -> f64 {
    assert_eq!(actual.len(), oracle.len(), "length mismatch");
    actual
        .iter()
        .zip(oracle)
        .map(|(&a, &o)| (a as f64 - o).abs() / o.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A feature map held as f64 with explicit dims.
#[derive(Debug, Clone)]
pub struct Map {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(b: usize, h: usize, w: usize, c: usize) -> Map {
        Map {
            b,
            h,
            w,
            c,
            v: vec![0.0; b * h * w * c],
        }
    }

    pub fn from(t: &Tensor<f32>) -> Map {
        let s = t.shape();
        Map {
            b: s[0],
            h: s[1],
            w: s[2],
            c: s[3],
            v: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn at(&self, b: usize, i: usize, j: usize, k: usize) -> f64 {
        self.v[((b * self.h + i) * self.w + j) * self.c + k]
    }

    pub fn at_mut(&mut self, b: usize, i: usize, j: usize, k: usize) -> &mut f64 {
        &mut self.v[((b * self.h + i) * self.w + j) * self.c + k]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Map {
        Map {
            v: self.v.iter().map(|&x| f(x)).collect(),
            ..self.clone()
        }
    }

    pub fn zip(&self, o: &Map, f: impl Fn(f64, f64) -> f64) -> Map {
        assert_eq!((self.b, self.h, self.w, self.c), (o.b, o.h, o.w, o.c));
        Map {
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        }
    }
}

fn f64s(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

/// out[b,i,j,o] = bias[o] + sum x[b, i*sh - top + a, j*sw - left + e, c] * w[a,e,c,o].
pub fn conv2d(x: &Map, w: &Tensor<f32>, bias: Option<&Tensor<f32>>, stride: (usize, usize), pad: Padding) -> Map {
    let s = w.shape();
    let (kh, kw, cin, cout) = (s[0], s[1], s[2], s[3]);
    assert_eq!(cin, x.c);
    let wv = f64s(w);
    let oh = (x.h + pad.top + pad.bottom - kh) / stride.0 + 1;
    let ow = (x.w + pad.left + pad.right - kw) / stride.1 + 1;
    let mut y = Map::zeros(x.b, oh, ow, cout);
    for b in 0..x.b {
        for i in 0..oh {
            for j in 0..ow {
                for o in 0..cout {
                    let mut acc = bias.map_or(0.0, |bb| bb.data()[o] as f64);
                    for a in 0..kh {
                        for e in 0..kw {
                            let r = (i * stride.0 + a) as isize - pad.top as isize;
                            let q = (j * stride.1 + e) as isize - pad.left as isize;
                            if r < 0 || q < 0 || r >= x.h as isize || q >= x.w as isize {
                                continue;
                            }
                            for c in 0..cin {
                                acc += x.at(b, r as usize, q as usize, c) * wv[((a * kw + e) * cin + c) * cout + o];
                            }
                        }
                    }
                    *y.at_mut(b, i, j, o) = acc;
                }
            }
        }
    }
    y
}

/// Scatter form: every input pixel deposits `x * w` into the output window it
/// came from. `w: [kh, kw, cout, cin]`.
pub fn conv_transpose2d(
    x: &Map,
    w: &Tensor<f32>,
    bias: Option<&Tensor<f32>>,
    stride: (usize, usize),
    pad: Padding,
    output_padding: (usize, usize),
) -> Map {
    let s = w.shape();
    let (kh, kw, cout, cin) = (s[0], s[1], s[2], s[3]);
    assert_eq!(cin, x.c);
    let wv = f64s(w);
    let oh = (x.h - 1) * stride.0 + kh + output_padding.0 - pad.top - pad.bottom;
    let ow = (x.w - 1) * stride.1 + kw + output_padding.1 - pad.left - pad.right;
    let mut y = Map::zeros(x.b, oh, ow, cout);
    for b in 0..x.b {
        for i in 0..x.h {
            for j in 0..x.w {
                for a in 0..kh {
                    for e in 0..kw {
                        let r = (i * stride.0 + a) as isize - pad.top as isize;
                        let q = (j * stride.1 + e) as isize - pad.left as isize;
                        if r < 0 || q < 0 || r >= oh as isize || q >= ow as isize {
                            continue;
                        }
                        for o in 0..cout {
                            for c in 0..cin {
                                *y.at_mut(b, r as usize, q as usize, o) +=
                                    x.at(b, i, j, c) * wv[((a * kw + e) * cout + o) * cin + c];
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(bb) = bias {
        for (k, v) in y.v.iter_mut().enumerate() {
            *v += bb.data()[k % cout] as f64;
        }
    }
    y
}

/// `[b, h, w, c] -> [b, 1, 1, c]`.
pub fn pool_spatial(x: &Map, max: bool) -> Map {
    let mut y = Map::zeros(x.b, 1, 1, x.c);
    for b in 0..x.b {
        for k in 0..x.c {
            let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
            for i in 0..x.h {
                for j in 0..x.w {
                    let v = x.at(b, i, j, k);
                    acc = if max { acc.max(v) } else { acc + v };
                }
            }
            *y.at_mut(b, 0, 0, k) = if max { acc } else { acc / (x.h * x.w) as f64 };
        }
    }
    y
}

/// `[b, h, w, c] -> [b, h, w, 1]`.
pub fn pool_channels(x: &Map, max: bool) -> Map {
    let mut y = Map::zeros(x.b, x.h, x.w, 1);
    for b in 0..x.b {
        for i in 0..x.h {
            for j in 0..x.w {
                let mut acc = if max { f64::NEG_INFINITY } else { 0.0 };
                for k in 0..x.c {
                    let v = x.at(b, i, j, k);
                    acc = if max { acc.max(v) } else { acc + v };
                }
                *y.at_mut(b, i, j, 0) = if max { acc } else { acc / x.c as f64 };
            }
        }
    }
    y
}

fn conv_layer(x: &Map, conv: &Conv, store: &ParamStore<f32>, pad: Padding) -> Map {
    conv2d(x, store.param(conv.w), conv.b.map(|b| store.param(b)), (1, 1), pad)
}

fn same(k: usize) -> Padding {
    Padding::new((k - 1) / 2, k / 2, (k - 1) / 2, k / 2)
}

/// MU(h) = s(W1*h) . tanh(s(W2*h) . h + s(W3*h) . tanh(W4*h)), biases included.
pub fn mu(h: &Map, unit: &Mu, store: &ParamStore<f32>, k: usize) -> Map {
    let g1 = conv_layer(h, &unit.g1, store, same(k)).map(sigmoid);
    let g2 = conv_layer(h, &unit.g2, store, same(k)).map(sigmoid);
    let g3 = conv_layer(h, &unit.g3, store, same(k)).map(sigmoid);
    let u = conv_layer(h, &unit.u, store, same(k)).map(f64::tanh);
    let inner = g2.zip(h, |a, b| a * b).zip(&g3.zip(&u, |a, b| a * b), |a, b| a + b);
    g1.zip(&inner.map(f64::tanh), |a, b| a * b)
}

/// CMU(older, recent) = s(Wo*H) . tanh(Wh*H), H = MU(MU(older)) + MU'(recent).
pub fn cmu(older: &Map, recent: &Map, unit: &Cmu, store: &ParamStore<f32>, k: usize) -> Map {
    let h1 = mu(&mu(older, &unit.older, store, k), &unit.older, store, k);
    let h2 = mu(recent, &unit.recent, store, k);
    let h = h1.zip(&h2, |a, b| a + b);
    let o = conv_layer(&h, &unit.wo, store, same(k)).map(sigmoid);
    let c = conv_layer(&h, &unit.wh, store, same(k)).map(f64::tanh);
    o.zip(&c, |a, b| a * b)
}

fn dense(x: &[f64], layer: &Dense, store: &ParamStore<f32>) -> Vec<f64> {
    let w = store.param(layer.w);
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let b = store.param(layer.b).data();
    (0..dout)
        .map(|o| b[o] as f64 + (0..din).map(|i| x[i] * w.data()[i * dout + o] as f64).sum::<f64>())
        .collect()
}

/// d . s(L . MLP(maxpool d) + G . MLP(avgpool d)), MLP = fc2(relu(fc1(.))).
pub fn channel_attention(d: &Map, att: &ChannelAttention, store: &ParamStore<f32>) -> Map {
    let lambda = store.param(att.lambda).data();
    let gamma = store.param(att.gamma).data();
    let (mx, av) = (pool_spatial(d, true), pool_spatial(d, false));
    let mut out = d.clone();
    for b in 0..d.b {
        let mlp = |p: &Map| {
            let v: Vec<f64> = (0..d.c).map(|k| p.at(b, 0, 0, k)).collect();
            let h: Vec<f64> = dense(&v, &att.fc1, store).into_iter().map(|x| x.max(0.0)).collect();
            dense(&h, &att.fc2, store)
        };
        let (m, a) = (mlp(&mx), mlp(&av));
        for k in 0..d.c {
            let s = sigmoid(lambda[k] as f64 * m[k] + gamma[k] as f64 * a[k]);
            for i in 0..d.h {
                for j in 0..d.w {
                    *out.at_mut(b, i, j, k) *= s;
                }
            }
        }
    }
    out
}

/// d . s(L . conv(maxpool_c d) + G . conv'(avgpool_c d)) with 4x4 same-size convolutions.
pub fn spatial_attention(d: &Map, att: &SpatialAttention, store: &ParamStore<f32>) -> Map {
    let lambda = store.param(att.lambda).data();
    let gamma = store.param(att.gamma).data();
    let cm = conv_layer(&pool_channels(d, true), &att.conv_max, store, same(4));
    let ca = conv_layer(&pool_channels(d, false), &att.conv_avg, store, same(4));
    let mut out = d.clone();
    for b in 0..d.b {
        for i in 0..d.h {
            for j in 0..d.w {
                let cell = i * d.w + j;
                let s = sigmoid(lambda[cell] as f64 * cm.at(b, i, j, 0) + gamma[cell] as f64 * ca.at(b, i, j, 0));
                for k in 0..d.c {
                    *out.at_mut(b, i, j, k) *= s;
                }
            }
        }
    }
    out
}

/// Random valid forward-conv geometry.
#[derive(Debug, Clone, Copy)]
pub struct ConvCase {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: Padding,
}

impl ConvCase {
    pub fn random(rng: &mut Rng) -> ConvCase {
        loop {
            let kh = 1 + rng.below(4);
            let kw = 1 + rng.below(4);
            let c = ConvCase {
                batch: 1 + rng.below(3),
                h: 1 + rng.below(7),
                w: 1 + rng.below(7),
                cin: 1 + rng.below(4),
                cout: 1 + rng.below(4),
                kh,
                kw,
                stride: (1 + rng.below(3), 1 + rng.below(3)),
                pad: Padding::new(rng.below(kh), rng.below(kh), rng.below(kw), rng.below(kw)),
            };
            if c.h + c.pad.top + c.pad.bottom >= kh && c.w + c.pad.left + c.pad.right >= kw {
                return c;
            }
        }
    }
}

use stflow_core::blocks::{bind, Builder, Ctx};
use stflow_core::nn::PoolKind;
use stflow_core::{Result, Tape, Var};

/// Runs `f` once in eval mode on a fresh tape and returns its output value.
pub fn run_block(store: &ParamStore<f32>, inputs: &[Tensor<f32>], f: impl FnOnce(&mut Ctx<f32>, &[Var]) -> Result<Var>) -> Tensor<f32> {
    let mut tape = Tape::<f32>::new();
    let vars = bind(&mut tape, store, false);
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let mut cx = Ctx::new(&mut tape, &vars, store, false);
    let y = f(&mut cx, &xs).expect("block forward");
    tape.value(y).clone()
}

/// Maximum error of each primitive against its oracle over `n` random configs.
#[derive(Debug, Default)]
pub struct Sweep {
    pub conv2d: f64,
    pub conv_transpose2d: f64,
    pub pooling: f64,
    pub mu: f64,
    pub cmu: f64,
    pub channel_attention: f64,
    pub spatial_attention: f64,
}

impl Sweep {
    pub fn rows(&self) -> [(&'static str, f64); 7] {
        [
            ("conv2d", self.conv2d),
            ("conv2d_transpose", self.conv_transpose2d),
            ("pooling", self.pooling),
            ("MU", self.mu),
            ("CMU", self.cmu),
            ("channel attention", self.channel_attention),
            ("spatial attention", self.spatial_attention),
        ]
    }
}

pub fn sweep(n: usize, seed: u64) -> Sweep {
    let mut rng = Rng::new(seed);
    let mut s = Sweep::default();
    for _ in 0..n {
        // plain convolution
        let c = ConvCase::random(&mut rng);
        let x = rand_tensor(&[c.batch, c.h, c.w, c.cin], &mut rng);
        let w = rand_tensor(&[c.kh, c.kw, c.cin, c.cout], &mut rng);
        let b = rand_tensor(&[c.cout], &mut rng);
        let mut t = Tape::<f32>::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
        let y = t.conv2d(xv, wv, Some(bv), c.stride, c.pad).expect("conv2d");
        let o = conv2d(&Map::from(&x), &w, Some(&b), c.stride, c.pad);
        assert_eq!(t.shape(y), [o.b, o.h, o.w, o.c], "{:?}", c);
        s.conv2d = s.conv2d.max(max_err(t.value(y).data(), &o.v));

        // transposed convolution: output padding below the stride
        let c = ConvCase::random(&mut rng);
        let op = (rng.below(c.stride.0), rng.below(c.stride.1));
        let oh = (c.h - 1) * c.stride.0 + c.kh + op.0;
        let ow = (c.w - 1) * c.stride.1 + c.kw + op.1;
        if oh > c.pad.top + c.pad.bottom && ow > c.pad.left + c.pad.right {
            let x = rand_tensor(&[c.batch, c.h, c.w, c.cin], &mut rng);
            let w = rand_tensor(&[c.kh, c.kw, c.cout, c.cin], &mut rng);
            let b = rand_tensor(&[c.cout], &mut rng);
            let mut t = Tape::<f32>::new();
            let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv_transpose2d(xv, wv, Some(bv), c.stride, c.pad, op).expect("conv2d_transpose");
            let o = conv_transpose2d(&Map::from(&x), &w, Some(&b), c.stride, c.pad, op);
            assert_eq!(t.shape(y), [o.b, o.h, o.w, o.c], "{:?} {:?}", c, op);
            s.conv_transpose2d = s.conv_transpose2d.max(max_err(t.value(y).data(), &o.v));
        }

        // pooling, both directions and kinds
        let shape = [1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6)];
        let x = rand_tensor(&shape, &mut rng);
        let m = Map::from(&x);
        for (kind, max) in [(PoolKind::Max, true), (PoolKind::Avg, false)] {
            let mut t = Tape::<f32>::new();
            let xv = t.constant(x.clone());
            let a = t.global_pool_spatial(xv, kind).expect("pool");
            let b = t.pool_channelwise(xv, kind).expect("pool");
            s.pooling = s.pooling.max(max_err(t.value(a).data(), &pool_spatial(&m, max).v));
            s.pooling = s.pooling.max(max_err(t.value(b).data(), &pool_channels(&m, max).v));
        }

        // multiplicative units
        let ch = 1 + rng.below(4);
        let k = [1, 3, 5][rng.below(3)];
        let (bt, h, w) = (1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6));
        let mut store = ParamStore::default();
        let (unit, pair) = {
            let mut bld = Builder::new(&mut store, Rng::new(1));
            (Mu::new(&mut bld, "mu", ch, k), Cmu::new(&mut bld, "cmu", ch, k))
        };
        randomize(&mut store, 0.6, &mut rng);
        let h1 = rand_tensor(&[bt, h, w, ch], &mut rng);
        let h2 = rand_tensor(&[bt, h, w, ch], &mut rng);
        let y = run_block(&store, std::slice::from_ref(&h1), |cx, v| unit.forward(cx, v[0]));
        s.mu = s.mu.max(max_err(y.data(), &mu(&Map::from(&h1), &unit, &store, k).v));
        let y = run_block(&store, &[h1.clone(), h2.clone()], |cx, v| pair.forward(cx, v[0], v[1]));
        let o = cmu(&Map::from(&h1), &Map::from(&h2), &pair, &store, k);
        s.cmu = s.cmu.max(max_err(y.data(), &o.v));

        // attention blocks
        let ratio = 1 + rng.below(3);
        let ch = ratio * (1 + rng.below(3));
        let (bt, h, w) = (1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6));
        let mut store = ParamStore::default();
        let (ca, sa) = {
            let mut bld = Builder::new(&mut store, Rng::new(2));
            (ChannelAttention::new(&mut bld, ch, ratio), SpatialAttention::new(&mut bld, (h, w)))
        };
        randomize(&mut store, 1.0, &mut rng);
        let d = rand_tensor(&[bt, h, w, ch], &mut rng);
        let y = run_block(&store, std::slice::from_ref(&d), |cx, v| ca.forward(cx, v[0]));
        s.channel_attention = s.channel_attention.max(max_err(y.data(), &channel_attention(&Map::from(&d), &ca, &store).v));
        let y = run_block(&store, std::slice::from_ref(&d), |cx, v| sa.forward(cx, v[0]));
        s.spatial_attention = s.spatial_attention.max(max_err(y.data(), &spatial_attention(&Map::from(&d), &sa, &store).v));
    }
    s
}

/// Index-by-index transcription over `[samples][n][m][inflow, outflow]`.
pub fn metric_loops(pred: &[f32], truth: &[f32], s: usize, n: usize, m: usize) -> (f64, f64, f64) {
    let at = |v: &[f32], k: usize, i: usize, j: usize, c: usize| v[((k * n + i) * m + j) * 2 + c] as f64;
    let mut sq = 0.0;
    let mut pct = 0.0;
    for k in 0..s {
        for i in 0..n {
            for j in 0..m {
                let di = at(pred, k, i, j, 0) - at(truth, k, i, j, 0);
                let dw = at(pred, k, i, j, 1) - at(truth, k, i, j, 1);
                sq += di * di + dw * dw;
                let total = at(truth, k, i, j, 0) + at(truth, k, i, j, 1);
                pct += (di + dw).abs() / if total > 1.0 { total } else { 1.0 };
            }
        }
    }
    let cells = (s * n * m) as f64;
    ((sq / cells).sqrt(), 100.0 * pct / cells, 100.0 * pct)
}
