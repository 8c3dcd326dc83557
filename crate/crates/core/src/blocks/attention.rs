use super::layers::{Builder, Conv, Ctx, Dense, ParamId};
use crate::error::{Error, Result};
use crate::nn::{Padding, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Reweights channels: `sigmoid(L1 * mlp(maxpool) + G1 * mlp(avgpool))`, with
/// one bottleneck MLP shared by both pooled vectors.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub fc1: Dense,
    pub fc2: Dense,
    pub lambda: ParamId,
    pub gamma: ParamId,
    channels: usize,
}

impl ChannelAttention {
    pub fn new<T: Scalar>(b: &mut Builder<T>, channels: usize, ratio: usize) -> Self {
        b.scope("channel_attention", |b| ChannelAttention {
            fc1: Dense::new(b, "fc1", channels, channels / ratio),
            fc2: Dense::new(b, "fc2", channels / ratio, channels),
            lambda: b.param("lambda", Tensor::ones([1, 1, 1, channels])),
            gamma: b.param("gamma", Tensor::ones([1, 1, 1, channels])),
            channels,
        })
    }

    /// The attention map `[b, 1, 1, c]`.
    pub fn weights<T: Scalar>(&self, cx: &mut Ctx<T>, d: Var) -> Result<Var> {
        let batch = cx.tape.shape(d)[0];
        let c = self.channels;
        let mlp = |cx: &mut Ctx<T>, kind: PoolKind| -> Result<Var> {
            let p = cx.tape.global_pool_spatial(d, kind)?;
            let p = cx.tape.reshape(p, &[batch, c])?;
            let h = self.fc1.forward(cx, p)?;
            let h = cx.tape.relu(h);
            let y = self.fc2.forward(cx, h)?;
            cx.tape.reshape(y, &[batch, 1, 1, c])
        };
        let mx = mlp(cx, PoolKind::Max)?;
        let av = mlp(cx, PoolKind::Avg)?;
        let (l, g) = (cx.var(self.lambda), cx.var(self.gamma));
        let a = cx.tape.mul(l, mx)?;
        let b = cx.tape.mul(g, av)?;
        let s = cx.tape.add(a, b)?;
        Ok(cx.tape.sigmoid(s))
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, d: Var) -> Result<Var> {
        if cx.tape.shape(d).len() != 4 || cx.tape.shape(d)[3] != self.channels {
            return Err(Error::shape(
                "channel_attention",
                format!("expected [b, h, w, {}], got {:?}", self.channels, cx.tape.shape(d)),
            ));
        }
        cx.scope("channel_attention", |cx| {
            let a = self.weights(cx, d)?;
            cx.tape.mul(d, a)
        })
    }
}

/// Reweights grid cells from channel-wise max and mean maps, each passed
/// through its own 4x4 convolution.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub conv_max: Conv,
    pub conv_avg: Conv,
    pub lambda: ParamId,
    pub gamma: ParamId,
    grid: (usize, usize),
}

pub const SPATIAL_KERNEL: usize = 4;

impl SpatialAttention {
    pub fn new<T: Scalar>(b: &mut Builder<T>, grid: (usize, usize)) -> Self {
        let k = SPATIAL_KERNEL;
        let pad = Padding::same(k, k);
        b.scope("spatial_attention", |b| SpatialAttention {
            conv_max: Conv::with_padding(b, "conv_max", 1, 1, k, 1, pad, true),
            conv_avg: Conv::with_padding(b, "conv_avg", 1, 1, k, 1, pad, true),
            lambda: b.param("lambda", Tensor::ones([1, grid.0, grid.1, 1])),
            gamma: b.param("gamma", Tensor::ones([1, grid.0, grid.1, 1])),
            grid,
        })
    }

    /// The attention map `[b, h, w, 1]`.
    pub fn weights<T: Scalar>(&self, cx: &mut Ctx<T>, d: Var) -> Result<Var> {
        let mx = cx.tape.pool_channelwise(d, PoolKind::Max)?;
        let av = cx.tape.pool_channelwise(d, PoolKind::Avg)?;
        let mx = self.conv_max.forward(cx, mx)?;
        let av = self.conv_avg.forward(cx, av)?;
        let (l, g) = (cx.var(self.lambda), cx.var(self.gamma));
        let a = cx.tape.mul(l, mx)?;
        let b = cx.tape.mul(g, av)?;
        let s = cx.tape.add(a, b)?;
        Ok(cx.tape.sigmoid(s))
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, d: Var) -> Result<Var> {
        let s = cx.tape.shape(d);
        if s.len() != 4 || (s[1], s[2]) != self.grid {
            return Err(Error::shape(
                "spatial_attention",
                format!("expected [b, {}, {}, c], got {:?}", self.grid.0, self.grid.1, s),
            ));
        }
        cx.scope("spatial_attention", |cx| {
            let a = self.weights(cx, d)?;
            cx.tape.mul(d, a)
        })
    }
}
