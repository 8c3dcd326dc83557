use super::attention::{ChannelAttention, SpatialAttention};
use super::layers::{Activation, BatchNorm, Builder, Conv, ConvBlock, Ctx, ResUnit, Upsample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Debug, Clone)]
struct Level {
    up: Upsample,
    bn: BatchNorm,
    res: ResUnit,
}

/// Mirror of the encoder: upsampling levels fed by long skip connections,
/// optional channel and spatial attention, and a tanh output head.
#[derive(Debug, Clone)]
pub struct Decoder {
    input: ConvBlock,
    levels: Vec<Level>,
    output: ConvBlock,
    pub channel: Option<ChannelAttention>,
    pub spatial: Option<SpatialAttention>,
    head: Conv,
    long_skip: bool,
}

pub struct DecoderSpec {
    pub depth: usize,
    pub filters: usize,
    pub bottleneck: usize,
    pub kernel: usize,
    pub grid: (usize, usize),
    pub attention_ratio: usize,
    pub attention: bool,
    pub long_skip: bool,
}

impl Decoder {
    pub fn new<T: Scalar>(b: &mut Builder<T>, s: &DecoderSpec) -> Self {
        b.scope("decoder", |b| {
            let input = ConvBlock::new(b, "input", s.bottleneck, s.filters, s.kernel, 1);
            let levels = (1..=s.depth)
                .map(|l| {
                    b.scope(&format!("level{}", l), |b| Level {
                        up: Upsample::new(b, "up", s.filters, s.filters, s.kernel),
                        bn: BatchNorm::new(b, "bn", s.filters),
                        res: ResUnit::new(b, "res", s.filters, s.kernel),
                    })
                })
                .collect();
            let output = ConvBlock::new(b, "output", s.filters, s.bottleneck, s.kernel, 1);
            let (channel, spatial) = if s.attention {
                (
                    Some(ChannelAttention::new(b, s.bottleneck, s.attention_ratio)),
                    Some(SpatialAttention::new(b, s.grid)),
                )
            } else {
                (None, None)
            };
            let head = Conv::new(b, "head", s.bottleneck, 2, s.kernel, 1);
            Decoder {
                input,
                levels,
                output,
                channel,
                spatial,
                head,
                long_skip: s.long_skip,
            }
        })
    }

    /// `z: [b, n, m, c]`; `skips[l]` is the encoder residual output of the
    /// most recent frame at level `l + 1`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, z: Var, skips: &[Var]) -> Result<Var> {
        if self.long_skip && skips.len() != self.levels.len() {
            return Err(Error::shape(
                "decoder",
                format!("{} levels but {} skip tensors", self.levels.len(), skips.len()),
            ));
        }
        cx.scope("decoder", |cx| {
            let mut d = self.input.forward(cx, z)?;
            let depth = self.levels.len();
            for (i, level) in self.levels.iter().enumerate() {
                d = cx.scope(&format!("level{}", i + 1), |cx| {
                    let mut y = level.up.forward(cx, d)?;
                    if self.long_skip {
                        let skip = skips[depth - 1 - i];
                        if cx.tape.shape(skip) != cx.tape.shape(y) {
                            return Err(Error::shape(
                                "decoder",
                                format!("skip {:?} vs upsampled {:?}", cx.tape.shape(skip), cx.tape.shape(y)),
                            ));
                        }
                        y = cx.scope("skip", |cx| cx.tape.add(y, skip))?;
                    }
                    let y = cx.scope("act", |cx| Ok(cx.tape.relu(y)))?;
                    let y = level.bn.forward(cx, y)?;
                    level.res.forward(cx, y)
                })?;
            }
            d = self.output.forward(cx, d)?;
            if let Some(ca) = &self.channel {
                d = ca.forward(cx, d)?;
            }
            if let Some(sa) = &self.spatial {
                d = sa.forward(cx, d)?;
            }
            let y = self.head.forward(cx, d)?;
            cx.scope("head", |cx| Ok(Activation::Tanh.apply(cx.tape, y)))
        })
    }
}
