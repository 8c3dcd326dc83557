use super::layers::{Builder, ConvBlock, Ctx, ResUnit};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Time-distributed encoder: every frame of the closeness stack goes through
/// the same weights.
#[derive(Debug, Clone)]
pub struct Encoder {
    input: ConvBlock,
    levels: Vec<(ResUnit, ConvBlock)>,
    output: ConvBlock,
}

#[derive(Debug, Clone)]
pub struct EncoderState {
    /// Per-level inputs `E^(l)`, `[b, t, h_l, w_l, filters]`.
    pub levels: Vec<Var>,
    /// Per-level residual-unit outputs, `[b, t, h_l, w_l, filters]`.
    pub residuals: Vec<Var>,
    /// `[b, t, n, m, bottleneck]`.
    pub output: Var,
}

impl EncoderState {
    /// Residual outputs of the most recent frame, one `[b, h_l, w_l, filters]` per level.
    pub fn skips<T: Scalar>(&self, cx: &mut Ctx<T>) -> Result<Vec<Var>> {
        self.residuals
            .iter()
            .map(|&r| {
                let t = cx.tape.shape(r)[1];
                cx.tape.index_axis(r, 1, t - 1)
            })
            .collect()
    }
}

impl Encoder {
    pub fn new<T: Scalar>(b: &mut Builder<T>, depth: usize, filters: usize, bottleneck: usize, kernel: usize) -> Self {
        b.scope("encoder", |b| Encoder {
            input: ConvBlock::new(b, "input", 2, filters, kernel, 1),
            levels: (1..=depth)
                .map(|l| {
                    b.scope(&format!("level{}", l), |b| {
                        (
                            ResUnit::new(b, "res", filters, kernel),
                            ConvBlock::new(b, "down", filters, filters, kernel, 2),
                        )
                    })
                })
                .collect(),
            output: ConvBlock::new(b, "output", filters, bottleneck, kernel, 1),
        })
    }

    /// `x: [b, t, n, m, 2]`.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<T>, x: Var) -> Result<EncoderState> {
        let shape = cx.tape.shape(x).to_vec();
        let [b, t, h, w, c] = shape[..] else {
            return Err(Error::shape("encoder", format!("expected [b, t, n, m, 2], got {:?}", shape)));
        };
        if c != 2 {
            return Err(Error::shape("encoder", format!("expected 2 flow channels, got {}", c)));
        }
        let unfold = |cx: &mut Ctx<T>, v: Var| -> Result<Var> {
            let s = cx.tape.shape(v).to_vec();
            cx.tape.reshape(v, &[b, t, s[1], s[2], s[3]])
        };
        cx.scope("encoder", |cx| {
            let flat = cx.tape.reshape(x, &[b * t, h, w, c])?;
            let mut e = self.input.forward(cx, flat)?;
            let mut levels = Vec::new();
            let mut residuals = Vec::new();
            for (l, (res, down)) in self.levels.iter().enumerate() {
                cx.scope(&format!("level{}", l + 1), |cx| {
                    levels.push(unfold(cx, e)?);
                    let r = res.forward(cx, e)?;
                    residuals.push(unfold(cx, r)?);
                    e = down.forward(cx, r)?;
                    Ok(())
                })?;
            }
            let out = self.output.forward(cx, e)?;
            let output = unfold(cx, out)?;
            Ok(EncoderState {
                levels,
                residuals,
                output,
            })
        })
    }
}
