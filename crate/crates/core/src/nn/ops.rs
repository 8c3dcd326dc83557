use super::batchnorm::{self, BatchStats, BnMode};
use super::conv::{self, ConvGeom, Padding};
use super::dense;
use super::pool::{self, PoolKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::Op;
use crate::tensor::{Tape, Tensor, Var};

fn dims4(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        &[b, h, w, c] => Ok((b, h, w, c)),
        _ => Err(Error::shape(op, format!("expected [batch, h, w, c], got {:?}", shape))),
    }
}

impl<T: Scalar> Tape<T> {
    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(Error::shape(
                    op,
                    format!("bias {:?} for {} output channels", self.shape(b), channels),
                ));
            }
        }
        Ok(())
    }

    /// Cross-correlation of `x: [b, h, w, cin]` with `w: [kh, kw, cin, cout]`, plus bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), pad: Padding) -> Result<Var> {
        let (batch, h, wd, cin) = dims4("conv2d", self.shape(x))?;
        let (kh, kw, wc, cout) = dims4("conv2d", self.shape(w))?;
        if wc != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernel {:?} expects {}", cin, self.shape(w), wc),
            ));
        }
        self.check_bias("conv2d", b, cout)?;
        let geom = ConvGeom::new(batch, (h, wd, cin), cout, (kh, kw), stride, pad)?;
        let y = conv::forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new([batch, geom.out_h, geom.out_w, cout], y)?;
        let bias_flops = if b.is_some() { value.numel() as u64 } else { 0 };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push_node(value, Op::Conv2d { x, w, b, geom }, rg, 2 * geom.macs() + bias_flops))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv2d`] with the same
    /// kernel, stride and padding. `w: [kh, kw, cout, cin]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: Padding,
        output_padding: (usize, usize),
    ) -> Result<Var> {
        let (batch, h, wd, cin) = dims4("conv2d_transpose", self.shape(x))?;
        let (kh, kw, cout, wc) = dims4("conv2d_transpose", self.shape(w))?;
        if wc != cin {
            return Err(Error::shape(
                "conv2d_transpose",
                format!("input has {} channels, kernel {:?} expects {}", cin, self.shape(w), wc),
            ));
        }
        self.check_bias("conv2d_transpose", b, cout)?;
        let geom = ConvGeom::transposed(batch, (h, wd, cin), cout, (kh, kw), stride, pad, output_padding)?;
        let mut y = conv::backward_data(self.value(x).data(), self.value(w).data(), &geom);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(cout) {
                for (v, &bb) in row.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
        }
        let value = Tensor::new([batch, geom.in_h, geom.in_w, cout], y)?;
        let bias_flops = if b.is_some() { value.numel() as u64 } else { 0 };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push_node(
            value,
            Op::ConvTranspose2d { x, w, b, geom },
            rg,
            2 * geom.macs() + bias_flops,
        ))
    }

    /// `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, din) = match *self.shape(x) {
            [batch, din] => (batch, din),
            ref s => return Err(Error::shape("dense", format!("expected [batch, in], got {:?}", s))),
        };
        let (win, dout) = match *self.shape(w) {
            [a, b] => (a, b),
            ref s => return Err(Error::shape("dense", format!("weight must be 2-D, got {:?}", s))),
        };
        if win != din {
            return Err(Error::shape("dense", format!("input width {} vs weight {:?}", din, self.shape(w))));
        }
        self.check_bias("dense", b, dout)?;
        let y = dense::forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            batch,
            din,
            dout,
        );
        let flops = (2 * batch * din * dout + if b.is_some() { batch * dout } else { 0 }) as u64;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.any_grad(&inputs);
        Ok(self.push_node(Tensor::new([batch, dout], y)?, Op::Dense { x, w, b }, rg, flops))
    }

    /// Normalizes each channel (last axis) over all other axes.
    ///
    /// Returns the batch statistics in train mode so the caller can update its
    /// running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::shape("batchnorm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "batchnorm",
                format!("{} channels, gamma {:?}, beta {:?}", c, self.shape(gamma), self.shape(beta)),
            ));
        }
        let xs = self.value(x).data();
        let (g, bta) = (self.value(gamma).data(), self.value(beta).data());
        let train = matches!(mode, BnMode::Train { .. });
        let fwd = match mode {
            BnMode::Train { epsilon } => {
                if shape[0] < 2 {
                    return Err(Error::shape(
                        "batchnorm",
                        format!("train mode needs batch >= 2, got {}", shape[0]),
                    ));
                }
                batchnorm::forward_train(xs, g, bta, epsilon)
            }
            BnMode::Eval { mean, var, epsilon } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batchnorm", "running stats length"));
                }
                batchnorm::forward_eval(xs, g, bta, mean, var, epsilon)
            }
        };
        let flops = 2 * fwd.y.len() as u64;
        let value = Tensor::new(shape, fwd.y)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        let op = if train {
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
            }
        } else {
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
            }
        };
        Ok((self.push_node(value, op, rg, flops), fwd.stats))
    }

    /// `[b, h, w, c] -> [b, 1, 1, c]`.
    pub fn global_pool_spatial(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (b, _, _, c) = dims4("global_pool_spatial", self.shape(x))?;
        let (y, argmax) = pool::spatial_forward(self.value(x).data(), self.shape(x), kind);
        let flops = self.value(x).numel() as u64;
        let rg = self.any_grad(&[x]);
        Ok(self.push_node(Tensor::new([b, 1, 1, c], y)?, Op::PoolSpatial { x, kind, argmax }, rg, flops))
    }

    /// `[b, h, w, c] -> [b, h, w, 1]`.
    pub fn pool_channelwise(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (b, h, w, _) = dims4("pool_channelwise", self.shape(x))?;
        let (y, argmax) = pool::channel_forward(self.value(x).data(), self.shape(x), kind);
        let flops = self.value(x).numel() as u64;
        let rg = self.any_grad(&[x]);
        Ok(self.push_node(Tensor::new([b, h, w, 1], y)?, Op::PoolChannel { x, kind, argmax }, rg, flops))
    }
}

/// Applies a per-frame layer to every frame of `x: [b, t, h, w, c]` with shared
/// weights, by folding time into the batch axis.
pub fn time_distribute<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    layer: impl FnOnce(&mut Tape<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let (b, t, rest) = match tape.shape(x) {
        [b, t, rest @ ..] if rest.len() == 3 => (*b, *t, rest.to_vec()),
        s => return Err(Error::shape("time_distribute", format!("expected [b, t, h, w, c], got {:?}", s))),
    };
    let mut folded = vec![b * t];
    folded.extend(&rest);
    let flat = tape.reshape(x, &folded)?;
    let y = layer(tape, flat)?;
    let ys = tape.shape(y).to_vec();
    if ys.len() != 4 || ys[0] != b * t {
        return Err(Error::shape("time_distribute", format!("layer returned {:?}", ys)));
    }
    tape.reshape(y, &[b, t, ys[1], ys[2], ys[3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn pointwise_unit_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let mut t = Tape::<f64>::new();
        let xv = rand(&[2, 3, 4, 1], &mut rng);
        let x = t.constant(xv.clone());
        let w = t.constant(Tensor::ones([1, 1, 1, 1]));
        let y = t.conv2d(x, w, None, (1, 1), Padding::zero()).unwrap();
        assert_eq!(t.value(y), &xv);
        let yt = t.conv_transpose2d(x, w, None, (1, 1), Padding::zero(), (0, 0)).unwrap();
        assert_eq!(t.value(yt), &xv);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_empty_output() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros([1, 4, 4, 2]));
        let w = t.constant(Tensor::zeros([3, 3, 3, 8]));
        let err = t.conv2d(x, w, None, (1, 1), Padding::same(3, 3)).unwrap_err().to_string();
        assert!(err.contains("conv2d") && err.contains("2 channels"), "{err}");
        let w = t.constant(Tensor::zeros([5, 5, 2, 1]));
        assert!(t.conv2d(x, w, None, (1, 1), Padding::zero()).is_err());
    }

    #[test]
    fn transpose_rejects_non_doubling_config() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros([1, 2, 2, 1]));
        let w = t.constant(Tensor::zeros([3, 3, 1, 1]));
        assert!(t
            .conv_transpose2d(x, w, None, (2, 2), Padding::new(1, 1, 1, 1), (2, 2))
            .is_err());
        let y = t
            .conv_transpose2d(x, w, None, (2, 2), Padding::new(1, 1, 1, 1), (1, 1))
            .unwrap();
        assert_eq!(t.shape(y), &[1, 4, 4, 1]);
    }

    #[test]
    fn dense_identity_and_constant() {
        let mut t = Tape::<f64>::new();
        let xv = Tensor::new([1, 3], vec![1.0, -2.0, 5.0]).unwrap();
        let x = t.constant(xv.clone());
        let eye = t.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let zero_b = t.constant(Tensor::zeros([3]));
        let y = t.dense(x, eye, Some(zero_b)).unwrap();
        assert_eq!(t.value(y), &xv);
        let zw = t.constant(Tensor::zeros([3, 2]));
        let c = t.constant(Tensor::new([2], vec![0.5, 7.0]).unwrap());
        let y = t.dense(x, zw, Some(c)).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 7.0]);
        let bad = t.constant(Tensor::zeros([2, 2]));
        assert!(t.dense(x, bad, None).is_err());
    }

    #[test]
    fn batchnorm_paths() {
        let mut t = Tape::<f64>::new();
        let g1 = t.constant(Tensor::ones([2]));
        let b0 = t.constant(Tensor::zeros([2]));
        let konst = t.constant(Tensor::full([4, 3, 2], 3.5));
        let (y, stats) = t.batch_norm(konst, g1, b0, BnMode::Train { epsilon: 1e-5 }).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.unwrap().mean, vec![3.5, 3.5]);

        let mut rng = Rng::new(3);
        let x = t.constant(rand(&[8, 3, 2], &mut rng));
        let g0 = t.constant(Tensor::zeros([2]));
        let beta = t.constant(Tensor::new([2], vec![0.25, -1.0]).unwrap());
        let (y, _) = t.batch_norm(x, g0, beta, BnMode::Train { epsilon: 1e-5 }).unwrap();
        for row in t.value(y).data().chunks(2) {
            assert_eq!(row, &[0.25, -1.0]);
        }

        let one = t.constant(Tensor::zeros([1, 3, 2]));
        let err = t.batch_norm(one, g1, b0, BnMode::Train { epsilon: 1e-5 }).unwrap_err();
        assert!(err.to_string().contains("batch >= 2"));
        assert!(t
            .batch_norm(one, g1, b0, BnMode::Eval { mean: &[0.0, 0.0], var: &[1.0, 1.0], epsilon: 1e-5 })
            .is_ok());
    }

    #[test]
    fn batchnorm_standardizes_each_channel() {
        let mut rng = Rng::new(11);
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_fn([6, 4, 3, 5], |i| rng.uniform(-3.0, 5.0) + (i % 5) as f64));
        let g = t.constant(Tensor::ones([5]));
        let b = t.constant(Tensor::zeros([5]));
        let (y, _) = t.batch_norm(x, g, b, BnMode::Train { epsilon: 1e-5 }).unwrap();
        let data = t.value(y).data();
        let n = (data.len() / 5) as f64;
        for ch in 0..5 {
            let vals: Vec<f64> = data.iter().skip(ch).step_by(5).copied().collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn pooling_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new([1, 2, 2, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let avg = t.global_pool_spatial(x, PoolKind::Avg).unwrap();
        assert_eq!(t.value(avg).data(), &[4.0]);
        let c = t.constant(Tensor::full([2, 3, 2, 4], 2.5));
        let mx = t.global_pool_spatial(c, PoolKind::Max).unwrap();
        assert!(t.value(mx).data().iter().all(|&v| v == 2.5));
        assert_eq!(t.shape(mx), &[2, 1, 1, 4]);
        let y = t.constant(Tensor::new([1, 1, 1, 2], vec![1.0, 5.0]).unwrap());
        let m = t.pool_channelwise(y, PoolKind::Max).unwrap();
        assert_eq!(t.value(m).data(), &[5.0]);
        let single = t.constant(Tensor::new([1, 2, 1, 1], vec![-1.0, 4.0]).unwrap());
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let p = t.pool_channelwise(single, kind).unwrap();
            assert_eq!(t.value(p).data(), &[-1.0, 4.0]);
        }
    }

    #[test]
    fn activations() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = t.sigmoid(x);
        assert_eq!(t.value(s).data()[1], 0.5);
    }

    #[test]
    fn time_distribute_single_frame_matches_plain_layer() {
        let mut rng = Rng::new(5);
        let xv = rand(&[2, 1, 4, 3, 2], &mut rng);
        let wv = rand(&[3, 3, 2, 3], &mut rng);
        let mut t = Tape::<f64>::new();
        let x = t.constant(xv.clone());
        let w = t.constant(wv.clone());
        let y = time_distribute(&mut t, x, |t, f| t.conv2d(f, w, None, (1, 1), Padding::same(3, 3))).unwrap();
        let x4 = t.constant(xv.reshape([2, 4, 3, 2]).unwrap());
        let y4 = t.conv2d(x4, w, None, (1, 1), Padding::same(3, 3)).unwrap();
        assert_eq!(t.shape(y), &[2, 1, 4, 3, 3]);
        assert_eq!(t.value(y).data(), t.value(y4).data());
        let id = time_distribute(&mut t, x, |_, f| Ok(f)).unwrap();
        assert_eq!(t.value(id).data(), t.value(x).data());
    }
}
