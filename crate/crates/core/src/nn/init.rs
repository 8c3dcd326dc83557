//! Deterministic parameter initialization.

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot (Xavier) uniform: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.uniform(-limit, limit)))
}

/// Fans for a `[kh, kw, a, b]` kernel, counted the way Keras does.
pub fn conv_fans(shape: &[usize]) -> (usize, usize) {
    let receptive = shape[0] * shape[1];
    (receptive * shape[2], receptive * shape[3])
}
