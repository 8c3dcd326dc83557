//! Fully connected layer kernels: `y = x w + b` with `x: [batch, in]`, `w: [in, out]`.

use crate::scalar::{gemm, MatRef, Scalar};

pub fn forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, batch: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); batch * dout];
    let beta = match b {
        Some(b) => {
            for row in y.chunks_mut(dout) {
                row.copy_from_slice(b);
            }
            T::one()
        }
        None => T::zero(),
    };
    gemm(MatRef::new(x, batch, din), MatRef::new(w, din, dout), beta, &mut y);
    y
}

pub fn backward_input<T: Scalar>(dy: &[T], w: &[T], batch: usize, din: usize, dout: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); batch * din];
    gemm(MatRef::new(dy, batch, dout), MatRef::new(w, din, dout).t(), T::zero(), &mut dx);
    dx
}

pub fn backward_weight<T: Scalar>(x: &[T], dy: &[T], batch: usize, din: usize, dout: usize) -> Vec<T> {
    let mut dw = vec![T::zero(); din * dout];
    gemm(MatRef::new(x, batch, din).t(), MatRef::new(dy, batch, dout), T::zero(), &mut dw);
    dw
}
