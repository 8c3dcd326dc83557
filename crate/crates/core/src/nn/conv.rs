//! 2-D convolution kernels.
//!
//! Convolution here is cross-correlation: the kernel is not flipped. Input
//! windows are unrolled (im2col) and multiplied against the weight matrix
//! `[kh * kw * in_c, out_c]`, which is exactly the row-major view of a
//! `[kh, kw, in_c, out_c]` weight tensor.
//!
//! Work is split into fixed groups of images. The split does not depend on the
//! thread count, so sequential and parallel runs produce identical bits.

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::{gemm, MatRef, Scalar};

const IMAGES_PER_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Padding {
            top,
            bottom,
            left,
            right,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Output size equals input size at stride 1. Even kernels put the extra
    /// row/column at the bottom/right.
    pub fn same(kh: usize, kw: usize) -> Self {
        Padding {
            top: (kh - 1) / 2,
            bottom: kh / 2,
            left: (kw - 1) / 2,
            right: kw / 2,
        }
    }
}

/// Geometry of one forward convolution `[batch, in_h, in_w, in_c] -> [batch, out_h, out_w, out_c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad: Padding,
}

fn out_dim(input: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
    let span = input + pad;
    if span < k || stride == 0 {
        None
    } else {
        Some((span - k) / stride + 1)
    }
}

impl ConvGeom {
    /// Output dims are `floor((in + pad - k) / stride) + 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: usize,
        (in_h, in_w, in_c): (usize, usize, usize),
        out_c: usize,
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        pad: Padding,
    ) -> Result<Self> {
        let oh = out_dim(in_h, pad.top + pad.bottom, kh, sh);
        let ow = out_dim(in_w, pad.left + pad.right, kw, sw);
        match (oh, ow) {
            (Some(out_h), Some(out_w)) if kh > 0 && kw > 0 && in_c > 0 && out_c > 0 => {
                Ok(ConvGeom {
                    batch,
                    in_h,
                    in_w,
                    in_c,
                    out_h,
                    out_w,
                    out_c,
                    kh,
                    kw,
                    sh,
                    sw,
                    pad,
                })
            }
            _ => Err(Error::shape(
                "conv2d",
                format!(
                    "input {}x{}, kernel {}x{}, stride {}x{}, padding {:?} gives no output",
                    in_h, in_w, kh, kw, sh, sw, pad
                ),
            )),
        }
    }

    /// Geometry of the convolution whose adjoint is the requested transposed
    /// convolution. The transposed op maps `[in_h, in_w, in_c]` to
    /// `[(in_h - 1) * sh + kh - pad_h + out_pad_h, .., out_c]`; the returned
    /// forward geometry runs the other way.
    #[allow(clippy::too_many_arguments)]
    pub fn transposed(
        batch: usize,
        (in_h, in_w, in_c): (usize, usize, usize),
        out_c: usize,
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        pad: Padding,
        (oph, opw): (usize, usize),
    ) -> Result<Self> {
        let bad = || {
            Error::shape(
                "conv2d_transpose",
                format!(
                    "input {}x{}, kernel {}x{}, stride {}x{}, padding {:?}, output padding {}x{} is inconsistent",
                    in_h, in_w, kh, kw, sh, sw, pad, oph, opw
                ),
            )
        };
        if sh == 0 || sw == 0 || oph >= sh || opw >= sw {
            return Err(bad());
        }
        let full_h = (in_h - 1) * sh + kh + oph;
        let full_w = (in_w - 1) * sw + kw + opw;
        if full_h <= pad.top + pad.bottom || full_w <= pad.left + pad.right {
            return Err(bad());
        }
        let oh = full_h - pad.top - pad.bottom;
        let ow = full_w - pad.left - pad.right;
        let g = ConvGeom::new(batch, (oh, ow, out_c), in_c, (kh, kw), (sh, sw), pad)
            .map_err(|_| bad())?;
        if g.out_h != in_h || g.out_w != in_w {
            return Err(bad());
        }
        Ok(g)
    }

    /// Length of one unrolled window.
    pub fn k(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    pub fn out_rows(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn out_len(&self) -> usize {
        self.out_rows() * self.out_c
    }

    /// Multiply-accumulates for the whole batch.
    pub fn macs(&self) -> u64 {
        (self.batch * self.out_rows() * self.k() * self.out_c) as u64
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pad == Padding::zero()
    }

    fn chunks(&self) -> usize {
        self.batch.div_ceil(IMAGES_PER_CHUNK)
    }

    fn source(&self, oy: usize, ky: usize, ox: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.sh + ky).checked_sub(self.pad.top)?;
        let ix = (ox * self.sw + kx).checked_sub(self.pad.left)?;
        (iy < self.in_h && ix < self.in_w).then(|| (iy * self.in_w + ix) * self.in_c)
    }
}

/// Unrolls one image into `[out_h * out_w, k]`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let k = g.k();
    let c = g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let dst = &mut row[(ky * g.kw + kx) * c..][..c];
                    match g.source(oy, ky, ox, kx) {
                        Some(s) => dst.copy_from_slice(&x[s..s + c]),
                        None => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

/// Scatter-adds unrolled windows back onto one image.
fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let k = g.k();
    let c = g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    if let Some(s) = g.source(oy, ky, ox, kx) {
                        let src = &row[(ky * g.kw + kx) * c..][..c];
                        for (d, &v) in x[s..s + c].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

fn unrolled<'a, T: Scalar>(x: &'a [T], g: &ConvGeom, first: usize, n_img: usize, buf: &'a mut Vec<T>) -> &'a [T] {
    if g.is_pointwise() {
        return &x[first * g.in_len()..(first + n_img) * g.in_len()];
    }
    let rows = g.out_rows();
    let k = g.k();
    buf.clear();
    buf.resize(n_img * rows * k, T::zero());
    for j in 0..n_img {
        let img = &x[(first + j) * g.in_len()..][..g.in_len()];
        im2col(img, g, &mut buf[j * rows * k..][..rows * k]);
    }
    buf
}

/// `y = conv(x, w) + b`, `x: [batch, in_h, in_w, in_c]`, `w: [kh, kw, in_c, out_c]`.
pub fn forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    debug_assert_eq!(x.len(), g.batch * g.in_len());
    debug_assert_eq!(w.len(), g.k() * g.out_c);
    let per_img = g.out_len();
    let mut y = vec![T::zero(); g.batch * per_img];
    par::for_each_chunk_mut(&mut y, IMAGES_PER_CHUNK * per_img, |ci, ychunk| {
        let first = ci * IMAGES_PER_CHUNK;
        let n_img = ychunk.len() / per_img;
        let mut buf = Vec::new();
        let cols = unrolled(x, g, first, n_img, &mut buf);
        let beta = match b {
            Some(b) => {
                for row in ychunk.chunks_mut(g.out_c) {
                    row.copy_from_slice(b);
                }
                T::one()
            }
            None => T::zero(),
        };
        gemm(
            MatRef::new(cols, n_img * g.out_rows(), g.k()),
            MatRef::new(w, g.k(), g.out_c),
            beta,
            ychunk,
        );
    });
    y
}

/// Gradient with respect to the input.
pub fn backward_data<T: Scalar>(dy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let in_len = g.in_len();
    let rows = g.out_rows();
    let k = g.k();
    let mut dx = vec![T::zero(); g.batch * in_len];
    par::for_each_chunk_mut(&mut dx, IMAGES_PER_CHUNK * in_len, |ci, dxchunk| {
        let first = ci * IMAGES_PER_CHUNK;
        let n_img = dxchunk.len() / in_len;
        let dy_chunk = &dy[first * rows * g.out_c..(first + n_img) * rows * g.out_c];
        let wt = MatRef::new(w, k, g.out_c).t();
        if g.is_pointwise() {
            gemm(MatRef::new(dy_chunk, n_img * rows, g.out_c), wt, T::zero(), dxchunk);
            return;
        }
        let mut dcols = vec![T::zero(); n_img * rows * k];
        gemm(MatRef::new(dy_chunk, n_img * rows, g.out_c), wt, T::zero(), &mut dcols);
        for j in 0..n_img {
            col2im_add(
                &dcols[j * rows * k..][..rows * k],
                g,
                &mut dxchunk[j * in_len..][..in_len],
            );
        }
    });
    dx
}

/// Gradient with respect to the weights, `[kh * kw * in_c, out_c]`.
pub fn backward_filter<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let rows = g.out_rows();
    let k = g.k();
    let partials = par::map_range(g.chunks(), |ci| {
        let first = ci * IMAGES_PER_CHUNK;
        let n_img = IMAGES_PER_CHUNK.min(g.batch - first);
        let mut buf = Vec::new();
        let cols = unrolled(x, g, first, n_img, &mut buf);
        let dy_chunk = &dy[first * rows * g.out_c..(first + n_img) * rows * g.out_c];
        let mut dw = vec![T::zero(); k * g.out_c];
        gemm(
            MatRef::new(cols, n_img * rows, k).t(),
            MatRef::new(dy_chunk, n_img * rows, g.out_c),
            T::zero(),
            &mut dw,
        );
        dw
    });
    let mut iter = partials.into_iter();
    let mut acc = iter.next().unwrap_or_else(|| vec![T::zero(); k * g.out_c]);
    for p in iter {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Per-channel sum over every leading position (bias gradients).
pub fn channel_sums<T: Scalar>(dy: &[T], channels: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for row in dy.chunks(channels) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}
