//! Global pooling: over the spatial grid per channel, or over channels per cell.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// `[b, h, w, c] -> [b, 1, 1, c]`. Max ties resolve to the first cell.
pub fn spatial_forward<T: Scalar>(x: &[T], shape: &[usize], kind: PoolKind) -> (Vec<T>, Vec<u32>) {
    let (b, cells, c) = (shape[0], shape[1] * shape[2], shape[3]);
    let mut y = Vec::with_capacity(b * c);
    let mut arg = Vec::new();
    for bi in 0..b {
        let img = &x[bi * cells * c..(bi + 1) * cells * c];
        for ch in 0..c {
            match kind {
                PoolKind::Avg => {
                    let s: T = (0..cells).map(|p| img[p * c + ch]).sum();
                    y.push(s / T::of(cells as f64));
                }
                PoolKind::Max => {
                    let mut best = 0;
                    for p in 1..cells {
                        if img[p * c + ch] > img[best * c + ch] {
                            best = p;
                        }
                    }
                    y.push(img[best * c + ch]);
                    arg.push(best as u32);
                }
            }
        }
    }
    (y, arg)
}

pub fn spatial_backward<T: Scalar>(g: &[T], shape: &[usize], kind: PoolKind, arg: &[u32]) -> Vec<T> {
    let (b, cells, c) = (shape[0], shape[1] * shape[2], shape[3]);
    let mut dx = vec![T::zero(); b * cells * c];
    let inv = T::one() / T::of(cells as f64);
    for bi in 0..b {
        for ch in 0..c {
            let gv = g[bi * c + ch];
            match kind {
                PoolKind::Avg => {
                    for p in 0..cells {
                        dx[(bi * cells + p) * c + ch] = gv * inv;
                    }
                }
                PoolKind::Max => {
                    let p = arg[bi * c + ch] as usize;
                    dx[(bi * cells + p) * c + ch] = gv;
                }
            }
        }
    }
    dx
}

/// `[b, h, w, c] -> [b, h, w, 1]`. Max ties resolve to the first channel.
pub fn channel_forward<T: Scalar>(x: &[T], shape: &[usize], kind: PoolKind) -> (Vec<T>, Vec<u32>) {
    let c = shape[3];
    let mut y = Vec::with_capacity(x.len() / c);
    let mut arg = Vec::new();
    for cell in x.chunks(c) {
        match kind {
            PoolKind::Avg => y.push(cell.iter().copied().sum::<T>() / T::of(c as f64)),
            PoolKind::Max => {
                let mut best = 0;
                for (i, &v) in cell.iter().enumerate().skip(1) {
                    if v > cell[best] {
                        best = i;
                    }
                }
                y.push(cell[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub fn channel_backward<T: Scalar>(g: &[T], shape: &[usize], kind: PoolKind, arg: &[u32]) -> Vec<T> {
    let c = shape[3];
    let mut dx = vec![T::zero(); g.len() * c];
    let inv = T::one() / T::of(c as f64);
    for (i, &gv) in g.iter().enumerate() {
        match kind {
            PoolKind::Avg => dx[i * c..(i + 1) * c].iter_mut().for_each(|d| *d = gv * inv),
            PoolKind::Max => dx[i * c + arg[i] as usize] = gv,
        }
    }
    dx
}
