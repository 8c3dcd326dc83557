//! Batch normalization over every axis but the last (channel) one.
//!
//! Train mode normalizes with the biased batch variance and reports the
//! unbiased variance for the running average; eval mode uses running stats.

use crate::scalar::Scalar;

pub enum BnMode<'a, T> {
    Train { epsilon: T },
    Eval { mean: &'a [T], var: &'a [T], epsilon: T },
}

/// Batch statistics observed in train mode, for updating running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct BnForward<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub stats: Option<BatchStats<T>>,
}

pub fn forward_train<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], epsilon: T) -> BnForward<T> {
    let c = gamma.len();
    let rows = x.len() / c;
    let n = T::of(rows as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); c];
    for row in x.chunks(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let unbiased: Vec<T> = var
        .iter()
        .map(|&s| if rows > 1 { s / T::of((rows - 1) as f64) } else { T::zero() })
        .collect();
    var.iter_mut().for_each(|s| *s /= n);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let (y, xhat) = normalize(x, gamma, beta, &mean, &inv_std);
    BnForward {
        y,
        xhat,
        inv_std,
        stats: Some(BatchStats { mean, var: unbiased }),
    }
}

pub fn forward_eval<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    epsilon: T,
) -> BnForward<T> {
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let (y, xhat) = normalize(x, gamma, beta, mean, &inv_std);
    BnForward {
        y,
        xhat,
        inv_std,
        stats: None,
    }
}

fn normalize<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], mean: &[T], inv_std: &[T]) -> (Vec<T>, Vec<T>) {
    let c = gamma.len();
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(h);
            y.push(gamma[ch] * h + beta[ch]);
        }
    }
    (y, xhat)
}

fn affine_grads<T: Scalar>(g: &[T], xhat: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += grow[ch] * hrow[ch];
            dbeta[ch] += grow[ch];
        }
    }
    (dgamma, dbeta)
}

pub fn backward_train<T: Scalar>(g: &[T], xhat: &[T], inv_std: &[T], gamma: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let n = T::of((g.len() / c) as f64);
    let (dgamma, dbeta) = affine_grads(g, xhat, c);
    let mut dx = Vec::with_capacity(g.len());
    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            let k = gamma[ch] * inv_std[ch] / n;
            dx.push(k * (n * grow[ch] - dbeta[ch] - hrow[ch] * dgamma[ch]));
        }
    }
    (dx, dgamma, dbeta)
}

pub fn backward_eval<T: Scalar>(g: &[T], xhat: &[T], inv_std: &[T], gamma: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let (dgamma, dbeta) = affine_grads(g, xhat, c);
    let dx = g
        .chunks(c)
        .flat_map(|row| row.iter().enumerate().map(|(ch, &v)| v * gamma[ch] * inv_std[ch]))
        .collect();
    (dx, dgamma, dbeta)
}
