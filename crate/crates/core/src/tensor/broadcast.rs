use super::strides;
use crate::error::{Error, Result};

/// Numpy-style broadcast of two equal-rank shapes (each dim equal, or 1).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Offset mapping from a broadcast output back to its two operands.
#[derive(Debug, Clone)]
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    pub same: bool,
}

impl Broadcast {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let out_shape = broadcast_shape(a, b)
            .ok_or_else(|| Error::shape(op, format!("cannot broadcast {:?} with {:?}", a, b)))?;
        let masked = |shape: &[usize]| -> Vec<usize> {
            strides(shape)
                .into_iter()
                .zip(shape)
                .map(|(s, &d)| if d == 1 { 0 } else { s })
                .collect()
        };
        Ok(Broadcast {
            same: a == b,
            a_strides: masked(a),
            b_strides: masked(b),
            out_shape,
        })
    }

    /// Calls `f(out_index, a_offset, b_offset)` for every output element in order.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let numel: usize = self.out_shape.iter().product();
        if self.same {
            for i in 0..numel {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out_shape.len();
        let mut idx = vec![0usize; rank];
        let (mut ao, mut bo) = (0usize, 0usize);
        for i in 0..numel {
            f(i, ao, bo);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ao += self.a_strides[d];
                bo += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                ao -= self.a_strides[d] * idx[d];
                bo -= self.b_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}
