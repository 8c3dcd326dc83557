use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Min-max scaling to [-1, 1]. Values outside the fitted range map outside
/// [-1, 1]; nothing is clipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub data_min: f64,
    pub data_max: f64,
}

impl Normalizer {
    pub fn new(data_min: f64, data_max: f64) -> Result<Self> {
        if !(data_max > data_min) || !data_min.is_finite() || !data_max.is_finite() {
            return Err(Error::Data(format!(
                "normalizer needs max > min, got min {} max {}",
                data_min, data_max
            )));
        }
        Ok(Normalizer { data_min, data_max })
    }

    pub fn fit(values: &[f32]) -> Result<Self> {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
        Self::new(lo, hi)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        2.0 * (x - self.data_min) / (self.data_max - self.data_min) - 1.0
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        (y + 1.0) * (self.data_max - self.data_min) / 2.0 + self.data_min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let n = Normalizer::new(2.0, 10.0).unwrap();
        assert_eq!(n.normalize(2.0), -1.0);
        assert_eq!(n.normalize(10.0), 1.0);
        assert_eq!(n.normalize(6.0), 0.0);
        assert_eq!(n.normalize(14.0), 2.0);
    }

    #[test]
    fn degenerate_range_rejected() {
        assert!(Normalizer::new(3.0, 3.0).is_err());
        assert!(Normalizer::fit(&[1.0, 1.0]).is_err());
        assert!(Normalizer::fit(&[]).is_err());
    }
}
