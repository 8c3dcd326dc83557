use std::collections::HashMap;

use chrono::{Datelike, NaiveDateTime, Timelike};

use super::metrics::{metrics, Metrics};
use crate::data::samples::{Frames, SampleSet};
use crate::error::{Error, Result};
use crate::par;

fn slot(t: NaiveDateTime) -> (u32, u32) {
    (t.weekday().num_days_from_monday(), t.hour() * 60 + t.minute())
}

/// Mean of training frames sharing weekday and time of day; slots never
/// seen in training fall back to the per-cell training mean.
#[derive(Debug, Clone)]
pub struct HistoricalAverage {
    slots: HashMap<(u32, u32), Vec<f32>>,
    fallback: Vec<f32>,
}

/// Order-independent mean: values are sorted before the f64 accumulation.
fn stable_mean(values: &mut [f32]) -> f32 {
    values.sort_by(|a, b| a.total_cmp(b));
    (values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64) as f32
}

impl HistoricalAverage {
    /// Fits on frames `0..boundary`.
    pub fn fit(frames: &Frames, boundary: usize) -> Result<Self> {
        if boundary == 0 || boundary > frames.len() {
            return Err(Error::Data(format!("no training history before frame {}", boundary)));
        }
        let f = frames.frame_len();
        let mut groups: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        for t in 0..boundary {
            groups.entry(slot(frames.timestamps[t])).or_default().push(t);
        }
        let mean_of = |ts: &[usize]| -> Vec<f32> {
            par::map_range(f, |k| {
                let mut v: Vec<f32> = ts.iter().map(|&t| frames.raw[t * f + k]).collect();
                stable_mean(&mut v)
            })
        };
        let all: Vec<usize> = (0..boundary).collect();
        let fallback = mean_of(&all);
        let slots = groups.into_iter().map(|(k, ts)| (k, mean_of(&ts))).collect();
        Ok(HistoricalAverage { slots, fallback })
    }

    /// Prediction for `t`, in `[n, m, 2]` layout.
    pub fn predict(&self, t: NaiveDateTime) -> &[f32] {
        self.slots.get(&slot(t)).unwrap_or(&self.fallback)
    }

    pub fn evaluate(&self, set: &SampleSet) -> Result<Metrics> {
        if set.is_empty() {
            return Err(Error::Data("empty test set".into()));
        }
        let fr = &set.frames;
        let f = fr.frame_len();
        let mut pred = Vec::with_capacity(set.len() * f);
        let mut truth = Vec::with_capacity(set.len() * f);
        for &t in &set.targets {
            pred.extend_from_slice(self.predict(fr.timestamps[t]));
            truth.extend_from_slice(&fr.raw[t * f..(t + 1) * f]);
        }
        metrics(&pred, &truth)
    }
}
