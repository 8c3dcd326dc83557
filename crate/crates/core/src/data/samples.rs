use std::sync::Arc;

use chrono::NaiveDateTime;

use super::dataset::FlowDataset;
use super::external::{external_vector, WeatherScaler, EXTERNAL_WIDTH};
use super::normalize::Normalizer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where the chronological train/test split falls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Targets at or after this instant are test samples.
    Boundary(NaiveDateTime),
    /// The last `n` days of targets are test samples.
    TestDays(u32),
}

impl SplitSpec {
    /// Index of the first test target frame.
    pub fn boundary_index(&self, ds: &FlowDataset) -> Result<usize> {
        match *self {
            SplitSpec::Boundary(at) => Ok((0..ds.len()).find(|&t| ds.timestamp(t) >= at).unwrap_or(ds.len())),
            SplitSpec::TestDays(days) => {
                let per_day = (24 * 60 / ds.meta.period_minutes) as usize;
                Ok(ds.len().saturating_sub(days as usize * per_day))
            }
        }
    }
}

/// Every frame of a dataset in network layout `[t, n, m, 2]`, raw and
/// normalized, plus the external vector of every instant.
#[derive(Debug, Clone)]
pub struct Frames {
    pub grid: (usize, usize),
    pub raw: Vec<f32>,
    pub normalized: Vec<f32>,
    pub external: Vec<f32>,
    pub timestamps: Vec<NaiveDateTime>,
}

impl Frames {
    pub fn build(ds: &FlowDataset, nrm: &Normalizer, weather: &WeatherScaler) -> Result<Self> {
        let (n, m) = ds.grid();
        let cells = n * m;
        let mut raw = vec![0f32; ds.flows.len()];
        for t in 0..ds.len() {
            let src = ds.frame(t);
            let dst = &mut raw[t * 2 * cells..(t + 1) * 2 * cells];
            for cell in 0..cells {
                dst[2 * cell] = src[cell];
                dst[2 * cell + 1] = src[cells + cell];
            }
        }
        let normalized = raw.iter().map(|&v| nrm.normalize(v as f64) as f32).collect();
        let mut external = Vec::with_capacity(ds.len() * EXTERNAL_WIDTH);
        for t in 0..ds.len() {
            external.extend(external_vector(ds.timestamp(t), &ds.weather[t], weather)?);
        }
        Ok(Frames {
            grid: (n, m),
            raw,
            normalized,
            external,
            timestamps: (0..ds.len()).map(|t| ds.timestamp(t)).collect(),
        })
    }

    pub fn frame_len(&self) -> usize {
        2 * self.grid.0 * self.grid.1
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Inputs and targets for prediction instants `targets`, each needing
    /// the `p` frames before it.
    pub fn batch(&self, targets: &[usize], p: usize) -> Result<Batch> {
        let f = self.frame_len();
        let (n, m) = self.grid;
        let b = targets.len();
        let mut x = Vec::with_capacity(b * p * f);
        let mut e = Vec::with_capacity(b * EXTERNAL_WIDTH);
        let mut y = Vec::with_capacity(b * f);
        let mut raw = Vec::with_capacity(b * f);
        for &t in targets {
            if t < p || t >= self.len() {
                return Err(Error::Data(format!(
                    "instant {} needs {} preceding frames within 0..{}",
                    t,
                    p,
                    self.len()
                )));
            }
            x.extend_from_slice(&self.normalized[(t - p) * f..t * f]);
            e.extend_from_slice(&self.external[t * EXTERNAL_WIDTH..(t + 1) * EXTERNAL_WIDTH]);
            y.extend_from_slice(&self.normalized[t * f..(t + 1) * f]);
            raw.extend_from_slice(&self.raw[t * f..(t + 1) * f]);
        }
        Ok(Batch {
            x: Tensor::new([b, p, n, m, 2], x)?,
            e: Tensor::new([b, EXTERNAL_WIDTH], e)?,
            y: Tensor::new([b, n, m, 2], y)?,
            raw_target: Tensor::new([b, n, m, 2], raw)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Normalized closeness stacks `[b, p, n, m, 2]`, oldest frame first.
    pub x: Tensor<f32>,
    pub e: Tensor<f32>,
    /// Normalized targets `[b, n, m, 2]`.
    pub y: Tensor<f32>,
    pub raw_target: Tensor<f32>,
}

/// One training example (materialized view).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub target_index: usize,
    pub timestamp: NaiveDateTime,
    pub closeness: Tensor<f32>,
    pub external: Vec<f32>,
    pub target: Tensor<f32>,
}

/// Prediction instants sharing one frame store.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub frames: Arc<Frames>,
    pub closeness: usize,
    pub targets: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let t: Vec<usize> = indices.iter().map(|&i| self.targets[i]).collect();
        self.frames.batch(&t, self.closeness)
    }

    pub fn all(&self) -> Result<Batch> {
        self.frames.batch(&self.targets, self.closeness)
    }

    pub fn sample(&self, i: usize) -> Result<Sample> {
        let t = self.targets[i];
        let b = self.frames.batch(&[t], self.closeness)?;
        let (n, m) = self.frames.grid;
        Ok(Sample {
            target_index: t,
            timestamp: self.frames.timestamps[t],
            closeness: b.x.reshape([self.closeness, n, m, 2])?,
            external: b.e.into_data(),
            target: b.y.reshape([n, m, 2])?,
        })
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> SampleSet {
        SampleSet {
            frames: self.frames.clone(),
            closeness: self.closeness,
            targets: self.targets[..n.min(self.len())].to_vec(),
        }
    }
}

/// A dataset split into train/test sample sets with train-fitted scalers.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalizer: Normalizer,
    pub weather: WeatherScaler,
    pub boundary: usize,
    pub train: SampleSet,
    pub test: SampleSet,
}

/// Fits scalers on frames before the boundary and builds both sample sets.
pub fn prepare(ds: &FlowDataset, p: usize, split: &SplitSpec) -> Result<Prepared> {
    let boundary = split.boundary_index(ds)?;
    if boundary <= p {
        return Err(Error::Data(format!(
            "empty training split: boundary at frame {} leaves no target after {} closeness frames",
            boundary, p
        )));
    }
    let f = ds.frame_len();
    let normalizer = Normalizer::fit(&ds.flows[..boundary * f])?;
    let weather = WeatherScaler::fit(&ds.weather[..boundary])?;
    prepare_fitted(ds, p, boundary, normalizer, weather)
}

/// Builds sample sets with scalers fitted elsewhere (e.g. from a checkpoint).
pub fn prepare_fitted(
    ds: &FlowDataset,
    p: usize,
    boundary: usize,
    normalizer: Normalizer,
    weather: WeatherScaler,
) -> Result<Prepared> {
    if p < 1 || ds.len() <= p {
        return Err(Error::Data(format!("{} frames cannot supply closeness length {}", ds.len(), p)));
    }
    if boundary >= ds.len() {
        return Err(Error::Data("empty test split: boundary is past the last frame".into()));
    }
    let frames = Arc::new(Frames::build(ds, &normalizer, &weather)?);
    let train = SampleSet {
        frames: frames.clone(),
        closeness: p,
        targets: (p..boundary).collect(),
    };
    let test = SampleSet {
        frames,
        closeness: p,
        targets: (boundary.max(p)..ds.len()).collect(),
    };
    Ok(Prepared {
        normalizer,
        weather,
        boundary,
        train,
        test,
    })
}
