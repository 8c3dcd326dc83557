//! Training loop, evaluation, replica protocol and the historical-average
//! baseline.

pub mod adam;
pub mod ha;
pub mod metrics;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use ha::HistoricalAverage;
pub use metrics::{ape, fmt_pm, fmt_pm_sci, mape, metrics, rmse, Metrics, MetricsReport};

use crate::blocks::bind;
use crate::data::{Normalizer, Prepared, SampleSet};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::par;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-4,
            epochs: 150,
            seeds: (0..10).collect(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be >= 0 and betas in [0, 1)".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of the batch losses (MSE on normalized targets).
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<EpochLoss>,
}

pub fn curve_csv(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,loss\n");
    for e in curve {
        out += &format!("{},{:.9e}\n", e.epoch, e.loss);
    }
    out
}

/// Fixed-size shuffled batches; a trailing batch smaller than 2 is dropped.
fn batches(n: usize, size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(size).filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect()
}

/// Trains a freshly built model (seeded by `model_cfg.seed`) with MSE loss
/// and Adam. Shuffling uses a stream derived from the same seed.
pub fn train(model_cfg: &ModelConfig, set: &SampleSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_model(Model::build(model_cfg)?, set, cfg, |_, _| {})
}

/// Trains `model` in place; `on_epoch` sees each finished epoch.
pub fn train_model(
    mut model: Model,
    set: &SampleSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Model, &EpochLoss),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.len() < 2 {
        return Err(Error::Data(format!("training needs at least 2 samples, got {}", set.len())));
    }
    let mut rng = Rng::new(model.config.seed).fork(0x5eed);
    let mut adam = Adam::new(
        &model.store,
        cfg.learning_rate as f32,
        cfg.beta1 as f32,
        cfg.beta2 as f32,
        cfg.epsilon as f32,
    );
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let plan = batches(set.len(), cfg.batch_size, &mut rng);
        for (bi, idx) in plan.iter().enumerate() {
            let batch = set.batch(idx)?;
            let mut tape = Tape::new();
            let vars = bind(&mut tape, &model.store, true);
            let x = tape.constant(batch.x);
            let e = tape.constant(batch.e);
            let y = tape.constant(batch.y);
            let f = model.forward(&mut tape, &model.store, &vars, x, e, true)?;
            let loss = tape.mse(f.output, y)?;
            let lv = tape.value(loss).item() as f64;
            let grads = tape.backward(loss)?;
            if !lv.is_finite() || grads.has_non_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {} at epoch {}, batch {} (max |grad| {})",
                    lv,
                    epoch,
                    bi + 1,
                    grads.max_abs()
                )));
            }
            adam.update(&mut model.store, &vars, &grads);
            for u in &f.bn_updates {
                model.store.apply_bn_update(u);
            }
            total += lv;
        }
        let el = EpochLoss {
            epoch,
            loss: total / plan.len() as f64,
        };
        on_epoch(&model, &el);
        curve.push(el);
    }
    Ok(TrainOutcome { model, curve })
}

/// Eval-mode predictions for every sample, normalized units.
pub fn predict_set(model: &Model, set: &SampleSet) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if set.is_empty() {
        return Err(Error::Data("empty sample set".into()));
    }
    let b = set.all()?;
    Ok((model.predict(&b.x, &b.e)?, b.y))
}

/// RMSE on normalized values (the training objective's scale).
pub fn normalized_rmse(model: &Model, set: &SampleSet) -> Result<f64> {
    let (pred, y) = predict_set(model, set)?;
    rmse(pred.data(), y.data())
}

/// Metrics on denormalized predictions against the raw targets.
pub fn evaluate(model: &Model, set: &SampleSet, nrm: &Normalizer) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let b = set.all()?;
    let pred = model.predict(&b.x, &b.e)?;
    let denorm: Vec<f32> = pred.data().iter().map(|&v| nrm.denormalize(v as f64) as f32).collect();
    metrics(&denorm, b.raw_target.data())
}

#[derive(Debug, Clone)]
pub struct ReplicaResult {
    pub seed: u64,
    pub metrics: Metrics,
    pub outcome: TrainOutcome,
}

/// Trains and evaluates one replica per seed (in parallel when enabled).
pub fn run_replicas(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Prepared,
    seeds: &[u64],
) -> Result<(MetricsReport, Vec<ReplicaResult>)> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let results = par::map_slice(seeds, |&seed| -> Result<ReplicaResult> {
        let mut mc = model_cfg.clone();
        mc.seed = seed;
        let outcome = train(&mc, &data.train, cfg)?;
        let metrics = evaluate(&outcome.model, &data.test, &data.normalizer)?;
        Ok(ReplicaResult {
            seed,
            metrics,
            outcome,
        })
    });
    let mut out = Vec::with_capacity(results.len());
    for (seed, r) in seeds.iter().zip(results) {
        out.push(r.map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("replica seed {}: {}", seed, m)),
            other => Error::Config(format!("replica seed {} failed: {}", seed, other)),
        })?);
    }
    let report = MetricsReport::new(out.iter().map(|r| (r.seed, r.metrics)).collect())?;
    Ok((report, out))
}
