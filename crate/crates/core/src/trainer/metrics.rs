use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Error metrics on denormalized flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mape: f64,
    pub ape: f64,
}

fn check(pred: &[f32], truth: &[f32]) -> Result<usize> {
    if pred.len() != truth.len() || pred.is_empty() || !pred.len().is_multiple_of(2) {
        return Err(Error::shape(
            "metrics",
            format!("{} predictions vs {} targets (need equal, even, non-zero)", pred.len(), truth.len()),
        ));
    }
    Ok(pred.len() / 2)
}

/// `sqrt(mean over (sample, region) of (d_in^2 + d_out^2))`; inputs are
/// interleaved (inflow, outflow) pairs.
pub fn rmse(pred: &[f32], truth: &[f32]) -> Result<f64> {
    let n = check(pred, truth)?;
    let s: f64 = pred
        .chunks_exact(2)
        .zip(truth.chunks_exact(2))
        .map(|(p, t)| {
            let (di, dw) = (p[0] as f64 - t[0] as f64, p[1] as f64 - t[1] as f64);
            di * di + dw * dw
        })
        .sum();
    Ok((s / n as f64).sqrt())
}

fn ratios<'a>(pred: &'a [f32], truth: &'a [f32]) -> impl Iterator<Item = f64> + 'a {
    pred.chunks_exact(2).zip(truth.chunks_exact(2)).map(|(p, t)| {
        let num = (p[0] as f64 - t[0] as f64) + (p[1] as f64 - t[1] as f64);
        num.abs() / (t[0] as f64 + t[1] as f64).max(1.0)
    })
}

/// `100 * mean |d_in + d_out| / max(in + out, 1)`.
pub fn mape(pred: &[f32], truth: &[f32]) -> Result<f64> {
    let n = check(pred, truth)?;
    Ok(100.0 * ratios(pred, truth).sum::<f64>() / n as f64)
}

/// `100 * sum |d_in + d_out| / max(in + out, 1)` over every (sample, region).
pub fn ape(pred: &[f32], truth: &[f32]) -> Result<f64> {
    check(pred, truth)?;
    Ok(100.0 * ratios(pred, truth).sum::<f64>())
}

pub fn metrics(pred: &[f32], truth: &[f32]) -> Result<Metrics> {
    Ok(Metrics {
        rmse: rmse(pred, truth)?,
        mape: mape(pred, truth)?,
        ape: ape(pred, truth)?,
    })
}

/// Mean and sample standard deviation (n - 1).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-replica metrics with their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<(u64, Metrics)>,
    pub mean: Metrics,
    pub std: Metrics,
}

impl MetricsReport {
    pub fn new(rows: Vec<(u64, Metrics)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("no replicas to aggregate".into()));
        }
        let col = |f: fn(&Metrics) -> f64| mean_std(&rows.iter().map(|r| f(&r.1)).collect::<Vec<_>>());
        let (r, m, a) = (col(|m| m.rmse), col(|m| m.mape), col(|m| m.ape));
        Ok(MetricsReport {
            mean: Metrics {
                rmse: r.0,
                mape: m.0,
                ape: a.0,
            },
            std: Metrics {
                rmse: r.1,
                mape: m.1,
                ape: a.1,
            },
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,rmse,mape,ape\n");
        for (seed, m) in &self.rows {
            out += &format!("{},{},{},{}\n", seed, m.rmse, m.mape, m.ape);
        }
        out += &format!("mean,{},{},{}\n", self.mean.rmse, self.mean.mape, self.mean.ape);
        out += &format!("std,{},{},{}\n", self.std.rmse, self.std.mape, self.std.ape);
        out
    }
}

/// `4.67±0.03`.
pub fn fmt_pm(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", mean, std)
}

/// `3.23E+05±2.31E+03`.
pub fn fmt_pm_sci(mean: f64, std: f64) -> String {
    fn sci(v: f64) -> String {
        let s = format!("{:.2E}", v);
        let (m, e) = s.split_once('E').expect("exponent");
        let e: i32 = e.parse().expect("exponent");
        format!("{}E{}{:02}", m, if e < 0 { '-' } else { '+' }, e.abs())
    }
    format!("{}±{}", sci(mean), sci(std))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8}  {:>12}  {:>12}  {:>12}", "seed", "RMSE", "MAPE", "APE")?;
        for (seed, m) in &self.rows {
            writeln!(f, "{:>8}  {:>12.4}  {:>12.4}  {:>12.4E}", seed, m.rmse, m.mape, m.ape)?;
        }
        writeln!(
            f,
            "{:>8}  {:>12}  {:>12}  {:>12}",
            "mean±std",
            fmt_pm(self.mean.rmse, self.std.rmse),
            fmt_pm(self.mean.mape, self.std.mape),
            fmt_pm_sci(self.mean.ape, self.std.ape)
        )
    }
}
