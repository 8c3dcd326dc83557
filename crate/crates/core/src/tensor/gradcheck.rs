//! Finite-difference verification of tape gradients in 64-bit.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over the checked elements.
    pub max_rel_error: f64,
    /// (input index, flat element index) where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// True if any analytic or numeric value was NaN or infinite.
    pub non_finite: bool,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.non_finite && self.max_rel_error < tol
    }
}

/// How the numeric derivative is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    /// Plain central difference `(f(x+h) - f(x-h)) / 2h`.
    Central(f64),
    /// Central differences on a geometric ladder of steps from `max` down to
    /// `min` (ratio sqrt(10)). The estimate kept is the one closest to its
    /// predecessor on the ladder: large steps straddle ReLU kinks, small ones
    /// drown in roundoff, and the two neighbours agree in between.
    Plateau { max: f64, min: f64 },
}

impl Step {
    /// Ladder used for whole-network checks.
    pub fn plateau() -> Self {
        Step::Plateau { max: 1e-2, min: 1e-8 }
    }
}

fn plateau(mut central: impl FnMut(f64) -> Result<f64>, max: f64, min: f64) -> Result<f64> {
    let ratio = 10f64.sqrt();
    let mut h = max;
    let mut prev = central(h)?;
    let mut best = (f64::INFINITY, prev);
    while h / ratio >= min * (1.0 - 1e-9) {
        h /= ratio;
        let d = central(h)?;
        let gap = (d - prev).abs();
        if gap < best.0 {
            best = (gap, d);
        }
        prev = d;
    }
    Ok(best.1)
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::shape("gradcheck", format!("function must return a scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Checks the gradient of scalar `f` with respect to every element of `x`.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, epsilon: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let g = |t: &mut Tape<f64>, v: &[Var]| f(t, v[0]);
    let indices: Vec<(usize, usize)> = (0..x.numel()).map(|i| (0, i)).collect();
    gradcheck_indices(g, std::slice::from_ref(x), &indices, Step::Central(epsilon))
}

/// Checks the gradient of scalar `f` with respect to the listed
/// (input, element) pairs only.
pub fn gradcheck_indices<F>(
    f: F,
    inputs: &[Tensor<f64>],
    indices: &[(usize, usize)],
    step: Step,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        non_finite: false,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &(input, elem) in indices {
        if input >= inputs.len() || elem >= inputs[input].numel() {
            return Err(Error::shape("gradcheck", format!("index ({}, {}) out of range", input, elem)));
        }
        let analytic = grads.get(vars[input]).map_or(0.0, |g| g.data()[elem]);
        let orig = work[input].data()[elem];
        let mut central = |h: f64| -> Result<f64> {
            work[input].data_mut()[elem] = orig + h;
            let plus = eval(&f, &work)?;
            work[input].data_mut()[elem] = orig - h;
            let minus = eval(&f, &work)?;
            work[input].data_mut()[elem] = orig;
            Ok((plus - minus) / (2.0 * h))
        };
        let numeric = match step {
            Step::Central(h) => central(h)?,
            Step::Plateau { max, min } => plateau(&mut central, max, min)?,
        };

        report.checked += 1;
        if !analytic.is_finite() || !numeric.is_finite() {
            report.non_finite = true;
            report.max_rel_error = f64::NAN;
            report.worst = Some((input, elem));
            report.analytic = analytic;
            report.numeric = numeric;
            continue;
        }
        let err = relative_error(analytic, numeric);
        if !report.non_finite && (report.worst.is_none() || err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst = Some((input, elem));
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
