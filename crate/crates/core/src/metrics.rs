//! Error functionals and cross-repetition statistics.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::LN_10;
use core::ops::RangeInclusive;

use rand::Rng;

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::linmodel::CovariateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Mse,
    Mspe,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Mspe => "mspe",
        }
    }
}

/// `||theta - theta_star||^2`.
pub fn mse(theta: &[f64], theta_star: &[f64]) -> Result<f64> {
    check_len("theta", theta_star.len(), theta.len())?;
    Ok(theta
        .iter()
        .zip(theta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// `(theta - theta_star)^T Sigma (theta - theta_star)`.
pub fn mspe(theta: &[f64], theta_star: &[f64], sigma: &Matrix) -> Result<f64> {
    check_len("theta", theta_star.len(), theta.len())?;
    check_len("sigma", theta.len(), sigma.rows())?;
    let diff: Vec<f64> = theta.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    // rounding can push a PSD quadratic form slightly below zero
    Ok(sigma.quad_form(&diff).max(0.0))
}

/// Average of `(x^T (theta_star - theta))^2` over `n` fresh covariate draws.
pub fn mspe_empirical<R: Rng + ?Sized>(
    theta: &[f64],
    theta_star: &[f64],
    covariates: &CovariateSpec,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    check_len("theta", theta_star.len(), theta.len())?;
    check_len("theta", covariates.dim(), theta.len())?;
    if n == 0 {
        return Err(invalid("n", "need at least one test draw"));
    }
    let diff: Vec<f64> = theta.iter().zip(theta_star).map(|(a, b)| a - b).collect();
    let mut x = alloc::vec![0.0; diff.len()];
    let mut total = 0.0;
    for _ in 0..n {
        covariates.sample_into(rng, &mut x);
        let p = linalg::dot(&x, &diff);
        total += p * p;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub step: usize,
    pub mean: f64,
    /// Sample standard deviation across repetitions (`n - 1` denominator).
    pub std: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub metric: Metric,
    pub points: Vec<SeriesPoint>,
}

impl MetricSeries {
    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.iter().map(|p| p.step)
    }

    pub fn at(&self, step: usize) -> Option<&SeriesPoint> {
        self.points
            .binary_search_by_key(&step, |p| p.step)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn last(&self) -> Option<&SeriesPoint> {
        self.points.last()
    }
}

/// Mean and sample standard deviation per checkpoint.
///
/// Each repetition is a list of `(step, value)` pairs; all repetitions must
/// share one strictly increasing grid.
pub fn aggregate(metric: Metric, per_rep: &[Vec<(usize, f64)>]) -> Result<MetricSeries> {
    let first = per_rep
        .first()
        .ok_or_else(|| invalid("repetitions", "need at least one repetition"))?;
    if first.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::GridMismatch("steps are not strictly increasing".into()));
    }
    for (r, rep) in per_rep.iter().enumerate().skip(1) {
        if rep.len() != first.len() || rep.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::GridMismatch(format!(
                "repetition {r} does not share the grid of repetition 0"
            )));
        }
    }
    let reps = per_rep.len();
    let points = (0..first.len())
        .map(|j| {
            let mean = per_rep.iter().map(|r| r[j].1).sum::<f64>() / reps as f64;
            let std = if reps < 2 {
                0.0
            } else {
                let ss: f64 = per_rep.iter().map(|r| (r[j].1 - mean) * (r[j].1 - mean)).sum();
                libm::sqrt(ss / (reps - 1) as f64)
            };
            SeriesPoint {
                step: first[j].0,
                mean,
                std,
                reps,
            }
        })
        .collect();
    Ok(MetricSeries { metric, points })
}

/// Log-space band: `(log10(mean), std / (mean ln 10))`.
pub fn log_band(mean: f64, std: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) {
        return Err(invalid("mean", "log band needs a positive mean"));
    }
    Ok((libm::log10(mean), std / (mean * LN_10)))
}

/// Least-squares slope of `log10(mean)` against `log10(step)` over the
/// checkpoints whose step lies in `window`.
pub fn loglog_slope(series: &MetricSeries, window: RangeInclusive<usize>) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter(|p| window.contains(&p.step))
        .map(|p| {
            if p.step == 0 || !(p.mean > 0.0) {
                Err(invalid("series", "slope needs positive steps and means"))
            } else {
                Ok((libm::log10(p.step as f64), libm::log10(p.mean)))
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < 3 {
        return Err(invalid(
            "window",
            format!("need at least 3 checkpoints, found {}", pts.len()),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}
