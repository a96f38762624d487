//! Closed-form quantities for FGD(l): the bias of the iterates, the MSPE
//! bound for FGD(l) and the MSE bound for aFGD(l), plus Monte Carlo oracles
//! for the moment identities the analysis relies on.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::linmodel::{CovariateSpec, SecondMomentSummary};
use crate::optim::{
    check_theorem2_admissible, check_theorem4_admissible, fill_standard_normal, rank_one_power,
    sign, Schedule, TrajectoryState,
};

/// Smallest Monte Carlo budget accepted for matrix expectations without a
/// closed form.
pub const MIN_BIAS_MC_SAMPLES: usize = 10_000;

/// Largest `alpha x^T x` for which the noise-correlation identity is checked.
pub const NOISE_CORRELATION_MAX_STEP: f64 = 0.75;

/// Inputs for the expected-iterate computation.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPlan {
    pub schedule: Schedule,
    /// Outer steps `k`.
    pub k: usize,
    pub covariates: CovariateSpec,
    /// Draws per factor when `ell >= 2`.
    pub mc_samples: usize,
}

impl BiasPlan {
    pub fn ell(&self) -> usize {
        self.schedule.ell
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell() >= 2 && self.mc_samples < MIN_BIAS_MC_SAMPLES {
            return Err(invalid(
                "mc_samples",
                format!(
                    "need at least {MIN_BIAS_MC_SAMPLES} draws per factor when ell >= 2, got {}",
                    self.mc_samples
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasEstimate {
    /// `E[theta_k] - theta_star`.
    pub bias: Vec<f64>,
    /// Largest entrywise standard error over the estimated factors; zero when
    /// every factor is exact.
    pub factor_std_error: f64,
}

/// `E[theta_k] - theta_star = prod_{i=1..k} E[(I - alpha_i X X^T)^l] (E[theta_0] - theta_star)`.
///
/// For `l = 1` each factor is `I - alpha_i Sigma`. Otherwise each factor is
/// the average of the rank-one powers over `mc_samples` fresh draws.
pub fn bias_vector<R: Rng + ?Sized>(
    plan: &BiasPlan,
    theta0_mean: &[f64],
    theta_star: &[f64],
    rng: &mut R,
) -> Result<BiasEstimate> {
    plan.validate()?;
    let d = plan.covariates.dim();
    check_len("theta0_mean", d, theta0_mean.len())?;
    check_len("theta_star", d, theta_star.len())?;
    let mut v: Vec<f64> = theta0_mean
        .iter()
        .zip(theta_star)
        .map(|(a, b)| a - b)
        .collect();
    let ell = plan.ell();
    let mut max_se: f64 = 0.0;
    let sigma = if ell == 1 {
        Some(plan.covariates.second_moment()?.sigma)
    } else {
        None
    };
    let mut x = vec![0.0; d];
    for i in 1..=plan.k {
        let alpha = plan.schedule.learning_rate(i);
        let factor = match &sigma {
            Some(s) => {
                let mut f = Matrix::identity(d);
                f.add_scaled(-alpha, s);
                f
            }
            None => {
                let n = plan.mc_samples;
                let mut mean = Matrix::zeros(d, d);
                let mut sq = Matrix::zeros(d, d);
                for _ in 0..n {
                    plan.covariates.sample_into(rng, &mut x);
                    let p = rank_one_power(&x, alpha, ell);
                    for ((m, s), &e) in mean
                        .as_mut_slice()
                        .iter_mut()
                        .zip(sq.as_mut_slice())
                        .zip(p.as_slice())
                    {
                        *m += e;
                        *s += e * e;
                    }
                }
                let nf = n as f64;
                mean.scale(1.0 / nf);
                for (s, &m) in sq.as_slice().iter().zip(mean.as_slice()) {
                    max_se = max_se.max(std_error(*s / nf, m, n));
                }
                mean
            }
        };
        v = factor.matvec(&v)?;
    }
    Ok(BiasEstimate {
        bias: v,
        factor_std_error: max_se,
    })
}

// standard error of a mean from the raw second moment
fn std_error(mean_sq: f64, mean: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let var = (mean_sq - mean * mean).max(0.0) * nf / (nf - 1.0);
    libm::sqrt(var / nf)
}

fn check_k_and_risk(name: &'static str, risk0: f64) -> Result<()> {
    if risk0.is_finite() && risk0 >= 0.0 {
        Ok(())
    } else {
        Err(invalid(name, "initial risk must be finite and non-negative"))
    }
}

/// Right-hand side of the FGD(l) MSPE bound with explicit constants:
/// `((1+c)/(k+1+c))^2 mspe0 + 16 b c1^2 (lambda_max + tr/l) k/(k+1+c)^2`,
/// where `c = c1 c2`. No admissibility check.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_rhs(
    k: usize,
    c1: f64,
    c2: f64,
    ell: usize,
    b: f64,
    lambda_max: f64,
    trace: f64,
    mspe0: f64,
) -> f64 {
    let c = c1 * c2;
    let k = k as f64;
    let contraction = (1.0 + c) / (k + 1.0 + c);
    let noise = 16.0 * b * c1 * c1 * (lambda_max + trace / ell as f64);
    contraction * contraction * mspe0 + noise * k / ((k + 1.0 + c) * (k + 1.0 + c))
}

/// FGD(l) MSPE bound at step `k`; errors if the schedule is inadmissible.
pub fn theorem2_bound(
    k: usize,
    schedule: &Schedule,
    b: f64,
    sigma: &SecondMomentSummary,
    mspe0: f64,
) -> Result<f64> {
    check_theorem2_admissible(schedule, sigma, b)?;
    check_k_and_risk("mspe0", mspe0)?;
    Ok(theorem2_rhs(
        k,
        schedule.c1,
        schedule.c2,
        schedule.ell,
        b,
        sigma.lambda_max,
        sigma.trace,
        mspe0,
    ))
}

/// Right-hand side of the aFGD(l) MSE bound with explicit constants:
/// `((1+c)/(k+1+c))^2 mse0 + 8 c1^2 tr (2/pi + d/l) k/(k+1+c)^2`.
pub fn theorem4_rhs(k: usize, c1: f64, c2: f64, ell: usize, trace: f64, dim: usize, mse0: f64) -> f64 {
    let c = c1 * c2;
    let k = k as f64;
    let contraction = (1.0 + c) / (k + 1.0 + c);
    let noise = 8.0 * c1 * c1 * trace * (2.0 / PI + dim as f64 / ell as f64);
    contraction * contraction * mse0 + noise * k / ((k + 1.0 + c) * (k + 1.0 + c))
}

/// aFGD(l) MSE bound at step `k`; requires full-rank `Sigma` and admissible
/// constants for the norm bound `b`.
pub fn theorem4_bound(
    k: usize,
    schedule: &Schedule,
    b: f64,
    sigma: &SecondMomentSummary,
    mse0: f64,
) -> Result<f64> {
    check_theorem4_admissible(schedule, sigma, b)?;
    check_k_and_risk("mse0", mse0)?;
    Ok(theorem4_rhs(
        k,
        schedule.c1,
        schedule.c2,
        schedule.ell,
        sigma.trace,
        sigma.dim(),
        mse0,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    FgdMspe,
    AfgdMse,
}

/// Bound values on a checkpoint grid, with the constants used.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub points: Vec<(usize, f64)>,
    pub c1: f64,
    pub c2: f64,
    pub ell: usize,
    pub b: f64,
    pub lambda_max: f64,
    pub lambda_min_nonzero: f64,
    pub trace: f64,
}

impl BoundReport {
    pub fn new(
        kind: BoundKind,
        steps: &[usize],
        schedule: &Schedule,
        b: f64,
        sigma: &SecondMomentSummary,
        risk0: f64,
    ) -> Result<Self> {
        let eval = |k| match kind {
            BoundKind::FgdMspe => theorem2_bound(k, schedule, b, sigma, risk0),
            BoundKind::AfgdMse => theorem4_bound(k, schedule, b, sigma, risk0),
        };
        // validates even for an empty grid
        eval(0)?;
        let points = steps
            .iter()
            .map(|&k| eval(k).map(|v| (k, v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            points,
            c1: schedule.c1,
            c2: schedule.c2,
            ell: schedule.ell,
            b,
            lambda_max: sigma.lambda_max,
            lambda_min_nonzero: sigma.lambda_min_nonzero,
            trace: sigma.trace,
        })
    }
}

/// Monte Carlo estimate next to the exact value, flattened row-major for
/// matrices, with the per-entry standard error of the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub empirical: Vec<f64>,
    pub exact: Vec<f64>,
    pub std_error: Vec<f64>,
    pub samples: usize,
}

impl OracleOutcome {
    pub fn max_abs_deviation(&self) -> f64 {
        self.empirical
            .iter()
            .zip(&self.exact)
            .map(|(e, x)| (e - x).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|empirical - exact| / std_error`; entries with zero standard
    /// error count as infinite unless they match exactly.
    pub fn max_z_score(&self) -> f64 {
        self.empirical
            .iter()
            .zip(&self.exact)
            .zip(&self.std_error)
            .map(|((e, x), s)| {
                let dev = (e - x).abs();
                if dev == 0.0 {
                    0.0
                } else if *s > 0.0 {
                    dev / s
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest standard error, or zero for an exact outcome.
    pub fn max_std_error(&self) -> f64 {
        self.std_error.iter().copied().fold(0.0, f64::max)
    }

    /// Deviation at most `z` standard errors of the largest-error entry.
    pub fn within(&self, z: f64) -> bool {
        self.max_abs_deviation() <= z * self.max_std_error()
    }
}

// running mean and second moment of vector-valued samples
struct Accumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    n: usize,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
            n: 0,
        }
    }

    fn push(&mut self, sample: &[f64]) {
        for ((s, q), &v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(sample) {
            *s += v;
            *q += v * v;
        }
        self.n += 1;
    }

    fn finish(self, exact: Vec<f64>) -> OracleOutcome {
        let nf = self.n as f64;
        let empirical: Vec<f64> = self.sum.iter().map(|s| s / nf).collect();
        let std_error = self
            .sum_sq
            .iter()
            .zip(&empirical)
            .map(|(q, m)| std_error(q / nf, *m, self.n))
            .collect();
        OracleOutcome {
            empirical,
            exact,
            std_error,
            samples: self.n,
        }
    }
}

fn check_samples(mc_samples: usize) -> Result<()> {
    if mc_samples == 0 {
        Err(invalid("mc_samples", "must be at least 1"))
    } else {
        Ok(())
    }
}

/// Unbiasedness of the forward gradient: `E[(v^T xi) xi] = v`.
pub fn oracle_forward_gradient<R: Rng + ?Sized>(
    v: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<OracleOutcome> {
    check_samples(mc_samples)?;
    let d = v.len();
    let mut acc = Accumulator::new(d);
    let mut xi = vec![0.0; d];
    let mut sample = vec![0.0; d];
    for _ in 0..mc_samples {
        fill_standard_normal(rng, &mut xi);
        let proj = linalg::dot(v, &xi);
        for (s, z) in sample.iter_mut().zip(&xi) {
            *s = proj * z;
        }
        acc.push(&sample);
    }
    Ok(acc.finish(v.to_vec()))
}

/// `E[(u^T z)^2 z z^T] = 2 Gamma u u^T Gamma + (u^T Gamma u) Gamma` for
/// `z ~ N(0, Gamma)`.
pub fn oracle_isserlis<R: Rng + ?Sized>(
    gamma: &Matrix,
    u: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<OracleOutcome> {
    check_samples(mc_samples)?;
    let d = gamma.rows();
    check_len("u", d, u.len())?;
    let l = linalg::cholesky(gamma)?;
    let exact = isserlis_exact(gamma, u)?;
    let mut acc = Accumulator::new(d * d);
    let mut g = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut sample = vec![0.0; d * d];
    for _ in 0..mc_samples {
        fill_standard_normal(rng, &mut g);
        l.matvec_into(&g, &mut z);
        let w = linalg::dot(u, &z);
        let w2 = w * w;
        for i in 0..d {
            for j in 0..d {
                sample[i * d + j] = w2 * z[i] * z[j];
            }
        }
        acc.push(&sample);
    }
    Ok(acc.finish(exact.into_vec()))
}

/// `2 Gamma u u^T Gamma + (u^T Gamma u) Gamma`.
pub fn isserlis_exact(gamma: &Matrix, u: &[f64]) -> Result<Matrix> {
    let gu = gamma.matvec(u)?;
    let mut m = Matrix::outer(&gu, &gu).scaled(2.0);
    m.add_scaled(linalg::dot(u, &gu), gamma);
    Ok(m)
}

/// `||a|| E[sign(a^T xi) xi] = sqrt(2/pi) a`.
pub fn oracle_sign_moment<R: Rng + ?Sized>(
    a: &[f64],
    mc_samples: usize,
    rng: &mut R,
) -> Result<OracleOutcome> {
    check_samples(mc_samples)?;
    let norm = linalg::norm(a);
    if !(norm > 0.0) {
        return Err(invalid("a", "must be non-zero"));
    }
    let d = a.len();
    let mut acc = Accumulator::new(d);
    let mut xi = vec![0.0; d];
    let mut sample = vec![0.0; d];
    for _ in 0..mc_samples {
        fill_standard_normal(rng, &mut xi);
        let s = norm * sign(linalg::dot(a, &xi));
        for (o, z) in sample.iter_mut().zip(&xi) {
            *o = s * z;
        }
        acc.push(&sample);
    }
    let c = libm::sqrt(2.0 / PI);
    Ok(acc.finish(a.iter().map(|v| c * v).collect()))
}

/// `1 - (1 - alpha x^T x)^r`.
pub fn noise_correlation_exact(x: &[f64], alpha: f64, r: usize) -> f64 {
    1.0 - libm::pow(1.0 - alpha * linalg::norm_sq(x), r as f64)
}

/// `x^T E[eps theta_r] = 1 - (1 - alpha x^T x)^r` after `r` FGD inner steps
/// on one sample with unit-variance noise.
///
/// Every replicate starts from `theta = 0` with fresh noise and directions.
/// `theta_r` is linear in `y` given the directions, so `theta_star` does not
/// enter and is taken to be zero. Requires `alpha x^T x <= 3/4`.
pub fn oracle_noise_correlation<R: Rng + ?Sized>(
    x: &[f64],
    alpha: f64,
    r: usize,
    mc_samples: usize,
    rng: &mut R,
) -> Result<OracleOutcome> {
    check_samples(mc_samples)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(invalid("alpha", "must be positive and finite"));
    }
    let step = alpha * linalg::norm_sq(x);
    if step > NOISE_CORRELATION_MAX_STEP {
        return Err(Error::Precondition(format!(
            "alpha x^T x <= 3/4 violated: alpha x^T x = {step}"
        )));
    }
    let d = x.len();
    let mut acc = Accumulator::new(1);
    let mut xi = vec![0.0; d];
    let mut state = TrajectoryState::zeros(d);
    for _ in 0..mc_samples {
        state.theta.iter_mut().for_each(|t| *t = 0.0);
        let eps: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        for _ in 0..r {
            fill_standard_normal(rng, &mut xi);
            state.fgd_step(x, eps, alpha, &xi)?;
        }
        acc.push(&[eps * linalg::dot(x, &state.theta)]);
    }
    Ok(acc.finish(vec![noise_correlation_exact(x, alpha, r)]))
}
