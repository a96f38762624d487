//! Monte Carlo check of the moment identities and of the expected-iterate
//! formula on randomized instances.

use std::f64::consts::PI;
use std::fmt;

use fgd_core::linalg::{self, Matrix};
use fgd_core::optim::run_trajectory;
use fgd_core::theory::{self, bias_vector, BiasPlan, OracleOutcome};
use fgd_core::{CovariateSpec, ModelSpec, OptimizerKind, Schedule, ThetaPolicy};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::harness::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    ForwardGradient,
    Isserlis,
    SignMoment,
    NoiseCorrelation,
    Bias,
}

impl Identity {
    pub const ORACLES: [Identity; 4] = [
        Identity::ForwardGradient,
        Identity::Isserlis,
        Identity::SignMoment,
        Identity::NoiseCorrelation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Identity::ForwardGradient => "forward_gradient_unbiased",
            Identity::Isserlis => "gaussian_fourth_moment",
            Identity::SignMoment => "sign_moment",
            Identity::NoiseCorrelation => "noise_correlation",
            Identity::Bias => "expected_iterate",
        }
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub mc_samples: usize,
    pub instances: usize,
    pub seed: u64,
    /// Tolerance in standard errors for the moment identities.
    pub z_oracle: f64,
    /// Tolerance in standard errors for the expected-iterate rows.
    pub z_bias: f64,
    pub bias_trajectories: usize,
    pub bias_mc_samples: usize,
    /// Constant in the sign-moment identity; replaced only to check that the
    /// suite detects a wrong closed form.
    pub sign_constant: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            mc_samples: 1_000_000,
            instances: 5,
            seed: 0,
            z_oracle: 5.0,
            z_bias: 4.0,
            bias_trajectories: 20_000,
            bias_mc_samples: 1_000_000,
            sign_constant: (2.0 / PI).sqrt(),
        }
    }
}

/// Worst entry of one identity instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub identity: Identity,
    pub instance: usize,
    pub exact: f64,
    pub empirical: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerifyRow {
    fn from_outcome(identity: Identity, instance: usize, out: &OracleOutcome, z: f64) -> Self {
        // entry with the largest deviation relative to its standard error
        let mut worst = 0;
        let mut worst_score = -1.0;
        for i in 0..out.exact.len() {
            let dev = (out.empirical[i] - out.exact[i]).abs();
            let score = if dev == 0.0 {
                0.0
            } else if out.std_error[i] > 0.0 {
                dev / out.std_error[i]
            } else {
                f64::INFINITY
            };
            if score > worst_score {
                worst_score = score;
                worst = i;
            }
        }
        let deviation = (out.empirical[worst] - out.exact[worst]).abs();
        let tolerance = z * out.std_error[worst];
        Self {
            identity,
            instance,
            exact: out.exact[worst],
            empirical: out.empirical[worst],
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }
}

fn uniform_vec<R: Rng>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

fn oracle_instance(
    identity: Identity,
    instance: usize,
    opts: &VerifyOptions,
) -> fgd_core::Result<VerifyRow> {
    let slot = identity as u64;
    let mut setup = stream(opts.seed, 0, slot, instance);
    let mut mc = stream(opts.seed, 1, slot, instance);
    let n = opts.mc_samples;
    let out = match identity {
        Identity::ForwardGradient => {
            let d = setup.random_range(2..=6);
            let v = uniform_vec(&mut setup, d, -2.0, 2.0);
            theory::oracle_forward_gradient(&v, n, &mut mc)?
        }
        Identity::Isserlis => {
            let d = setup.random_range(2..=4);
            let a = Matrix::from_row_major(d, d, uniform_vec(&mut setup, d * d, -1.0, 1.0))?;
            let mut gamma = a.matmul(&a.transpose())?;
            gamma.add_scaled(0.5, &Matrix::identity(d));
            let u = uniform_vec(&mut setup, d, -1.0, 1.0);
            theory::oracle_isserlis(&gamma, &u, n, &mut mc)?
        }
        Identity::SignMoment => {
            let d = setup.random_range(2..=6);
            let a = uniform_vec(&mut setup, d, -3.0, 3.0);
            let mut out = theory::oracle_sign_moment(&a, n, &mut mc)?;
            out.exact = a.iter().map(|v| opts.sign_constant * v).collect();
            out
        }
        Identity::NoiseCorrelation => {
            let d = setup.random_range(2..=5);
            let x = uniform_vec(&mut setup, d, -1.0, 1.0);
            let step: f64 = setup.random_range(0.05..0.75);
            let alpha = step / linalg::norm_sq(&x);
            let r = setup.random_range(1..=6);
            theory::oracle_noise_correlation(&x, alpha, r, n, &mut mc)?
        }
        Identity::Bias => unreachable!("bias rows are built by bias_rows"),
    };
    Ok(VerifyRow::from_outcome(identity, instance, &out, opts.z_oracle))
}

/// Mean of `theta_k` over independent FGD(l) trajectories against
/// `theta_star + bias_vector` for `d = 3`, cube covariates, `l = 2`, `k = 5`.
/// One row per coordinate.
pub fn bias_rows(opts: &VerifyOptions) -> fgd_core::Result<Vec<VerifyRow>> {
    let (d, ell, k) = (3, 2, 5);
    let mut setup = stream(opts.seed, 0, Identity::Bias as u64, 0);
    let cov = CovariateSpec::full_cube(d)?;
    let theta_star = ThetaPolicy::Uniform.draw(d, &mut setup);
    let model = ModelSpec::new(cov.clone(), theta_star.clone())?;
    let schedule = Schedule::theorem_form(2.0, 3.0, ell)?;
    let theta0 = vec![0.0; d];
    let plan = BiasPlan {
        schedule,
        k,
        covariates: cov,
        mc_samples: opts.bias_mc_samples,
    };
    let mut bias_rng = stream(opts.seed, 1, Identity::Bias as u64, 0);
    let est = bias_vector(&plan, &theta0, &theta_star, &mut bias_rng)?;
    let n = opts.bias_trajectories.max(2);
    let finals: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut data = stream(opts.seed, 2, Identity::Bias as u64, t);
            let mut noise = stream(opts.seed, 3, Identity::Bias as u64, t);
            run_trajectory(
                &model,
                OptimizerKind::Fgd { ell },
                &schedule,
                k,
                &[k],
                theta0.clone(),
                &mut data,
                &mut noise,
            )
            .map(|mut c| c.pop().expect("one checkpoint").theta)
        })
        .collect::<fgd_core::Result<_>>()?;
    // error of the product of estimated factors, to first order
    let e0: f64 = theta0.iter().zip(&theta_star).map(|(a, b)| (a - b).abs()).sum();
    let bias_se = k as f64 * est.factor_std_error * e0;
    Ok((0..d)
        .map(|j| {
            let vals: Vec<f64> = finals.iter().map(|t| t[j]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64 + bias_se * bias_se).sqrt();
            let exact = theta_star[j] + est.bias[j];
            let deviation = (mean - exact).abs();
            let tolerance = opts.z_bias * se;
            VerifyRow {
                identity: Identity::Bias,
                instance: j,
                exact,
                empirical: mean,
                deviation,
                tolerance,
                passed: deviation <= tolerance,
            }
        })
        .collect())
}

/// Every identity on `opts.instances` random instances, then the
/// expected-iterate rows.
pub fn run_verify(opts: &VerifyOptions) -> fgd_core::Result<Vec<VerifyRow>> {
    let jobs: Vec<(Identity, usize)> = Identity::ORACLES
        .iter()
        .flat_map(|&id| (0..opts.instances).map(move |i| (id, i)))
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(id, i)| oracle_instance(id, i, opts))
        .collect::<fgd_core::Result<Vec<_>>>()?;
    rows.extend(bias_rows(opts)?);
    Ok(rows)
}

pub fn format_table(rows: &[VerifyRow]) -> String {
    let mut s = format!(
        "{:<26} {:>4} {:>16} {:>16} {:>12} {:>12}  {}\n",
        "identity", "inst", "exact", "empirical", "deviation", "tolerance", "result"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<26} {:>4} {:>16.8e} {:>16.8e} {:>12.4e} {:>12.4e}  {}\n",
            r.identity.name(),
            r.instance,
            r.exact,
            r.empirical,
            r.deviation,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    s
}
