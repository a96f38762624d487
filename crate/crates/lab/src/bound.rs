//! Measured risk of FGD(l) (or aFGD(l)) next to its theoretical upper bound.

use fgd_core::metrics::{self, aggregate, Metric};
use fgd_core::optim::{self, run_trajectory};
use fgd_core::theory::{BoundKind, BoundReport};
use fgd_core::{CovariateSpec, ModelSpec, OptimizerKind, Schedule, ThetaPolicy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::harness::{log_grid, stream, DATA_SLOT, MODEL_SLOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundTarget {
    /// MSPE of FGD(l).
    FgdMspe,
    /// MSE of aFGD(l); needs full-rank `Sigma`.
    AfgdMse,
}

impl From<BoundTarget> for BoundKind {
    fn from(t: BoundTarget) -> Self {
        match t {
            BoundTarget::FgdMspe => BoundKind::FgdMspe,
            BoundTarget::AfgdMse => BoundKind::AfgdMse,
        }
    }
}

/// Schedule used by the bound study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundSchedule {
    /// Equality constants of the bound being checked.
    Equality,
    Fixed { c1: f64, c2: f64 },
    Constant { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundPlan {
    pub kind: BoundTarget,
    pub dim: usize,
    pub ell: usize,
    pub n_samples: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub schedule: BoundSchedule,
    pub checkpoints: usize,
    /// Standard errors of slack allowed above the bound.
    pub z: f64,
}

impl Default for BoundPlan {
    fn default() -> Self {
        Self {
            kind: BoundTarget::FgdMspe,
            dim: 2,
            ell: 1,
            n_samples: 10_000,
            repetitions: 20,
            master_seed: 0,
            schedule: BoundSchedule::Equality,
            checkpoints: 30,
            z: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub step: usize,
    pub measured_mean: f64,
    pub measured_std: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundOutcome {
    pub rows: Vec<BoundRow>,
    pub report: BoundReport,
    pub repetitions: usize,
    pub z: f64,
    pub theta_star: Vec<f64>,
}

impl BoundOutcome {
    /// Rows where the mean exceeds the bound by more than `z` standard errors
    /// (plus rounding: at `k = 0` mean and bound are the same number).
    pub fn violations(&self) -> Vec<&BoundRow> {
        let sqrt_n = (self.repetitions as f64).sqrt();
        self.rows
            .iter()
            .filter(|r| {
                r.measured_mean > r.bound * (1.0 + 1e-12) + self.z * r.measured_std / sqrt_n
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BoundError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Inadmissible(fgd_core::Error),
    #[error("trajectory failed: {0}")]
    Runtime(fgd_core::Error),
}

/// Runs `repetitions` trajectories from `theta_0 = 0` on unit-variance cube
/// covariates. `theta_star` is drawn once from the master seed, so the
/// initial risk in the bound is deterministic.
pub fn run_bound(plan: &BoundPlan) -> Result<BoundOutcome, BoundError> {
    if plan.dim == 0 || plan.ell == 0 || plan.repetitions == 0 {
        return Err(BoundError::Config(
            "bound: d, ell and reps must be positive".into(),
        ));
    }
    let cov = CovariateSpec::full_cube(plan.dim).map_err(BoundError::Runtime)?;
    let sigma = cov.second_moment().map_err(BoundError::Runtime)?;
    let mut model_rng = stream(plan.master_seed, 0, MODEL_SLOT, 0);
    let theta_star = ThetaPolicy::Uniform.draw(plan.dim, &mut model_rng);
    let model = ModelSpec::new(cov, theta_star.clone()).map_err(BoundError::Runtime)?;
    let b = model.b_bound;
    let kind = BoundKind::from(plan.kind);
    let (optimizer, metric) = match kind {
        BoundKind::FgdMspe => (OptimizerKind::Fgd { ell: plan.ell }, Metric::Mspe),
        BoundKind::AfgdMse => (OptimizerKind::Afgd { ell: plan.ell }, Metric::Mse),
    };
    let schedule = match plan.schedule {
        BoundSchedule::Equality => {
            let (c1, c2) = match kind {
                BoundKind::FgdMspe => optim::theorem2_constants(&sigma, b, plan.ell),
                BoundKind::AfgdMse => optim::theorem4_constants(&sigma, b, plan.ell),
            }
            .map_err(BoundError::Inadmissible)?;
            Schedule::theorem_form(c1, c2, plan.ell)
        }
        BoundSchedule::Fixed { c1, c2 } => Schedule::theorem_form(c1, c2, plan.ell),
        BoundSchedule::Constant { alpha } => Schedule::constant(alpha, plan.ell),
    }
    .map_err(|e| BoundError::Config(e.to_string()))?;

    let theta0 = vec![0.0; plan.dim];
    let evaluate = |theta: &[f64]| match metric {
        Metric::Mse => metrics::mse(theta, &theta_star),
        Metric::Mspe => metrics::mspe(theta, &theta_star, &sigma.sigma),
    };
    let risk0 = evaluate(&theta0).map_err(BoundError::Runtime)?;
    let mut grid = vec![0];
    grid.extend(log_grid(1, plan.n_samples, plan.checkpoints));
    grid.dedup();
    let report = BoundReport::new(kind, &grid, &schedule, b, &sigma, risk0)
        .map_err(BoundError::Inadmissible)?;

    let per_rep = (0..plan.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut data = stream(plan.master_seed, 0, DATA_SLOT, rep);
            let mut noise = stream(plan.master_seed, 0, plan.ell as u64, rep);
            let out = run_trajectory(
                &model,
                optimizer,
                &schedule,
                plan.n_samples,
                &grid,
                theta0.clone(),
                &mut data,
                &mut noise,
            )?;
            out.iter()
                .map(|c| Ok((c.step, evaluate(&c.theta)?)))
                .collect::<fgd_core::Result<Vec<_>>>()
        })
        .collect::<fgd_core::Result<Vec<_>>>()
        .map_err(BoundError::Runtime)?;
    let series = aggregate(metric, &per_rep).map_err(BoundError::Runtime)?;
    let rows = series
        .points
        .iter()
        .zip(&report.points)
        .map(|(p, &(k, bound))| {
            debug_assert_eq!(p.step, k);
            BoundRow {
                step: k,
                measured_mean: p.mean,
                measured_std: p.std,
                bound,
            }
        })
        .collect();
    Ok(BoundOutcome {
        rows,
        report,
        repetitions: plan.repetitions,
        z: plan.z,
        theta_star,
    })
}

pub fn write_bound_csv<W: std::io::Write>(outcome: &BoundOutcome, out: W) -> csv::Result<()> {
    use crate::output::{fmt_f64, BOUND_COLUMNS};
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUND_COLUMNS)?;
    for r in &outcome.rows {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.measured_mean),
            fmt_f64(r.measured_std),
            fmt_f64(r.bound),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_is_initial_risk() {
        let plan = BoundPlan {
            n_samples: 500,
            repetitions: 4,
            ..BoundPlan::default()
        };
        let out = run_bound(&plan).unwrap();
        let first = out.rows[0];
        assert_eq!(first.step, 0);
        assert_eq!(first.measured_mean, first.bound);
        assert_eq!(first.measured_std, 0.0);
        let mspe0: f64 = out.theta_star.iter().map(|t| t * t).sum();
        assert!((first.bound - mspe0).abs() <= 1e-12 * mspe0);
        assert_eq!(out.rows.last().unwrap().step, 500);
    }

    #[test]
    fn constant_rate_is_rejected() {
        let plan = BoundPlan {
            schedule: BoundSchedule::Constant { alpha: 0.01 },
            n_samples: 10,
            ..BoundPlan::default()
        };
        match run_bound(&plan) {
            Err(BoundError::Inadmissible(e)) => assert!(e.to_string().contains("of the form")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn afgd_bound_holds_on_short_run() {
        let plan = BoundPlan {
            kind: BoundTarget::AfgdMse,
            dim: 2,
            ell: 2,
            n_samples: 2_000,
            repetitions: 10,
            ..BoundPlan::default()
        };
        let out = run_bound(&plan).unwrap();
        assert!(out.violations().is_empty());
    }
}
