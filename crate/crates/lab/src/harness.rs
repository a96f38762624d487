//! Experiment plans for the four simulation studies, seeded stream layout and
//! the parallel executor.
//!
//! Every unit of work is one (axis value, arm, repetition) cell. A cell's
//! random streams depend only on the master seed and its indices, and results
//! are merged in index order, so records do not depend on the thread count.
//!
//! Stream layout per (axis index, repetition):
//! - `MODEL_SLOT`: `theta_star` and, for low-rank studies, the embedding `U`;
//! - `DATA_SLOT`: the `(x, y)` stream, shared by every arm;
//! - slot `l`: Gaussian directions for arms with `l` updates per sample, so
//!   FGD(l) and aFGD(l), and single-pass and epoch variants, share directions.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use fgd_core::linmodel::SecondMomentSummary;
use fgd_core::metrics::{self, aggregate, Metric, MetricSeries};
use fgd_core::optim::{self, run_trajectory, Dataset, AFGD_RATE_FACTOR};
use fgd_core::{CovariateSpec, EmbeddingPolicy, ModelSpec, OptimizerKind, Schedule, ThetaPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DATA_SLOT: u64 = u64::MAX;
pub const MODEL_SLOT: u64 = u64::MAX - 1;

pub const DEFAULT_REPETITIONS: usize = 10;
pub const DEFAULT_C2_FACTOR: f64 = 0.125;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` of repetition `rep` at axis position `axis`.
pub fn derive_seed(master: u64, axis: u64, stream: u64, rep: u64) -> u64 {
    [axis, stream, rep]
        .iter()
        .fold(splitmix64(master), |h, &i| splitmix64(h ^ i))
}

pub fn stream(master: u64, axis: usize, slot: u64, rep: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, axis as u64, slot, rep as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    DimSweep,
    RepsSweep,
    RankSweep,
    StepTrace,
}

impl Study {
    pub const ALL: [Study; 4] = [
        Study::DimSweep,
        Study::RepsSweep,
        Study::RankSweep,
        Study::StepTrace,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Study::DimSweep => "dim_sweep",
            Study::RepsSweep => "reps_sweep",
            Study::RankSweep => "rank_sweep",
            Study::StepTrace => "step_trace",
        }
    }

    pub fn axis_name(&self) -> &'static str {
        match self {
            Study::DimSweep => "d",
            Study::RepsSweep => "ell",
            Study::RankSweep => "s",
            Study::StepTrace => "d",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown study `{s}`"))
    }
}

/// How learning-rate constants are chosen for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulePolicy {
    /// Equality constants `c1 = 2/lambda_min_nonzero`, `c2 = 4b/lambda_min_nonzero (2 lambda_max + tr/l)`.
    Theorem2,
    /// As `Theorem2` with `c2` multiplied by `c2_factor`.
    Scaled { c2_factor: f64 },
    Fixed { c1: f64, c2: f64 },
    Constant { alpha: f64 },
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        SchedulePolicy::Scaled {
            c2_factor: DEFAULT_C2_FACTOR,
        }
    }
}

/// aFGD learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfgdPolicy {
    /// `sqrt(pi/2)` times the FGD rates with the same `l`.
    #[default]
    ScaledFgd,
    /// Equality constants of the aFGD MSE bound.
    Theorem4,
}

/// Learning-rate schedule for `optimizer` under `policy`.
///
/// SGD takes the FGD constants in the `l -> infinity` limit (no forward
/// gradient variance term).
pub fn schedule_for(
    policy: SchedulePolicy,
    afgd: AfgdPolicy,
    optimizer: OptimizerKind,
    sigma: &SecondMomentSummary,
    b: f64,
) -> fgd_core::Result<Schedule> {
    let ell = optimizer.ell();
    let fgd_form = |factor: f64| -> fgd_core::Result<Schedule> {
        let (c1, c2) = match optimizer {
            OptimizerKind::Sgd => {
                let lam = sigma.lambda_min_nonzero;
                (2.0 / lam, 8.0 * b * sigma.lambda_max / lam)
            }
            _ => optim::theorem2_constants(sigma, b, ell)?,
        };
        Schedule::theorem_form(c1, c2 * factor, ell)
    };
    let base = match policy {
        SchedulePolicy::Theorem2 => fgd_form(1.0)?,
        SchedulePolicy::Scaled { c2_factor } => fgd_form(c2_factor)?,
        SchedulePolicy::Fixed { c1, c2 } => Schedule::theorem_form(c1, c2, ell)?,
        SchedulePolicy::Constant { alpha } => Schedule::constant(alpha, ell)?,
    };
    match optimizer {
        OptimizerKind::Afgd { .. } => match (afgd, policy) {
            (AfgdPolicy::Theorem4, SchedulePolicy::Theorem2 | SchedulePolicy::Scaled { .. }) => {
                let (c1, c2) = optim::theorem4_constants(sigma, b, ell)?;
                Schedule::theorem_form(c1, c2, ell)
            }
            _ => Ok(base.scaled(AFGD_RATE_FACTOR)),
        },
        _ => Ok(base),
    }
}

/// Number of updates per sample, possibly tied to the study's axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllSpec {
    Fixed(usize),
    /// Ambient dimension `d`.
    Dim,
    /// Intrinsic dimension `s`.
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmKind {
    Sgd,
    Fgd,
    Afgd,
}

/// An optimizer template such as `fgd(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmSpec {
    pub kind: ArmKind,
    pub ell: EllSpec,
}

impl ArmSpec {
    pub const SGD: ArmSpec = ArmSpec {
        kind: ArmKind::Sgd,
        ell: EllSpec::Fixed(1),
    };

    pub fn fgd(ell: EllSpec) -> Self {
        Self {
            kind: ArmKind::Fgd,
            ell,
        }
    }

    pub fn afgd(ell: EllSpec) -> Self {
        Self {
            kind: ArmKind::Afgd,
            ell,
        }
    }

    pub fn resolve(&self, d: usize, s: usize) -> OptimizerKind {
        let ell = match self.ell {
            EllSpec::Fixed(l) => l,
            EllSpec::Dim => d,
            EllSpec::Rank => s,
        };
        match self.kind {
            ArmKind::Sgd => OptimizerKind::Sgd,
            ArmKind::Fgd => OptimizerKind::Fgd { ell },
            ArmKind::Afgd => OptimizerKind::Afgd { ell },
        }
    }
}

impl fmt::Display for ArmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            ArmKind::Sgd => return f.write_str("sgd"),
            ArmKind::Fgd => "fgd",
            ArmKind::Afgd => "afgd",
        };
        match self.ell {
            EllSpec::Fixed(l) => write!(f, "{name}({l})"),
            EllSpec::Dim => write!(f, "{name}(d)"),
            EllSpec::Rank => write!(f, "{name}(s)"),
        }
    }
}

impl FromStr for ArmSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim().to_ascii_lowercase();
        if t == "sgd" {
            return Ok(ArmSpec::SGD);
        }
        let bad = || format!("invalid optimizer `{s}` (expected sgd, fgd(L) or afgd(L) with L a positive integer, d or s)");
        let (name, rest) = t.split_once('(').ok_or_else(bad)?;
        let arg = rest.strip_suffix(')').ok_or_else(bad)?.trim();
        let ell = match arg {
            "d" => EllSpec::Dim,
            "s" => EllSpec::Rank,
            n => match n.parse::<usize>() {
                Ok(v) if v >= 1 => EllSpec::Fixed(v),
                _ => return Err(bad()),
            },
        };
        match name.trim() {
            "fgd" => Ok(ArmSpec::fgd(ell)),
            "afgd" => Ok(ArmSpec::afgd(ell)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for ArmSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArmSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Log-spaced checkpoint grid: `count` points from `first` to `n`, rounded
/// and deduplicated, always ending at `n`.
pub fn log_grid(first: usize, n: usize, count: usize) -> Vec<usize> {
    if n == 0 {
        return vec![0];
    }
    let first = first.clamp(1, n);
    if count < 2 || first == n {
        return vec![n];
    }
    let (lo, hi) = ((first as f64).ln(), (n as f64).ln());
    let mut grid: Vec<usize> = (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            ((lo + t * (hi - lo)).exp().round() as usize).clamp(first, n)
        })
        .collect();
    grid.push(n);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// `count` integers equidistant on a log scale between `lo` and `hi`.
pub fn log_axis(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    log_grid(lo, hi, count)
        .into_iter()
        .filter(|&v| v >= lo)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    pub first: usize,
    pub count: usize,
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        Self {
            first: 10,
            count: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub study: Study,
    /// Dimensions (dim sweep), repetitions per sample (reps sweep), ranks
    /// (rank sweep), or the single dimension (step trace).
    pub axis_values: Vec<usize>,
    /// Ambient dimension for the reps and rank sweeps.
    pub dim: usize,
    pub n_samples: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub checkpoints: CheckpointSpec,
    pub schedule: SchedulePolicy,
    pub afgd: AfgdPolicy,
    pub theta_policy: ThetaPolicySer,
    pub embedding: EmbeddingPolicySer,
    /// Optimizer templates; ignored by the reps sweep, whose arms are fixed.
    pub arms: Vec<ArmSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaPolicySer {
    Uniform,
    Normalized,
}

impl From<ThetaPolicySer> for ThetaPolicy {
    fn from(p: ThetaPolicySer) -> Self {
        match p {
            ThetaPolicySer::Uniform => ThetaPolicy::Uniform,
            ThetaPolicySer::Normalized => ThetaPolicy::Normalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingPolicySer {
    Orthonormal,
    Gaussian,
}

impl From<EmbeddingPolicySer> for EmbeddingPolicy {
    fn from(p: EmbeddingPolicySer) -> Self {
        match p {
            EmbeddingPolicySer::Orthonormal => EmbeddingPolicy::Orthonormal,
            EmbeddingPolicySer::Gaussian => EmbeddingPolicy::Gaussian,
        }
    }
}

impl ExperimentPlan {
    /// Defaults sized to finish in seconds to minutes on a laptop.
    pub fn desk(study: Study) -> Self {
        let (axis_values, dim, n, theta, arms) = match study {
            Study::DimSweep => (
                vec![8, 16, 32],
                0,
                20_000,
                ThetaPolicySer::Normalized,
                vec![ArmSpec::SGD, ArmSpec::fgd(EllSpec::Fixed(1)), ArmSpec::fgd(EllSpec::Dim)],
            ),
            Study::RepsSweep => (
                vec![1, 2, 5, 10, 20, 40],
                10,
                10_000,
                ThetaPolicySer::Uniform,
                Vec::new(),
            ),
            Study::RankSweep => (
                vec![5, 10, 20],
                40,
                10_000,
                ThetaPolicySer::Uniform,
                vec![ArmSpec::SGD, ArmSpec::fgd(EllSpec::Fixed(1)), ArmSpec::fgd(EllSpec::Rank)],
            ),
            Study::StepTrace => (
                vec![10],
                10,
                100_000,
                ThetaPolicySer::Uniform,
                vec![
                    ArmSpec::SGD,
                    ArmSpec::fgd(EllSpec::Fixed(1)),
                    ArmSpec::fgd(EllSpec::Dim),
                    ArmSpec::afgd(EllSpec::Fixed(1)),
                    ArmSpec::afgd(EllSpec::Dim),
                ],
            ),
        };
        Self {
            study,
            axis_values,
            dim,
            n_samples: n,
            repetitions: DEFAULT_REPETITIONS,
            master_seed: 0,
            checkpoints: CheckpointSpec::default(),
            schedule: SchedulePolicy::default(),
            afgd: AfgdPolicy::default(),
            theta_policy: theta,
            embedding: EmbeddingPolicySer::Orthonormal,
            arms,
        }
    }

    /// Sizes of the published simulations. Single-threaded runtimes range
    /// from minutes (rank sweep) to about an hour (reps sweep at l = 100).
    pub fn full_scale(study: Study) -> Self {
        let mut p = Self::desk(study);
        match study {
            Study::DimSweep => {
                p.axis_values = log_axis(10, 200, 9);
                p.n_samples = 50_000;
            }
            Study::RepsSweep => {
                p.axis_values = log_axis(1, 100, 9);
                p.dim = 30;
                p.n_samples = 100_000;
            }
            Study::RankSweep => {
                p.axis_values = (1..=10).map(|i| 10 * i).collect();
                p.dim = 100;
                p.n_samples = 30_000;
            }
            Study::StepTrace => {
                p.axis_values = vec![30];
                p.dim = 30;
                p.n_samples = 100_000;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), String> {
        let axis = self.study.axis_name();
        if self.axis_values.is_empty() {
            return Err(format!("{}: axis values ({axis}) must be non-empty", self.study));
        }
        if self.axis_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("{}: axis values ({axis}) must be strictly increasing", self.study));
        }
        if self.axis_values[0] == 0 {
            return Err(format!("{}: axis values ({axis}) must be positive", self.study));
        }
        if self.repetitions == 0 {
            return Err("reps must be at least 1".into());
        }
        if self.n_samples == 0 {
            return Err(format!("{}: n must be at least 1", self.study));
        }
        match self.study {
            Study::RepsSweep | Study::RankSweep if self.dim == 0 => {
                return Err(format!("{}: d must be positive", self.study));
            }
            Study::RankSweep if *self.axis_values.last().unwrap() > self.dim => {
                return Err(format!("rank_sweep: ranks s must not exceed d = {}", self.dim));
            }
            Study::StepTrace if self.axis_values.len() != 1 => {
                return Err("step_trace: exactly one dimension d".into());
            }
            _ => {}
        }
        if self.study != Study::RepsSweep && self.arms.is_empty() {
            return Err(format!("{}: optimizer list must be non-empty", self.study));
        }
        if self.study != Study::RankSweep
            && self.arms.iter().any(|a| a.ell == EllSpec::Rank)
        {
            return Err(format!("{}: `(s)` optimizers need the rank sweep", self.study));
        }
        match self.schedule {
            SchedulePolicy::Scaled { c2_factor } if !(c2_factor > 0.0 && c2_factor.is_finite()) => {
                Err("schedule.c2_factor must be positive".into())
            }
            SchedulePolicy::Fixed { c1, c2 } if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) => {
                Err("schedule.c1 and schedule.c2 must be positive".into())
            }
            SchedulePolicy::Constant { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err("schedule.alpha must be positive".into())
            }
            _ => Ok(()),
        }
    }

    fn dims(&self, axis_value: usize) -> (usize, usize) {
        match self.study {
            Study::DimSweep | Study::StepTrace => (axis_value, axis_value),
            Study::RepsSweep => (self.dim, self.dim),
            Study::RankSweep => (self.dim, axis_value),
        }
    }

    fn metric(&self) -> Metric {
        match self.study {
            Study::RankSweep => Metric::Mspe,
            _ => Metric::Mse,
        }
    }

    fn normalizer(&self, axis_value: usize) -> f64 {
        match self.study {
            Study::DimSweep | Study::RankSweep => axis_value as f64,
            _ => 1.0,
        }
    }

    /// Arms at one axis value, in output order.
    pub fn arms_at(&self, axis_value: usize) -> Vec<Arm> {
        let (d, s) = self.dims(axis_value);
        match self.study {
            Study::RepsSweep => {
                let ell = axis_value;
                vec![
                    Arm::single(OptimizerKind::Fgd { ell }),
                    Arm::epochs(OptimizerKind::Fgd { ell: 1 }, ell),
                    Arm::epochs(OptimizerKind::Sgd, ell),
                    Arm::epochs(OptimizerKind::Fgd { ell: d }, ell),
                    Arm::single(OptimizerKind::Sgd),
                ]
            }
            _ => self.arms.iter().map(|a| Arm::single(a.resolve(d, s))).collect(),
        }
    }

    pub fn grid(&self) -> Vec<usize> {
        log_grid(self.checkpoints.first, self.n_samples, self.checkpoints.count)
    }

    pub fn build_model(&self, axis_index: usize, rep: usize) -> fgd_core::Result<(ModelSpec, SecondMomentSummary)> {
        let axis_value = self.axis_values[axis_index];
        let (d, s) = self.dims(axis_value);
        let mut rng = stream(self.master_seed, axis_index, MODEL_SLOT, rep);
        let covariates = match self.study {
            Study::RankSweep => {
                let u = EmbeddingPolicy::from(self.embedding).draw(d, s, &mut rng)?;
                CovariateSpec::low_rank(u)?
            }
            _ => CovariateSpec::full_cube(d)?,
        };
        let theta_star = ThetaPolicy::from(self.theta_policy).draw(d, &mut rng);
        let sigma = covariates.second_moment()?;
        Ok((ModelSpec::new(covariates, theta_star)?, sigma))
    }
}

/// One optimizer configuration within a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arm {
    pub optimizer: OptimizerKind,
    /// `Some(e)`: `e` passes over a fixed dataset of `n` pairs.
    pub epochs: Option<usize>,
}

impl Arm {
    pub fn single(optimizer: OptimizerKind) -> Self {
        Self {
            optimizer,
            epochs: None,
        }
    }

    pub fn epochs(optimizer: OptimizerKind, epochs: usize) -> Self {
        Self {
            optimizer,
            epochs: Some(epochs),
        }
    }

    /// Name used in output files: `sgd`, `fgd`, `afgd`, with `_epochs` for
    /// multi-pass arms.
    pub fn label(&self) -> String {
        match self.epochs {
            Some(_) => format!("{}_epochs", self.optimizer.name()),
            None => self.optimizer.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRecord {
    pub axis_value: usize,
    pub arm: Arm,
    pub metric: Metric,
    /// `d` for the dim sweep, `s` for the rank sweep, otherwise 1.
    pub normalizer: f64,
    pub per_rep: Vec<Vec<(usize, f64)>>,
    pub summary: MetricSeries,
}

impl SeriesRecord {
    pub fn final_mean(&self) -> f64 {
        self.summary.last().map(|p| p.mean).unwrap_or(f64::NAN)
    }

    pub fn final_mean_normalized(&self) -> f64 {
        self.final_mean() / self.normalizer
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub plan: ExperimentPlan,
    pub series: Vec<SeriesRecord>,
    pub wall_time_secs: f64,
    pub version: &'static str,
    pub threads: usize,
}

impl RunRecord {
    pub fn find(&self, axis_value: usize, arm: Arm) -> Option<&SeriesRecord> {
        self.series
            .iter()
            .find(|s| s.axis_value == axis_value && s.arm == arm)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("{study} at {axis} = {axis_value}, {arm}, repetition {rep}: {source}")]
    Cell {
        study: Study,
        axis: &'static str,
        axis_value: usize,
        arm: String,
        rep: usize,
        source: fgd_core::Error,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// Divergence and numerical failures, as opposed to invalid input.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            HarnessError::Cell {
                source: fgd_core::Error::NonFinite { .. } | fgd_core::Error::EigenNoConvergence { .. },
                ..
            } | HarnessError::Pool(_)
        )
    }
}

fn run_cell(
    plan: &ExperimentPlan,
    axis_index: usize,
    arm: Arm,
    rep: usize,
    grid: &[usize],
) -> fgd_core::Result<Vec<(usize, f64)>> {
    let (model, sigma) = plan.build_model(axis_index, rep)?;
    let d = model.dim();
    let schedule = schedule_for(plan.schedule, plan.afgd, arm.optimizer, &sigma, model.b_bound)?;
    let mut data = stream(plan.master_seed, axis_index, DATA_SLOT, rep);
    let mut noise = stream(plan.master_seed, axis_index, arm.optimizer.ell() as u64, rep);
    let theta0 = vec![0.0; d];
    let n = plan.n_samples;
    let evaluate = |theta: &[f64]| match plan.metric() {
        Metric::Mse => metrics::mse(theta, &model.theta_star),
        Metric::Mspe => metrics::mspe(theta, &model.theta_star, &sigma.sigma),
    };
    match (plan.study, arm.epochs) {
        (_, Some(e)) => {
            let dataset = Dataset::draw(&model, n, &mut data);
            let out = dataset.run_epochs(arm.optimizer, &schedule, e, theta0, &mut noise)?;
            let last = out.last().expect("at least one pass");
            Ok(vec![(e * n, evaluate(&last.theta)?)])
        }
        (Study::RepsSweep, None) => {
            let out = run_trajectory(&model, arm.optimizer, &schedule, n, &[n], theta0, &mut data, &mut noise)?;
            Ok(vec![(n, evaluate(&out[0].theta)?)])
        }
        (_, None) => {
            let out = run_trajectory(&model, arm.optimizer, &schedule, n, grid, theta0, &mut data, &mut noise)?;
            out.iter().map(|c| Ok((c.step, evaluate(&c.theta)?))).collect()
        }
    }
}

/// Runs every cell of `plan` on `threads` workers (0: all cores).
pub fn run_plan(plan: &ExperimentPlan, threads: usize) -> Result<RunRecord, HarnessError> {
    plan.validate().map_err(HarnessError::Plan)?;
    let start = Instant::now();
    let grid = plan.grid();
    let mut cells = Vec::new();
    let mut slots = Vec::new();
    for (ai, &av) in plan.axis_values.iter().enumerate() {
        for arm in plan.arms_at(av) {
            slots.push((ai, av, arm));
            for rep in 0..plan.repetitions {
                cells.push((ai, av, arm, rep));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let used_threads = pool.current_num_threads();
    let results: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(ai, av, arm, rep)| {
                run_cell(plan, ai, arm, rep, &grid).map_err(|source| HarnessError::Cell {
                    study: plan.study,
                    axis: plan.study.axis_name(),
                    axis_value: av,
                    arm: format!("{}", arm.optimizer)
                        + &arm.epochs.map(|e| format!(" x {e} epochs")).unwrap_or_default(),
                    rep,
                    source,
                })
            })
            .collect()
    });
    let mut results = results.into_iter();
    let mut series = Vec::with_capacity(slots.len());
    for (_, av, arm) in slots {
        let per_rep = (0..plan.repetitions)
            .map(|_| results.next().expect("one result per cell"))
            .collect::<Result<Vec<_>, _>>()?;
        let summary = aggregate(plan.metric(), &per_rep).map_err(|e| HarnessError::Plan(e.to_string()))?;
        series.push(SeriesRecord {
            axis_value: av,
            arm,
            metric: plan.metric(),
            normalizer: plan.normalizer(av),
            per_rep,
            summary,
        });
    }
    Ok(RunRecord {
        plan: plan.clone(),
        series,
        wall_time_secs: start.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION"),
        threads: used_threads,
    })
}
