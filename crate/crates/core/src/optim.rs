//! Update rules for SGD, FGD(l) and aFGD(l) in the linear model, the
//! `c1 / (l (c1 c2 + i))` learning-rate schedule, and the constants that make
//! the MSPE and MSE guarantees apply.
//!
//! Single-step updates take the Gaussian direction `xi` explicitly so that
//! callers (and tests) control it; the runners draw it from a dedicated
//! noise stream. Data and direction noise come from separate streams, which
//! makes a single pass over a pre-drawn dataset bitwise identical to the
//! streaming run on the same data stream.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::linmodel::{ModelSpec, SecondMomentSummary};

/// `sqrt(pi / 2)`, the factor relating aFGD and FGD learning rates.
pub const AFGD_RATE_FACTOR: f64 = 1.253_314_137_315_500_3;

const ADMISSIBILITY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Fgd { ell: usize },
    Afgd { ell: usize },
}

impl OptimizerKind {
    /// Updates per training sample (1 for SGD).
    pub fn ell(&self) -> usize {
        match *self {
            OptimizerKind::Sgd => 1,
            OptimizerKind::Fgd { ell } | OptimizerKind::Afgd { ell } => ell,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell() == 0 {
            return Err(invalid("ell", "repetitions per sample must be at least 1"));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Fgd { .. } => "fgd",
            OptimizerKind::Afgd { .. } => "afgd",
        }
    }
}

impl core::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            OptimizerKind::Sgd => f.write_str("SGD"),
            OptimizerKind::Fgd { ell } => write!(f, "FGD({ell})"),
            OptimizerKind::Afgd { ell } => write!(f, "aFGD({ell})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    /// `alpha_i = c1 / (ell * (c1 * c2 + i))`
    TheoremForm,
    Constant { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub c1: f64,
    pub c2: f64,
    pub ell: usize,
    pub mode: ScheduleMode,
}

impl Schedule {
    pub fn theorem_form(c1: f64, c2: f64, ell: usize) -> Result<Self> {
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(invalid("c1", "must be positive and finite"));
        }
        if !(c2.is_finite() && c2 > 0.0) {
            return Err(invalid("c2", "must be positive and finite"));
        }
        if ell == 0 {
            return Err(invalid("ell", "must be at least 1"));
        }
        Ok(Self {
            c1,
            c2,
            ell,
            mode: ScheduleMode::TheoremForm,
        })
    }

    pub fn constant(alpha: f64, ell: usize) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("alpha", "must be positive and finite"));
        }
        if ell == 0 {
            return Err(invalid("ell", "must be at least 1"));
        }
        Ok(Self {
            c1: f64::NAN,
            c2: f64::NAN,
            ell,
            mode: ScheduleMode::Constant { alpha },
        })
    }

    /// Learning rate for outer step `i >= 1`.
    pub fn learning_rate(&self, i: usize) -> f64 {
        debug_assert!(i >= 1, "learning-rate index starts at 1");
        match self.mode {
            ScheduleMode::TheoremForm => {
                self.c1 / (self.ell as f64 * (self.c1 * self.c2 + i as f64))
            }
            ScheduleMode::Constant { alpha } => alpha,
        }
    }

    /// Multiplies every learning rate by `factor` while keeping the form:
    /// `c1 -> factor * c1`, `c2 -> c2 / factor` leaves `c1 c2` unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        match self.mode {
            ScheduleMode::TheoremForm => Self {
                c1: self.c1 * factor,
                c2: self.c2 / factor,
                ..*self
            },
            ScheduleMode::Constant { alpha } => Self {
                mode: ScheduleMode::Constant {
                    alpha: alpha * factor,
                },
                ..*self
            },
        }
    }

    pub fn is_theorem_form(&self) -> bool {
        self.mode == ScheduleMode::TheoremForm
    }
}

/// Equality constants for the FGD(l) MSPE guarantee:
/// `c1 = 2 / lambda_min_nonzero`,
/// `c2 = 4 b / lambda_min_nonzero * (2 lambda_max + tr / l)`.
pub fn theorem2_constants(sigma: &SecondMomentSummary, b: f64, ell: usize) -> Result<(f64, f64)> {
    check_b(b)?;
    if ell == 0 {
        return Err(invalid("ell", "must be at least 1"));
    }
    if !(sigma.trace > 0.0) || !(sigma.lambda_min_nonzero > 0.0) {
        return Err(invalid("sigma", "degenerate second moment matrix (zero trace)"));
    }
    let lam = sigma.lambda_min_nonzero;
    let c1 = 2.0 / lam;
    let c2 = 4.0 * b / lam * (2.0 * sigma.lambda_max + sigma.trace / ell as f64);
    Ok((c1, c2))
}

/// Equality constants for the aFGD(l) MSE guarantee:
/// `c1 = sqrt(32 pi) / lambda_min`, `c2 = sqrt(pi/2) b max(1, 4 d kappa / l)`.
pub fn theorem4_constants(sigma: &SecondMomentSummary, b: f64, ell: usize) -> Result<(f64, f64)> {
    check_b(b)?;
    if ell == 0 {
        return Err(invalid("ell", "must be at least 1"));
    }
    let kappa = full_rank_kappa(sigma)?;
    let d = sigma.dim() as f64;
    let c1 = libm::sqrt(32.0 * PI) / sigma.lambda_min;
    let c2 = AFGD_RATE_FACTOR * b * f64::max(1.0, 4.0 * d * kappa / ell as f64);
    Ok((c1, c2))
}

pub(crate) fn full_rank_kappa(sigma: &SecondMomentSummary) -> Result<f64> {
    match sigma.condition_number {
        Some(k) if sigma.is_full_rank() => Ok(k),
        _ => Err(Error::RankDeficient {
            rank: sigma.rank,
            dim: sigma.dim(),
        }),
    }
}

fn check_b(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(invalid("b", "norm bound must be positive and finite"))
    }
}

fn at_least(value: f64, bound: f64) -> bool {
    value >= bound * (1.0 - ADMISSIBILITY_RTOL)
}

/// Checks the hypotheses of the FGD(l) MSPE bound for `schedule`.
///
/// The error message names the violated inequality.
pub fn check_theorem2_admissible(
    schedule: &Schedule,
    sigma: &SecondMomentSummary,
    b: f64,
) -> Result<()> {
    check_b(b)?;
    if !schedule.is_theorem_form() {
        return Err(Error::Inadmissible(
            "the learning rate must be of the form alpha_i = c1/(l(c1 c2 + i))".into(),
        ));
    }
    let lam = sigma.lambda_min_nonzero;
    let ell = schedule.ell as f64;
    let c1_min = 2.0 / lam;
    if !at_least(schedule.c1, c1_min) {
        return Err(Error::Inadmissible(format!(
            "c1 >= 2/lambda_min_nonzero(Sigma) violated: c1 = {} < {}",
            schedule.c1, c1_min
        )));
    }
    let c2_min = 3.0 * b / lam * (2.0 * sigma.lambda_max + sigma.trace / ell);
    if !at_least(schedule.c2, c2_min) {
        return Err(Error::Inadmissible(format!(
            "c2 >= 3b/lambda_min_nonzero(Sigma) (2 lambda_max(Sigma) + tr(Sigma)/l) violated: c2 = {} < {}",
            schedule.c2, c2_min
        )));
    }
    // implied by the two inequalities above; kept as a guard on the arithmetic
    let alpha1 = schedule.learning_rate(1);
    if alpha1 * ell * b > 0.25 {
        return Err(Error::Inadmissible(format!(
            "alpha_1 <= 1/(4 l b) violated: alpha_1 l b = {}",
            alpha1 * ell * b
        )));
    }
    Ok(())
}

/// Checks the hypotheses of the aFGD(l) MSE bound for `schedule`.
pub fn check_theorem4_admissible(
    schedule: &Schedule,
    sigma: &SecondMomentSummary,
    b: f64,
) -> Result<()> {
    check_b(b)?;
    if !schedule.is_theorem_form() {
        return Err(Error::Inadmissible(
            "the learning rate must be of the form beta_i = c1/(l(c1 c2 + i))".into(),
        ));
    }
    let kappa = full_rank_kappa(sigma)?;
    let d = sigma.dim() as f64;
    let c1_min = libm::sqrt(32.0 * PI) / sigma.lambda_min;
    if !at_least(schedule.c1, c1_min) {
        return Err(Error::Inadmissible(format!(
            "c1 >= sqrt(32 pi)/lambda_min(Sigma) violated: c1 = {} < {}",
            schedule.c1, c1_min
        )));
    }
    let c2_min = AFGD_RATE_FACTOR * b * f64::max(1.0, 4.0 * d * kappa / schedule.ell as f64);
    if !at_least(schedule.c2, c2_min) {
        return Err(Error::Inadmissible(format!(
            "c2 >= sqrt(pi/2) b (1 v 4 d kappa(Sigma)/l) violated: c2 = {} < {}",
            schedule.c2, c2_min
        )));
    }
    Ok(())
}

/// `sign(u) = 1(u > 0) - 1(u < 0)`, zero at zero.
pub fn sign(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fills `out` with iid standard normal draws.
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for o in out.iter_mut() {
        *o = StandardNormal.sample(rng);
    }
}

/// Iterate `theta_{k,r}` of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub theta: Vec<f64>,
    /// Completed outer steps `k`.
    pub outer_step: usize,
    /// Inner updates applied within the current outer step.
    pub inner_step: usize,
}

impl TrajectoryState {
    pub fn new(theta0: Vec<f64>) -> Self {
        Self {
            theta: theta0,
            outer_step: 0,
            inner_step: 0,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    fn check_inputs(&self, x: &[f64], rate: f64) -> Result<()> {
        check_len("x", self.dim(), x.len())?;
        if !(rate.is_finite() && rate > 0.0) {
            return Err(invalid("learning rate", "must be positive and finite"));
        }
        Ok(())
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.theta.iter().all(|t| t.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                outer_step: self.outer_step,
                inner_step: self.inner_step,
            })
        }
    }

    fn residual(&self, x: &[f64], y: f64) -> f64 {
        y - linalg::dot(x, &self.theta)
    }

    /// `theta += alpha (y - x^T theta) x`; completes one outer step.
    pub fn sgd_step(&mut self, x: &[f64], y: f64, alpha: f64) -> Result<()> {
        self.check_inputs(x, alpha)?;
        let coef = alpha * self.residual(x, y);
        linalg::axpy(coef, x, &mut self.theta);
        self.outer_step += 1;
        self.inner_step = 0;
        self.ensure_finite()
    }

    /// One forward-gradient update
    /// `theta += alpha (y - x^T theta) (x^T xi) xi`.
    pub fn fgd_step(&mut self, x: &[f64], y: f64, alpha: f64, xi: &[f64]) -> Result<()> {
        self.check_inputs(x, alpha)?;
        check_len("xi", self.dim(), xi.len())?;
        let coef = alpha * self.residual(x, y) * linalg::dot(x, xi);
        linalg::axpy(coef, xi, &mut self.theta);
        self.inner_step += 1;
        self.ensure_finite()
    }

    /// One adjusted forward-gradient update
    /// `theta += beta (y - x^T theta) ||x|| sign(x^T xi) xi`.
    pub fn afgd_step(&mut self, x: &[f64], y: f64, beta: f64, xi: &[f64]) -> Result<()> {
        self.check_inputs(x, beta)?;
        check_len("xi", self.dim(), xi.len())?;
        let coef = beta * self.residual(x, y) * linalg::norm(x) * sign(linalg::dot(x, xi));
        linalg::axpy(coef, xi, &mut self.theta);
        self.inner_step += 1;
        self.ensure_finite()
    }

    /// Processes one training sample: `ell` inner updates sharing `(x, y)`
    /// and `alpha_k = schedule.learning_rate(k)`, each with a fresh `xi`.
    pub fn run_outer_step<R: Rng + ?Sized>(
        &mut self,
        optimizer: OptimizerKind,
        schedule: &Schedule,
        x: &[f64],
        y: f64,
        noise_rng: &mut R,
    ) -> Result<()> {
        let mut xi = vec![0.0; self.dim()];
        self.run_outer_step_with(optimizer, schedule, x, y, noise_rng, &mut xi)
    }

    fn run_outer_step_with<R: Rng + ?Sized>(
        &mut self,
        optimizer: OptimizerKind,
        schedule: &Schedule,
        x: &[f64],
        y: f64,
        noise_rng: &mut R,
        xi: &mut [f64],
    ) -> Result<()> {
        if self.inner_step != 0 {
            return Err(Error::Precondition(format!(
                "outer step started with inner step {} != 0",
                self.inner_step
            )));
        }
        optimizer.validate()?;
        let alpha = schedule.learning_rate(self.outer_step + 1);
        match optimizer {
            OptimizerKind::Sgd => return self.sgd_step(x, y, alpha),
            OptimizerKind::Fgd { ell } => {
                for _ in 0..ell {
                    fill_standard_normal(noise_rng, xi);
                    self.fgd_step(x, y, alpha, xi)?;
                }
            }
            OptimizerKind::Afgd { ell } => {
                for _ in 0..ell {
                    fill_standard_normal(noise_rng, xi);
                    self.afgd_step(x, y, alpha, xi)?;
                }
            }
        }
        self.outer_step += 1;
        self.inner_step = 0;
        Ok(())
    }
}

/// Parameter vector recorded after `step` outer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub theta: Vec<f64>,
}

fn check_checkpoints(checkpoints: &[usize], last: usize) -> Result<()> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("checkpoints", "must be strictly increasing"));
    }
    if checkpoints.last().is_some_and(|&c| c > last) {
        return Err(invalid(
            "checkpoints",
            format!("checkpoint beyond the last step {last}"),
        ));
    }
    Ok(())
}

/// Streaming run: one fresh `(x, y)` from `data_rng` per outer step.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory<D: Rng + ?Sized, N: Rng + ?Sized>(
    model: &ModelSpec,
    optimizer: OptimizerKind,
    schedule: &Schedule,
    n_steps: usize,
    checkpoints: &[usize],
    theta0: Vec<f64>,
    data_rng: &mut D,
    noise_rng: &mut N,
) -> Result<Vec<Checkpoint>> {
    check_len("theta0", model.dim(), theta0.len())?;
    check_checkpoints(checkpoints, n_steps)?;
    let d = model.dim();
    let mut state = TrajectoryState::new(theta0);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut pending = checkpoints.iter().peekable();
    if pending.next_if_eq(&&0).is_some() {
        out.push(Checkpoint {
            step: 0,
            theta: state.theta.clone(),
        });
    }
    let mut x = vec![0.0; d];
    let mut xi = vec![0.0; d];
    for k in 1..=n_steps {
        let y = model.sample_pair_into(data_rng, &mut x);
        state.run_outer_step_with(optimizer, schedule, &x, y, noise_rng, &mut xi)?;
        if pending.next_if_eq(&&k).is_some() {
            out.push(Checkpoint {
                step: k,
                theta: state.theta.clone(),
            });
        }
    }
    Ok(out)
}

/// A fixed sample of `n` pairs for multi-epoch runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    /// Draws `n` pairs in the same order a streaming run would.
    pub fn draw<R: Rng + ?Sized>(model: &ModelSpec, n: usize, data_rng: &mut R) -> Self {
        let dim = model.dim();
        let mut xs = vec![0.0; n * dim];
        let mut ys = Vec::with_capacity(n);
        for row in xs.chunks_exact_mut(dim.max(1)) {
            ys.push(model.sample_pair_into(data_rng, row));
        }
        Self { dim, xs, ys }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn pair(&self, k: usize) -> (&[f64], f64) {
        (&self.xs[k * self.dim..(k + 1) * self.dim], self.ys[k])
    }

    /// `n_epochs` passes in order; the learning-rate index keeps counting
    /// across epochs (`i = (e - 1) n + k`). Returns the iterate after each
    /// pass, starting with pass 0 (`theta0`).
    pub fn run_epochs<N: Rng + ?Sized>(
        &self,
        optimizer: OptimizerKind,
        schedule: &Schedule,
        n_epochs: usize,
        theta0: Vec<f64>,
        noise_rng: &mut N,
    ) -> Result<Vec<Checkpoint>> {
        if self.is_empty() {
            return Err(invalid("n", "dataset must contain at least one pair"));
        }
        if n_epochs == 0 {
            return Err(invalid("n_epochs", "must be at least 1"));
        }
        check_len("theta0", self.dim, theta0.len())?;
        let mut state = TrajectoryState::new(theta0);
        let mut xi = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(n_epochs + 1);
        out.push(Checkpoint {
            step: 0,
            theta: state.theta.clone(),
        });
        for pass in 1..=n_epochs {
            for k in 0..self.len() {
                let (x, y) = self.pair(k);
                state.run_outer_step_with(optimizer, schedule, x, y, noise_rng, &mut xi)?;
            }
            out.push(Checkpoint {
                step: pass,
                theta: state.theta.clone(),
            });
        }
        Ok(out)
    }
}

/// Draws a dataset of `n` pairs from `data_rng`, then runs `n_epochs` passes.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory_epochs<D: Rng + ?Sized, N: Rng + ?Sized>(
    model: &ModelSpec,
    optimizer: OptimizerKind,
    schedule: &Schedule,
    n: usize,
    n_epochs: usize,
    theta0: Vec<f64>,
    data_rng: &mut D,
    noise_rng: &mut N,
) -> Result<Vec<Checkpoint>> {
    if n == 0 {
        return Err(invalid("n", "dataset size must be at least 1"));
    }
    let data = Dataset::draw(model, n, data_rng);
    data.run_epochs(optimizer, schedule, n_epochs, theta0, noise_rng)
}

/// `E[(I - alpha x x^T)^l]` sample term: the rank-one power
/// `I + ((1 - alpha ||x||^2)^l - 1) x x^T / ||x||^2`.
pub fn rank_one_power(x: &[f64], alpha: f64, ell: usize) -> Matrix {
    let d = x.len();
    let mut m = Matrix::identity(d);
    let nsq = linalg::norm_sq(x);
    if nsq > 0.0 {
        let coef = (libm::pow(1.0 - alpha * nsq, ell as f64) - 1.0) / nsq;
        m.add_scaled(coef, &Matrix::outer(x, x));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::CovariateSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_summary(d: usize) -> SecondMomentSummary {
        CovariateSpec::full_cube(d).unwrap().second_moment().unwrap()
    }

    #[test]
    fn learning_rate_substitution() {
        let s = Schedule::theorem_form(2.0, 3.0, 1).unwrap();
        assert_abs_diff_eq!(s.learning_rate(4), 0.2, epsilon = 1e-15);
        let s2 = Schedule::theorem_form(2.0, 3.0, 2).unwrap();
        assert_abs_diff_eq!(s2.learning_rate(4), 0.1, epsilon = 1e-15);
        assert!(s.learning_rate(5) < s.learning_rate(4));
        assert_eq!(Schedule::constant(0.3, 4).unwrap().learning_rate(99), 0.3);
    }

    #[test]
    fn scaled_schedule_keeps_form() {
        let s = Schedule::theorem_form(2.0, 3.0, 2).unwrap();
        let t = s.scaled(AFGD_RATE_FACTOR);
        for i in [1, 10, 1000] {
            assert_relative_eq!(
                t.learning_rate(i),
                AFGD_RATE_FACTOR * s.learning_rate(i),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(AFGD_RATE_FACTOR, libm::sqrt(PI / 2.0), max_relative = 1e-15);
    }

    #[test]
    fn theorem2_constants_identity_cases() {
        let (c1, c2) = theorem2_constants(&identity_summary(30), 90.0, 30).unwrap();
        assert_abs_diff_eq!(c1, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c2, 1080.0, epsilon = 1e-9);
        let (c1, c2) = theorem2_constants(&identity_summary(1), 3.0, 1).unwrap();
        assert_abs_diff_eq!(c1, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c2, 36.0, epsilon = 1e-12);
    }

    #[test]
    fn theorem2_constants_are_admissible() {
        for (d, ell) in [(1, 1), (4, 2), (10, 10), (7, 30)] {
            let sigma = identity_summary(d);
            let b = 3.0 * d as f64;
            let (c1, c2) = theorem2_constants(&sigma, b, ell).unwrap();
            let lower = 3.0 * b / sigma.lambda_min_nonzero
                * (2.0 * sigma.lambda_max + sigma.trace / ell as f64);
            assert!(c2 >= lower);
            let sched = Schedule::theorem_form(c1, c2, ell).unwrap();
            check_theorem2_admissible(&sched, &sigma, b).unwrap();
            assert!(sched.learning_rate(1) * ell as f64 * b <= 0.25);
        }
    }

    #[test]
    fn theorem2_admissibility_names_inequality() {
        let sigma = identity_summary(2);
        let err = check_theorem2_admissible(&Schedule::constant(0.1, 1).unwrap(), &sigma, 6.0)
            .unwrap_err();
        assert!(format!("{err}").contains("of the form"));
        let err = check_theorem2_admissible(
            &Schedule::theorem_form(1.0, 1000.0, 1).unwrap(),
            &sigma,
            6.0,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("c1 >="));
        let err = check_theorem2_admissible(
            &Schedule::theorem_form(2.0, 1.0, 1).unwrap(),
            &sigma,
            6.0,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("c2 >="));
    }

    #[test]
    fn theorem4_constants_cases() {
        let sigma = identity_summary(4);
        let (c1, c2) = theorem4_constants(&sigma, 12.0, 16).unwrap();
        assert_abs_diff_eq!(c1, 10.026513098524001, epsilon = 1e-9);
        assert_abs_diff_eq!(c2, 15.039769647786004, epsilon = 1e-9);
        let (_, c2) = theorem4_constants(&sigma, 12.0, 1).unwrap();
        assert_abs_diff_eq!(c2, 240.63631436457606, epsilon = 1e-8);
        let sched = Schedule::theorem_form(c1, c2, 1).unwrap();
        check_theorem4_admissible(&sched, &sigma, 12.0).unwrap();

        let mut u = Matrix::zeros(3, 1);
        u[(0, 0)] = 1.0;
        let low = CovariateSpec::low_rank(u).unwrap().second_moment().unwrap();
        assert_eq!(
            theorem4_constants(&low, 3.0, 1),
            Err(Error::RankDeficient { rank: 1, dim: 3 })
        );
    }

    #[test]
    fn sgd_step_cases() {
        let mut s = TrajectoryState::zeros(2);
        s.sgd_step(&[1.0, 0.0], 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(s.theta[0], 0.1, epsilon = 1e-15);
        assert_eq!(s.theta[1], 0.0);
        assert_eq!(s.outer_step, 1);

        let theta_star = [0.3, -1.2];
        let x = [0.7, 0.4];
        let mut s = TrajectoryState::new(theta_star.to_vec());
        s.sgd_step(&x, linalg::dot(&x, &theta_star), 0.5).unwrap();
        assert_eq!(s.theta, theta_star.to_vec());

        let mut s = TrajectoryState::new(vec![1.0, 2.0]);
        s.sgd_step(&[0.0, 0.0], 5.0, 0.5).unwrap();
        assert_eq!(s.theta, vec![1.0, 2.0]);
    }

    #[test]
    fn fgd_step_cases() {
        let mut s = TrajectoryState::zeros(2);
        s.fgd_step(&[1.0, 0.0], 1.0, 0.1, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s.theta[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.theta[1], 0.1, epsilon = 1e-15);

        let mut s = TrajectoryState::new(vec![0.5, 0.5]);
        s.fgd_step(&[1.0, 1.0], 3.0, 0.1, &[1.0, -1.0]).unwrap();
        assert_eq!(s.theta, vec![0.5, 0.5]);

        let theta_star = [0.3, -1.2];
        let x = [0.7, 0.4];
        let mut s = TrajectoryState::new(theta_star.to_vec());
        s.fgd_step(&x, linalg::dot(&x, &theta_star), 0.5, &[2.0, -3.0])
            .unwrap();
        assert_eq!(s.theta, theta_star.to_vec());
    }

    #[test]
    fn afgd_step_cases() {
        let mut s = TrajectoryState::zeros(2);
        s.afgd_step(&[1.0, 0.0], 1.0, 0.1, &[-1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(s.theta[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.theta[1], -0.2, epsilon = 1e-15);

        let mut s = TrajectoryState::new(vec![0.5, 0.5]);
        s.afgd_step(&[1.0, 1.0], 3.0, 0.1, &[1.0, -1.0]).unwrap();
        assert_eq!(s.theta, vec![0.5, 0.5]);

        let theta_star = [0.3, -1.2];
        let x = [0.7, 0.4];
        let mut s = TrajectoryState::new(theta_star.to_vec());
        s.afgd_step(&x, linalg::dot(&x, &theta_star), 0.5, &[2.0, -3.0])
            .unwrap();
        assert_eq!(s.theta, theta_star.to_vec());
    }

    #[test]
    fn divergence_is_an_error() {
        let mut s = TrajectoryState::new(vec![1e300]);
        let err = s.sgd_step(&[1e10], 0.0, 1e10).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn fgd1_matches_plain_step() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = rng_a.clone();
        let sched = Schedule::theorem_form(2.0, 3.0, 1).unwrap();
        let x = [0.4, -1.1, 0.9];
        let mut a = TrajectoryState::new(vec![0.1, 0.2, 0.3]);
        a.run_outer_step(OptimizerKind::Fgd { ell: 1 }, &sched, &x, 0.7, &mut rng_a)
            .unwrap();
        let mut xi = [0.0; 3];
        fill_standard_normal(&mut rng_b, &mut xi);
        let mut b = TrajectoryState::new(vec![0.1, 0.2, 0.3]);
        b.fgd_step(&x, 0.7, sched.learning_rate(1), &xi).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!((a.outer_step, a.inner_step), (1, 0));
    }

    #[test]
    fn fgd3_noiseless_fixed_point() {
        let theta_star = vec![1.0, -2.0, 0.5];
        let x = [0.3, 0.2, -0.9];
        let y = linalg::dot(&x, &theta_star);
        let mut s = TrajectoryState::new(theta_star.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sched = Schedule::constant(0.2, 3).unwrap();
        s.run_outer_step(OptimizerKind::Fgd { ell: 3 }, &sched, &x, y, &mut rng)
            .unwrap();
        assert_eq!(s.theta, theta_star);
    }

    #[test]
    fn two_inner_steps_by_hand() {
        // xi = e1 both times: 0 -> 0.1 -> 0.1 + 0.1 * 0.9 = 0.19
        let mut s = TrajectoryState::zeros(2);
        let x = [1.0, 0.0];
        s.fgd_step(&x, 1.0, 0.1, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.theta[0], 0.1, epsilon = 1e-15);
        s.fgd_step(&x, 1.0, 0.1, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.theta[0], 0.19, epsilon = 1e-15);
        assert_eq!(s.theta[1], 0.0);
    }

    #[test]
    fn outer_step_requires_fresh_inner_counter() {
        let mut s = TrajectoryState::zeros(1);
        s.fgd_step(&[1.0], 1.0, 0.1, &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sched = Schedule::constant(0.1, 1).unwrap();
        assert!(matches!(
            s.run_outer_step(OptimizerKind::Fgd { ell: 1 }, &sched, &[1.0], 1.0, &mut rng),
            Err(Error::Precondition(_))
        ));
    }

    fn model(d: usize, seed: u64) -> ModelSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = crate::linmodel::ThetaPolicy::Uniform.draw(d, &mut rng);
        ModelSpec::new(CovariateSpec::full_cube(d).unwrap(), theta).unwrap()
    }

    #[test]
    fn empty_trajectory_returns_start() {
        let m = model(3, 1);
        let sched = Schedule::constant(0.01, 1).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let out = run_trajectory(&m, OptimizerKind::Sgd, &sched, 0, &[0], vec![0.5; 3], &mut a, &mut b)
            .unwrap();
        assert_eq!(out, vec![Checkpoint { step: 0, theta: vec![0.5; 3] }]);
        assert!(run_trajectory(&m, OptimizerKind::Sgd, &sched, 2, &[3], vec![0.0; 3], &mut a, &mut b)
            .is_err());
        assert!(run_trajectory(&m, OptimizerKind::Sgd, &sched, 5, &[3, 2], vec![0.0; 3], &mut a, &mut b)
            .is_err());
    }

    #[test]
    fn trajectories_are_deterministic() {
        let m = model(4, 3);
        let sched = Schedule::theorem_form(2.0, 10.0, 2).unwrap();
        let run = || {
            let mut a = ChaCha8Rng::seed_from_u64(10);
            let mut b = ChaCha8Rng::seed_from_u64(20);
            run_trajectory(
                &m,
                OptimizerKind::Fgd { ell: 2 },
                &sched,
                500,
                &[0, 10, 100, 500],
                vec![0.0; 4],
                &mut a,
                &mut b,
            )
            .unwrap()
        };
        let first = run();
        assert_eq!(first, run());
        assert_eq!(first.len(), 4);
        assert_eq!(first[3].step, 500);
    }

    #[test]
    fn sgd_error_decays_in_one_dimension() {
        let sigma = identity_summary(1);
        let (c1, c2) = theorem2_constants(&sigma, 3.0, 1).unwrap();
        let sched = Schedule::theorem_form(c1, c2, 1).unwrap();
        let mut decreased = 0;
        for seed in 0..10u64 {
            let m = model(1, 100 + seed);
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed + 1000);
            let out = run_trajectory(
                &m,
                OptimizerKind::Sgd,
                &sched,
                10_000,
                &[100, 10_000],
                vec![0.0],
                &mut a,
                &mut b,
            )
            .unwrap();
            let err = |t: &[f64]| (t[0] - m.theta_star[0]).powi(2);
            if err(&out[1].theta) < err(&out[0].theta) {
                decreased += 1;
            }
        }
        assert!(decreased >= 9, "decreased in {decreased}/10 runs");
    }

    #[test]
    fn single_epoch_equals_streaming_run() {
        let m = model(3, 5);
        let sched = Schedule::theorem_form(2.0, 20.0, 3).unwrap();
        let opt = OptimizerKind::Fgd { ell: 3 };
        let stream = {
            let mut a = ChaCha8Rng::seed_from_u64(8);
            let mut b = ChaCha8Rng::seed_from_u64(9);
            run_trajectory(&m, opt, &sched, 200, &[200], vec![0.0; 3], &mut a, &mut b).unwrap()
        };
        let epochs = {
            let mut a = ChaCha8Rng::seed_from_u64(8);
            let mut b = ChaCha8Rng::seed_from_u64(9);
            run_trajectory_epochs(&m, opt, &sched, 200, 1, vec![0.0; 3], &mut a, &mut b).unwrap()
        };
        assert_eq!(stream[0].theta, epochs[1].theta);
    }

    #[test]
    fn epochs_on_single_point_contract_along_x() {
        // one sample, noiseless: the residual shrinks geometrically and theta
        // approaches the minimum-norm interpolant y x / ||x||^2
        let m = ModelSpec::new(CovariateSpec::full_cube(2).unwrap(), vec![1.0, -1.0])
            .unwrap()
            .with_noise_std(0.0)
            .unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let data = Dataset::draw(&m, 1, &mut a);
        let (x, y) = data.pair(0);
        let (x, y) = (x.to_vec(), y);
        let sched = Schedule::constant(0.05, 1).unwrap();
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let out = data
            .run_epochs(OptimizerKind::Sgd, &sched, 2000, vec![0.0; 2], &mut b)
            .unwrap();
        let last = &out.last().unwrap().theta;
        let nsq = linalg::norm_sq(&x);
        for i in 0..2 {
            assert_abs_diff_eq!(last[i], y * x[i] / nsq, epsilon = 1e-9);
        }
    }

    #[test]
    fn rank_one_power_matches_repeated_product() {
        let x = [0.4, -1.3, 0.8];
        let alpha = 0.17;
        let step = {
            let mut m = Matrix::identity(3);
            m.add_scaled(-alpha, &Matrix::outer(&x, &x));
            m
        };
        let mut brute = Matrix::identity(3);
        for ell in 0..6 {
            assert!(rank_one_power(&x, alpha, ell).max_abs_diff(&brute) < 1e-14);
            brute = brute.matmul(&step).unwrap();
        }
        assert_eq!(rank_one_power(&[0.0; 3], alpha, 4), Matrix::identity(3));
    }
}
