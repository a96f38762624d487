//! Forward gradient descent with repeated sampling for linear regression.
//!
//! The crate is `no_std` (with `alloc`). It provides the data model, the
//! SGD / FGD(l) / aFGD(l) update rules with their learning-rate schedule,
//! closed-form bias and risk bounds, Monte Carlo oracles for the moment
//! identities behind them, and error metrics.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod linmodel;
pub mod metrics;
pub mod optim;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use linmodel::{
    CovariateKind, CovariateSpec, EmbeddingPolicy, ModelSpec, SecondMomentSummary, ThetaPolicy,
};
pub use metrics::{Metric, MetricSeries, SeriesPoint};
pub use optim::{Checkpoint, Dataset, OptimizerKind, Schedule, ScheduleMode, TrajectoryState};
pub use theory::{BiasEstimate, BiasPlan, BoundKind, BoundReport, OracleOutcome};
