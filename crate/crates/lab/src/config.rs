//! TOML configuration. Unknown keys are rejected; command-line flags override
//! file values, which override built-in defaults.
//!
//! ```toml
//! study = "step_trace"        # dim_sweep | reps_sweep | rank_sweep | step_trace | all
//! seed = 7
//! reps = 10
//! out = "out"
//!
//! [schedule]
//! policy = "scaled"           # theorem2 | scaled | fixed | constant
//! c2_factor = 0.125
//! afgd = "scaled_fgd"         # scaled_fgd | theorem4
//!
//! [step_trace]
//! d = 10
//! n = 100000
//! optimizers = ["sgd", "fgd(1)", "fgd(d)", "afgd(1)", "afgd(d)"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bound::{BoundPlan, BoundSchedule, BoundTarget};
use crate::harness::{
    AfgdPolicy, ArmSpec, CheckpointSpec, EmbeddingPolicySer, ExperimentPlan, SchedulePolicy, Study,
    ThetaPolicySer,
};
use crate::verify::VerifyOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub study: Option<String>,
    pub seed: Option<u64>,
    pub reps: Option<i64>,
    pub out: Option<PathBuf>,
    pub threads: Option<i64>,
    pub paper_scale: Option<bool>,
    pub schedule: Option<ScheduleSection>,
    pub checkpoints: Option<CheckpointSection>,
    pub dim_sweep: Option<DimSection>,
    pub reps_sweep: Option<RepsSection>,
    pub rank_sweep: Option<RankSection>,
    pub step_trace: Option<StepSection>,
    pub verify: Option<VerifySection>,
    pub bound: Option<BoundSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub policy: Option<String>,
    pub c2_factor: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub alpha: Option<f64>,
    pub afgd: Option<AfgdPolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSection {
    pub first: Option<i64>,
    pub count: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimSection {
    pub dims: Option<Vec<i64>>,
    pub n: Option<i64>,
    pub optimizers: Option<Vec<ArmSpec>>,
    pub theta: Option<ThetaPolicySer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepsSection {
    pub d: Option<i64>,
    pub ells: Option<Vec<i64>>,
    pub n: Option<i64>,
    pub theta: Option<ThetaPolicySer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    pub d: Option<i64>,
    pub ranks: Option<Vec<i64>>,
    pub n: Option<i64>,
    pub optimizers: Option<Vec<ArmSpec>>,
    pub embedding: Option<EmbeddingPolicySer>,
    pub theta: Option<ThetaPolicySer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSection {
    pub d: Option<i64>,
    pub n: Option<i64>,
    pub optimizers: Option<Vec<ArmSpec>>,
    pub theta: Option<ThetaPolicySer>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub mc_samples: Option<i64>,
    pub instances: Option<i64>,
    pub bias_trajectories: Option<i64>,
    pub bias_mc_samples: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub target: Option<BoundTarget>,
    pub d: Option<i64>,
    pub ell: Option<i64>,
    pub n: Option<i64>,
    pub reps: Option<i64>,
    pub policy: Option<String>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub alpha: Option<f64>,
    pub checkpoints: Option<i64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("{0}")]
pub struct ConfigError(pub String);

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

fn positive(field: &str, v: i64) -> Result<usize> {
    if v >= 1 {
        Ok(v as usize)
    } else {
        err(format!("{field} must be a positive integer, got {v}"))
    }
}

fn positive_list(field: &str, vs: &[i64]) -> Result<Vec<usize>> {
    if vs.is_empty() {
        return err(format!("{field} must be a non-empty list"));
    }
    let out = vs
        .iter()
        .map(|&v| positive(field, v))
        .collect::<Result<Vec<_>>>()?;
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return err(format!("{field} must be strictly increasing"));
    }
    Ok(out)
}

fn opt_positive(field: &str, v: Option<i64>, default: usize) -> Result<usize> {
    v.map_or(Ok(default), |v| positive(field, v))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn studies(&self) -> Result<Vec<Study>> {
        match self.study.as_deref() {
            None | Some("all") => Ok(Study::ALL.to_vec()),
            Some(s) => s.parse().map(|st| vec![st]).map_err(|e| {
                ConfigError(format!(
                    "study: {e} (expected dim_sweep, reps_sweep, rank_sweep, step_trace or all)"
                ))
            }),
        }
    }

    pub fn repetitions(&self) -> Result<Option<usize>> {
        self.reps.map(|r| positive("reps", r)).transpose()
    }

    pub fn thread_count(&self) -> Result<usize> {
        match self.threads {
            None | Some(0) => Ok(0),
            Some(t) => positive("threads", t),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn schedule_policy(&self) -> Result<(SchedulePolicy, AfgdPolicy)> {
        let s = self.schedule.clone().unwrap_or_default();
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| ConfigError(format!("schedule.{name} is required for this policy")))
        };
        let policy = match s.policy.as_deref().unwrap_or("scaled") {
            "theorem2" => SchedulePolicy::Theorem2,
            "scaled" => SchedulePolicy::Scaled {
                c2_factor: s.c2_factor.unwrap_or(crate::harness::DEFAULT_C2_FACTOR),
            },
            "fixed" => SchedulePolicy::Fixed {
                c1: need("c1", s.c1)?,
                c2: need("c2", s.c2)?,
            },
            "constant" => SchedulePolicy::Constant {
                alpha: need("alpha", s.alpha)?,
            },
            other => {
                return err(format!(
                    "schedule.policy: unknown policy `{other}` (expected theorem2, scaled, fixed or constant)"
                ))
            }
        };
        Ok((policy, s.afgd.unwrap_or_default()))
    }

    /// Fully resolved plan for `study`.
    pub fn plan(&self, study: Study) -> Result<ExperimentPlan> {
        let mut p = if self.paper_scale.unwrap_or(false) {
            ExperimentPlan::full_scale(study)
        } else {
            ExperimentPlan::desk(study)
        };
        p.master_seed = self.seed.unwrap_or(0);
        if let Some(r) = self.repetitions()? {
            p.repetitions = r;
        }
        let (schedule, afgd) = self.schedule_policy()?;
        p.schedule = schedule;
        p.afgd = afgd;
        let cp = self.checkpoints.clone().unwrap_or_default();
        let defaults = CheckpointSpec::default();
        p.checkpoints = CheckpointSpec {
            first: opt_positive("checkpoints.first", cp.first, defaults.first)?,
            count: opt_positive("checkpoints.count", cp.count, defaults.count)?,
        };
        match study {
            Study::DimSweep => {
                let s = self.dim_sweep.clone().unwrap_or_default();
                if let Some(v) = &s.dims {
                    p.axis_values = positive_list("dim_sweep.dims", v)?;
                }
                p.n_samples = opt_positive("dim_sweep.n", s.n, p.n_samples)?;
                p.arms = s.optimizers.unwrap_or(p.arms);
                p.theta_policy = s.theta.unwrap_or(p.theta_policy);
            }
            Study::RepsSweep => {
                let s = self.reps_sweep.clone().unwrap_or_default();
                p.dim = opt_positive("reps_sweep.d", s.d, p.dim)?;
                if let Some(v) = &s.ells {
                    p.axis_values = positive_list("reps_sweep.ells", v)?;
                }
                p.n_samples = opt_positive("reps_sweep.n", s.n, p.n_samples)?;
                p.theta_policy = s.theta.unwrap_or(p.theta_policy);
            }
            Study::RankSweep => {
                let s = self.rank_sweep.clone().unwrap_or_default();
                p.dim = opt_positive("rank_sweep.d", s.d, p.dim)?;
                if let Some(v) = &s.ranks {
                    p.axis_values = positive_list("rank_sweep.ranks", v)?;
                }
                p.n_samples = opt_positive("rank_sweep.n", s.n, p.n_samples)?;
                p.arms = s.optimizers.unwrap_or(p.arms);
                p.embedding = s.embedding.unwrap_or(p.embedding);
                p.theta_policy = s.theta.unwrap_or(p.theta_policy);
            }
            Study::StepTrace => {
                let s = self.step_trace.clone().unwrap_or_default();
                let d = opt_positive("step_trace.d", s.d, p.axis_values[0])?;
                p.axis_values = vec![d];
                p.dim = d;
                p.n_samples = opt_positive("step_trace.n", s.n, p.n_samples)?;
                p.arms = s.optimizers.unwrap_or(p.arms);
                p.theta_policy = s.theta.unwrap_or(p.theta_policy);
            }
        }
        p.validate().map_err(ConfigError)?;
        Ok(p)
    }

    pub fn verify_options(&self) -> Result<VerifyOptions> {
        let s = self.verify.clone().unwrap_or_default();
        let d = VerifyOptions::default();
        Ok(VerifyOptions {
            mc_samples: opt_positive("verify.mc_samples", s.mc_samples, d.mc_samples)?,
            instances: opt_positive("verify.instances", s.instances, d.instances)?,
            bias_trajectories: opt_positive(
                "verify.bias_trajectories",
                s.bias_trajectories,
                d.bias_trajectories,
            )?,
            bias_mc_samples: opt_positive("verify.bias_mc_samples", s.bias_mc_samples, d.bias_mc_samples)?,
            seed: self.seed.unwrap_or(0),
            ..d
        })
    }

    pub fn bound_plan(&self) -> Result<BoundPlan> {
        let s = self.bound.clone().unwrap_or_default();
        let d = BoundPlan::default();
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| ConfigError(format!("bound.{name} is required for this policy")))
        };
        let schedule = match s.policy.as_deref().unwrap_or("equality") {
            "equality" => BoundSchedule::Equality,
            "fixed" => BoundSchedule::Fixed {
                c1: need("c1", s.c1)?,
                c2: need("c2", s.c2)?,
            },
            "constant" => BoundSchedule::Constant {
                alpha: need("alpha", s.alpha)?,
            },
            other => {
                return err(format!(
                    "bound.policy: unknown policy `{other}` (expected equality, fixed or constant)"
                ))
            }
        };
        Ok(BoundPlan {
            kind: s.target.unwrap_or(d.kind),
            dim: opt_positive("bound.d", s.d, d.dim)?,
            ell: opt_positive("bound.ell", s.ell, d.ell)?,
            n_samples: opt_positive("bound.n", s.n, d.n_samples)?,
            repetitions: match s.reps {
                Some(r) => positive("bound.reps", r)?,
                None => self.repetitions()?.unwrap_or(d.repetitions),
            },
            master_seed: self.seed.unwrap_or(0),
            schedule,
            checkpoints: opt_positive("bound.checkpoints", s.checkpoints, d.checkpoints)?,
            z: d.z,
        })
    }
}
