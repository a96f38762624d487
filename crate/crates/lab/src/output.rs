//! CSV and metadata files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::harness::RunRecord;

pub const RUN_COLUMNS: [&str; 8] = [
    "study",
    "axis_value",
    "optimizer",
    "ell",
    "repetition",
    "step",
    "metric_name",
    "value",
];

pub const BOUND_COLUMNS: [&str; 4] = ["step", "measured_mean", "measured_std", "bound"];

/// 17 significant digits, lossless on re-parse.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Long-format rows: each repetition, then `mean` and `std` rows, for the raw
/// metric and (dim and rank sweeps) the metric divided by `d` or `s`.
pub fn write_run_csv<W: Write>(record: &RunRecord, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    let study = record.plan.study.name();
    for s in &record.series {
        let base = s.metric.name();
        let per = match record.plan.study {
            crate::harness::Study::DimSweep => Some(format!("{base}_per_d")),
            crate::harness::Study::RankSweep => Some(format!("{base}_per_s")),
            _ => None,
        };
        let names: Vec<(String, f64)> = std::iter::once((base.to_string(), 1.0))
            .chain(per.map(|p| (p, s.normalizer)))
            .collect();
        let axis = s.axis_value.to_string();
        let label = s.arm.label();
        let ell = s.arm.optimizer.ell().to_string();
        for (name, div) in &names {
            for (r, rep) in s.per_rep.iter().enumerate() {
                let r = r.to_string();
                for &(step, v) in rep {
                    w.write_record([
                        study,
                        &axis,
                        &label,
                        &ell,
                        &r,
                        &step.to_string(),
                        name,
                        &fmt_f64(v / div),
                    ])?;
                }
            }
            for p in &s.summary.points {
                let step = p.step.to_string();
                w.write_record([study, &axis, &label, &ell, "mean", &step, name, &fmt_f64(p.mean / div)])?;
                w.write_record([study, &axis, &label, &ell, "std", &step, name, &fmt_f64(p.std / div)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Choices that shape every run, echoed into metadata.
pub fn fixed_policies() -> serde_json::Value {
    json!({
        "theta0": "zero vector",
        "std_denominator": "n - 1 (sample standard deviation)",
        "reported_iterate": "final iterate at each checkpoint (no tail averaging)",
        "epoch_learning_rate_index": "continues across epochs: i = (e - 1) n + k",
        "learning_rate_within_sample": "alpha_k fixed for all l updates on sample k",
        "sgd_constants": "FGD constants with the tr(Sigma)/l term dropped (l -> infinity)",
        "embedding_redraw": "U redrawn per repetition from the repetition's model stream",
        "theta_star_draw": "per (axis value, repetition) from the model stream; shared by all optimizers",
        "streams": "model, data and per-l direction streams seeded by splitmix64 over (master seed, axis index, slot, repetition); ChaCha8",
        "epoch_arms_step": "outer steps processed = epochs * n",
        "metric": "mse = ||theta - theta_star||^2; mspe = (theta - theta_star)^T Sigma (theta - theta_star) with analytic Sigma",
    })
}

pub fn run_meta(record: &RunRecord, resolved_config: &serde_json::Value) -> serde_json::Value {
    json!({
        "study": record.plan.study.name(),
        "version": record.version,
        "wall_time_secs": record.wall_time_secs,
        "threads": record.threads,
        "plan": record.plan,
        "checkpoint_grid": record.plan.grid(),
        "resolved_config": resolved_config,
        "policies": fixed_policies(),
        "columns": RUN_COLUMNS,
    })
}

pub fn csv_path(dir: &Path, study: &str) -> PathBuf {
    dir.join(format!("{study}.csv"))
}

pub fn meta_path(dir: &Path, study: &str) -> PathBuf {
    dir.join(format!("{study}.meta"))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")
}
