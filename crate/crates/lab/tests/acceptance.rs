//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Not part of the default `cargo test`; run with
//! `cargo test -p fgd-lab --test acceptance`.

use std::cell::OnceCell;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use fgd_core::linalg::{self, Matrix};
use fgd_core::metrics::{loglog_slope, mse, mspe};
use fgd_core::optim::{fill_standard_normal, run_trajectory, Schedule, TrajectoryState};
use fgd_core::{CovariateSpec, ModelSpec, OptimizerKind};
use fgd_lab::bound::{run_bound, BoundPlan};
use fgd_lab::harness::{run_plan, Arm, ExperimentPlan, RunRecord, Study};
use fgd_lab::verify::{bias_rows, run_verify, Identity, VerifyOptions};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn desk(study: Study) -> RunRecord {
    let mut plan = ExperimentPlan::desk(study);
    plan.master_seed = SEED;
    run_plan(&plan, 0).expect("desk plan runs")
}

fn single(rec: &RunRecord, axis: usize, opt: OptimizerKind) -> &fgd_lab::harness::SeriesRecord {
    rec.find(axis, Arm::single(opt))
        .unwrap_or_else(|| panic!("missing series {opt} at {axis}"))
}

/// Runs the `fgd` binary with captured output; returns its exit code.
fn fgd(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_fgd"))
        .args(args)
        .output()
        .map(|o| o.status.code().unwrap_or(-1))
        .unwrap_or(-1)
}

fn oracle_suite() -> Outcome {
    let opts = VerifyOptions {
        seed: SEED,
        ..VerifyOptions::default()
    };
    let rows = match run_verify(&opts) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let oracle: Vec<_> = rows.iter().filter(|r| r.identity != Identity::Bias).collect();
    let failed: Vec<String> = oracle
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}#{}", r.identity, r.instance))
        .collect();
    let worst = oracle
        .iter()
        .map(|r| r.deviation / r.tolerance * opts.z_oracle)
        .fold(0.0, f64::max);
    let expected = Identity::ORACLES.len() * opts.instances;
    outcome(
        failed.is_empty() && oracle.len() == expected,
        format!(
            "{} instances, mc = {}, worst |z| = {worst:.2} (limit {}){}",
            oracle.len(),
            opts.mc_samples,
            opts.z_oracle,
            if failed.is_empty() { String::new() } else { format!(", failed {}", failed.join(" ")) }
        ),
    )
}

fn bias_reproduction() -> Outcome {
    let opts = VerifyOptions {
        seed: SEED,
        ..VerifyOptions::default()
    };
    match bias_rows(&opts) {
        Ok(rows) => {
            let z: Vec<String> = rows
                .iter()
                .map(|r| format!("{:.2}", r.deviation / r.tolerance * opts.z_bias))
                .collect();
            outcome(
                rows.len() == 3 && rows.iter().all(|r| r.passed),
                format!(
                    "{} trajectories, per-coordinate |z| = [{}] (limit {})",
                    opts.bias_trajectories,
                    z.join(", "),
                    opts.z_bias
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn bound_domination(tmp: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for d in [2usize, 5] {
        let plan = BoundPlan {
            dim: d,
            n_samples: 10_000,
            repetitions: 20,
            master_seed: SEED,
            ..BoundPlan::default()
        };
        match run_bound(&plan) {
            Ok(out) => {
                let bad = out.violations().len();
                let worst = out
                    .rows
                    .iter()
                    .filter(|r| r.step > 0)
                    .map(|r| r.measured_mean / r.bound)
                    .fold(0.0, f64::max);
                pass &= bad == 0;
                notes.push(format!("d={d}: {bad} violations, max mean/bound after step 0 {worst:.3}"));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("d={d}: error {e}"));
            }
        }
        let out = tmp.join(format!("bound_d{d}"));
        let code = fgd(&[
            "bound",
            "--d",
            &d.to_string(),
            "--n",
            "10000",
            "--reps",
            "20",
            "--seed",
            &SEED.to_string(),
            "--out",
            out.to_str().unwrap(),
        ]);
        pass &= code == 0;
        notes.push(format!("exit {code}"));
    }
    outcome(pass, notes.join("; "))
}

fn rate_separation(trace: &RunRecord) -> Outcome {
    let d = trace.plan.dim;
    let window = 10_000..=100_000;
    let sgd = single(trace, d, OptimizerKind::Sgd);
    let fgd1 = single(trace, d, OptimizerKind::Fgd { ell: 1 });
    let fgdd = single(trace, d, OptimizerKind::Fgd { ell: d });
    let (Ok(s_sgd), Ok(s_fgd1)) = (
        loglog_slope(&sgd.summary, window.clone()),
        loglog_slope(&fgd1.summary, window),
    ) else {
        return outcome(false, "slope fit failed");
    };
    let ratio = fgd1.final_mean() / fgdd.final_mean();
    let vs_sgd = fgdd.final_mean() / sgd.final_mean();
    let a = in_range(s_sgd, -1.3, -0.7);
    let b = in_range(s_fgd1, -1.3, -0.7) && ratio >= d as f64 / 4.0;
    let c = in_range(vs_sgd, 1.0 / 3.0, 3.0);
    outcome(
        a && b && c,
        format!(
            "(a) SGD slope {s_sgd:.3} (b) FGD(1) slope {s_fgd1:.3}, FGD(1)/FGD({d}) {ratio:.2} (>= {:.2}) (c) FGD({d})/SGD {vs_sgd:.2}",
            d as f64 / 4.0
        ),
    )
}

fn dimension_scaling() -> Outcome {
    let rec = desk(Study::DimSweep);
    let dims = rec.plan.axis_values.clone();
    let per_d = |make: &dyn Fn(usize) -> OptimizerKind| -> Vec<f64> {
        dims.iter()
            .map(|&d| single(&rec, d, make(d)).final_mean_normalized())
            .collect()
    };
    let growth = |v: &[f64]| -> Vec<f64> { v.windows(2).map(|w| w[1] / w[0]).collect() };
    let fgd = growth(&per_d(&|_| OptimizerKind::Fgd { ell: 1 }));
    let sgd = growth(&per_d(&|_| OptimizerKind::Sgd));
    let fgdd = growth(&per_d(&|d| OptimizerKind::Fgd { ell: d }));
    let pass = fgd.iter().all(|&g| in_range(g, 1.4, 3.0))
        && sgd.iter().chain(&fgdd).all(|&g| in_range(g, 0.5, 2.0));
    let fmt = |v: &[f64]| v.iter().map(|g| format!("{g:.2}")).collect::<Vec<_>>().join(", ");
    outcome(
        pass,
        format!(
            "per-doubling growth of MSE/d over d = {dims:?}: FGD(1) [{}], SGD [{}], FGD(d) [{}]",
            fmt(&fgd),
            fmt(&sgd),
            fmt(&fgdd)
        ),
    )
}

fn low_rank_adaptation() -> Outcome {
    let rec = desk(Study::RankSweep);
    let ranks = rec.plan.axis_values.clone();
    let mut pass = true;
    let mut notes = Vec::new();
    for &s in &ranks {
        let r = single(&rec, s, OptimizerKind::Fgd { ell: s }).final_mean()
            / single(&rec, s, OptimizerKind::Sgd).final_mean();
        pass &= r <= 2.0;
        notes.push(format!("s={s}: FGD(s)/SGD {r:.2}"));
    }
    let per_s = |s: usize| single(&rec, s, OptimizerKind::Fgd { ell: 1 }).final_mean_normalized();
    let growth = per_s(20) / per_s(5);
    pass &= growth >= 2.0;
    notes.push(format!("FGD(1)/s at s=20 vs s=5: {growth:.2}x"));
    outcome(pass, notes.join("; "))
}

fn afgd_equivalence(trace: &RunRecord) -> Outcome {
    let d = trace.plan.dim;
    let mut pass = true;
    let mut notes = Vec::new();
    for ell in [1, d] {
        let r = single(trace, d, OptimizerKind::Afgd { ell }).final_mean()
            / single(trace, d, OptimizerKind::Fgd { ell }).final_mean();
        pass &= in_range(r, 0.5, 2.0);
        notes.push(format!("aFGD({ell})/FGD({ell}) {r:.3}"));
    }
    outcome(pass, notes.join("; "))
}

fn determinism(tmp: &Path) -> Outcome {
    let mut dirs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.join(format!("det_{threads}"));
        let code = fgd(&[
            "run",
            "--study",
            "all",
            "--seed",
            "11",
            "--reps",
            "4",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        if code != 0 {
            return outcome(false, format!("run with --threads {threads} exited {code}"));
        }
        dirs.push(out);
    }
    let mut differing = Vec::new();
    for study in Study::ALL {
        let name = format!("{}.csv", study.name());
        let a = std::fs::read(dirs[0].join(&name)).unwrap_or_default();
        let b = std::fs::read(dirs[1].join(&name)).unwrap_or_default();
        if a.is_empty() || a != b {
            differing.push(name);
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "all four study CSVs byte-identical for --threads 1 and 3".to_string()
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..10).prop_flat_map(|d| {
        (
            proptest::collection::vec(-5.0..5.0f64, d),
            proptest::collection::vec(-2.0..2.0f64, d),
            proptest::collection::vec(-3.0..3.0f64, d),
            -5.0..5.0f64,
        )
    })
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())))
}

fn property_suite() -> Outcome {
    const CASES: u32 = 256;
    let mut runner = TestRunner::new(PtConfig {
        cases: CASES,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let mut results = Vec::new();

    results.push((
        "rescaling",
        runner.run(
            &(case(), 1e-3..0.5f64, prop_oneof![-4.0..-0.25f64, 0.25..4.0f64]),
            |((theta, x, xi, y), alpha, lambda)| {
                let mut a = TrajectoryState::new(theta.clone());
                a.fgd_step(&x, y, alpha, &xi).unwrap();
                let scaled: Vec<f64> = xi.iter().map(|v| v / lambda).collect();
                let mut b = TrajectoryState::new(theta);
                b.fgd_step(&x, y, alpha * lambda * lambda, &scaled).unwrap();
                prop_assert!(close(&a.theta, &b.theta));
                Ok(())
            },
        ).map_err(|e| e.to_string()),
    ));

    results.push((
        "even symmetry",
        runner.run(&(case(), 1e-3..0.5f64), |((theta, x, xi, y), alpha)| {
            let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
            for afgd in [false, true] {
                let mut a = TrajectoryState::new(theta.clone());
                let mut b = TrajectoryState::new(theta.clone());
                if afgd {
                    a.afgd_step(&x, y, alpha, &xi).unwrap();
                    b.afgd_step(&x, y, alpha, &neg).unwrap();
                } else {
                    a.fgd_step(&x, y, alpha, &xi).unwrap();
                    b.fgd_step(&x, y, alpha, &neg).unwrap();
                }
                prop_assert_eq!(&a.theta, &b.theta);
            }
            Ok(())
        }).map_err(|e| e.to_string()),
    ));

    results.push((
        "FGD(1) = single update",
        runner.run(&(case(), any::<u64>()), |((theta, x, _xi, y), seed)| {
            let sched = Schedule::theorem_form(2.0, 50.0, 1).unwrap();
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let mut a = TrajectoryState::new(theta.clone());
            a.run_outer_step(OptimizerKind::Fgd { ell: 1 }, &sched, &x, y, &mut r1)
                .unwrap();
            let mut xi = vec![0.0; theta.len()];
            fill_standard_normal(&mut r2, &mut xi);
            let mut b = TrajectoryState::new(theta);
            b.fgd_step(&x, y, sched.learning_rate(1), &xi).unwrap();
            prop_assert_eq!(a.theta, b.theta);
            Ok(())
        }).map_err(|e| e.to_string()),
    ));

    results.push((
        "fixed point",
        runner.run(&(case(), any::<u64>(), 1usize..5), |((star, _, _, _), seed, ell)| {
            let d = star.len();
            let model = ModelSpec::new(CovariateSpec::full_cube(d).unwrap(), star.clone())
                .unwrap()
                .with_noise_std(0.0)
                .unwrap();
            let sched = Schedule::theorem_form(2.0, 12.0 * d as f64, ell).unwrap();
            for opt in [
                OptimizerKind::Sgd,
                OptimizerKind::Fgd { ell },
                OptimizerKind::Afgd { ell },
            ] {
                let mut data = ChaCha8Rng::seed_from_u64(seed);
                let mut noise = ChaCha8Rng::seed_from_u64(!seed);
                let out =
                    run_trajectory(&model, opt, &sched, 10, &[10], star.clone(), &mut data, &mut noise)
                        .unwrap();
                prop_assert_eq!(&out[0].theta, &star);
            }
            Ok(())
        }).map_err(|e| e.to_string()),
    ));

    results.push((
        "MSPE sandwich",
        runner.run(&(case(), any::<u64>()), |((theta, star, _, _), seed)| {
            let d = theta.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let entries = (0..d * d)
                .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
                .collect();
            let a = Matrix::from_row_major(d, d, entries).unwrap();
            let mut sigma = a.matmul(&a.transpose()).unwrap();
            sigma.add_scaled(0.1, &Matrix::identity(d));
            let eig = linalg::symmetric_eigen(&sigma).unwrap();
            let (lo, hi) = (eig.values[0], eig.values[d - 1]);
            let e = mse(&theta, &star).unwrap();
            let p = mspe(&theta, &star, &sigma).unwrap();
            let slack = 1e-9 * (1.0 + hi * e);
            prop_assert!(p >= lo * e - slack && p <= hi * e + slack);
            Ok(())
        }).map_err(|e| e.to_string()),
    ));

    let failed: Vec<String> = results
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} properties x {CASES} cases, no failures", results.len())
        } else {
            failed.join("; ")
        },
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    // criteria 4 and 7 share one step-trace run
    let trace: OnceCell<RunRecord> = OnceCell::new();
    let shared = || trace.get_or_init(|| desk(Study::StepTrace));
    type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;
    let tmp_path = tmp.path();
    let checks: Vec<(&str, Check)> = vec![
        ("oracle suite", Box::new(oracle_suite)),
        ("expected iterate", Box::new(bias_reproduction)),
        ("bound domination", Box::new(|| bound_domination(tmp_path))),
        ("rate separation", Box::new(|| rate_separation(shared()))),
        ("dimension scaling", Box::new(dimension_scaling)),
        ("low-rank adaptation", Box::new(low_rank_adaptation)),
        ("aFGD equivalence", Box::new(|| afgd_equivalence(shared()))),
        ("determinism", Box::new(|| determinism(tmp_path))),
        ("property suite", Box::new(property_suite)),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} {}. {name}: {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    if failures > 0 {
        println!("{failures} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
