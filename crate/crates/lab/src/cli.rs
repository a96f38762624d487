//! `fgd` command line: `run`, `verify` and `bound`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 verification or bound
//! failure, 3 runtime error (divergence, I/O).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bound::{run_bound, write_bound_csv, BoundError};
use crate::config::Config;
use crate::harness::{run_plan, HarnessError};
use crate::output;
use crate::verify::{format_table, run_verify};

#[derive(Debug, Parser)]
#[command(name = "fgd", version, about = "Forward gradient descent simulations for linear regression")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Repetitions per configuration.
    #[arg(long, global = true, value_name = "N", allow_negative_numbers = true)]
    pub reps: Option<i64>,
    /// Use the published problem sizes instead of the desk-scale defaults.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Worker threads (0 or unset: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N", allow_negative_numbers = true)]
    pub threads: Option<i64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run simulation studies and write `<study>.csv` and `<study>.meta`.
    Run {
        /// dim_sweep, reps_sweep, rank_sweep, step_trace or all.
        #[arg(long)]
        study: Option<String>,
    },
    /// Check the moment identities and the expected-iterate formula by Monte Carlo.
    Verify {
        /// Monte Carlo draws per identity instance.
        #[arg(long, allow_negative_numbers = true)]
        mc: Option<i64>,
    },
    /// Compare measured risk with its theoretical upper bound; writes `bound.csv`.
    Bound {
        /// Dimension.
        #[arg(long, allow_negative_numbers = true)]
        d: Option<i64>,
        /// Updates per sample.
        #[arg(long, allow_negative_numbers = true)]
        ell: Option<i64>,
        /// Sample size.
        #[arg(long, allow_negative_numbers = true)]
        n: Option<i64>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(m: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: m.to_string(),
        }
    }
    fn failed(m: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: m.to_string(),
        }
    }
    fn runtime(m: impl std::fmt::Display) -> Self {
        Self {
            code: 3,
            message: m.to_string(),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_runtime() {
            CliError::runtime(e)
        } else {
            CliError::config(e)
        }
    }
}

fn resolve(common: &CommonArgs) -> Result<Config, CliError> {
    let mut c = match &common.config {
        Some(p) => Config::load(p).map_err(CliError::config)?,
        None => Config::default(),
    };
    if common.seed.is_some() {
        c.seed = common.seed;
    }
    if common.out.is_some() {
        c.out = common.out.clone();
    }
    if common.reps.is_some() {
        c.reps = common.reps;
    }
    if common.paper_scale {
        c.paper_scale = Some(true);
    }
    if common.threads.is_some() {
        c.threads = common.threads;
    }
    Ok(c)
}

fn create_out(dir: &std::path::Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn global_echo(c: &Config, threads: usize) -> serde_json::Value {
    json!({
        "seed": c.seed.unwrap_or(0),
        "reps": c.reps,
        "out": c.out_dir(),
        "threads": threads,
        "paper_scale": c.paper_scale.unwrap_or(false),
        "file": c,
    })
}

fn cmd_run(mut c: Config, study: Option<String>) -> Result<(), CliError> {
    if study.is_some() {
        c.study = study;
    }
    let studies = c.studies().map_err(CliError::config)?;
    let threads = c.thread_count().map_err(CliError::config)?;
    // resolve every plan before running anything
    let plans = studies
        .iter()
        .map(|&s| c.plan(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::config)?;
    let dir = c.out_dir();
    create_out(&dir)?;
    for plan in plans {
        let record = run_plan(&plan, threads)?;
        let name = plan.study.name();
        let csv_path = output::csv_path(&dir, name);
        let file = std::fs::File::create(&csv_path)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", csv_path.display())))?;
        output::write_run_csv(&record, std::io::BufWriter::new(file))
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", csv_path.display())))?;
        let meta = output::run_meta(&record, &global_echo(&c, record.threads));
        let meta_path = output::meta_path(&dir, name);
        output::write_json(&meta_path, &meta)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", meta_path.display())))?;
        println!(
            "{name}: {} series x {} reps in {:.2}s -> {}",
            record.series.len(),
            plan.repetitions,
            record.wall_time_secs,
            csv_path.display()
        );
        for s in &record.series {
            let ep = s.arm.epochs.map(|e| format!(" x{e} epochs")).unwrap_or_default();
            println!(
                "  {}={:<4} {:<10}{:<12} final {} = {:.4e}",
                plan.study.axis_name(),
                s.axis_value,
                s.arm.optimizer.to_string(),
                ep,
                s.metric.name(),
                s.final_mean()
            );
        }
    }
    Ok(())
}

fn cmd_verify(c: Config, mc: Option<i64>) -> Result<(), CliError> {
    let mut c = c;
    if let Some(m) = mc {
        c.verify.get_or_insert_with(Default::default).mc_samples = Some(m);
    }
    let opts = c.verify_options().map_err(CliError::config)?;
    let threads = c.thread_count().map_err(CliError::config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::runtime)?;
    let rows = pool
        .install(|| run_verify(&opts))
        .map_err(CliError::runtime)?;
    print!("{}", format_table(&rows));
    let mut failing: Vec<&str> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.identity.name())
        .collect();
    failing.dedup();
    if failing.is_empty() {
        println!("all {} checks passed (mc = {})", rows.len(), opts.mc_samples);
        Ok(())
    } else {
        Err(CliError::failed(format!(
            "verification failed for: {}",
            failing.join(", ")
        )))
    }
}

fn cmd_bound(c: Config, d: Option<i64>, ell: Option<i64>, n: Option<i64>) -> Result<(), CliError> {
    let mut c = c;
    {
        let b = c.bound.get_or_insert_with(Default::default);
        b.d = d.or(b.d);
        b.ell = ell.or(b.ell);
        b.n = n.or(b.n);
    }
    let plan = c.bound_plan().map_err(CliError::config)?;
    let threads = c.thread_count().map_err(CliError::config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::runtime)?;
    let outcome = pool.install(|| run_bound(&plan)).map_err(|e| match e {
        BoundError::Config(_) | BoundError::Inadmissible(_) => CliError::config(e),
        BoundError::Runtime(_) => CliError::runtime(e),
    })?;
    let dir = c.out_dir();
    create_out(&dir)?;
    let path = dir.join("bound.csv");
    let file = std::fs::File::create(&path)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    write_bound_csv(&outcome, std::io::BufWriter::new(file))
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    let r = &outcome.report;
    let meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "plan": plan,
        "constants": {
            "c1": r.c1, "c2": r.c2, "ell": r.ell, "b": r.b,
            "lambda_max": r.lambda_max, "lambda_min_nonzero": r.lambda_min_nonzero, "trace": r.trace,
        },
        "theta_star": outcome.theta_star,
        "theta_star_policy": "uniform on [-10, 10]^d, drawn once from the master seed",
        "violation_rule": format!("measured_mean > bound + {} * measured_std / sqrt(reps)", plan.z),
        "resolved_config": global_echo(&c, threads),
        "columns": output::BOUND_COLUMNS,
    });
    output::write_json(&dir.join("bound.meta"), &meta).map_err(CliError::runtime)?;
    println!(
        "{:>8} {:>14} {:>14} {:>14}",
        "step", "measured_mean", "measured_std", "bound"
    );
    for row in &outcome.rows {
        println!(
            "{:>8} {:>14.6e} {:>14.6e} {:>14.6e}",
            row.step, row.measured_mean, row.measured_std, row.bound
        );
    }
    let bad = outcome.violations();
    if bad.is_empty() {
        println!("measured risk within bound + {} SE at all {} checkpoints", plan.z, outcome.rows.len());
        Ok(())
    } else {
        let steps: Vec<String> = bad.iter().map(|r| r.step.to_string()).collect();
        Err(CliError::failed(format!(
            "measured risk exceeds the bound at steps {}",
            steps.join(", ")
        )))
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let c = resolve(&cli.common)?;
    match cli.command {
        Command::Run { study } => cmd_run(c, study),
        Command::Verify { mc } => cmd_verify(c, mc),
        Command::Bound { d, ell, n } => cmd_bound(c, d, ell, n),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
