use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use recohere_cli::{run, Mode, RunConfig};

/// Batch hierarchical forecast reconciliation: reconcile per-step base
/// forecasts (or a simulated panel), score them, and write CSV tables.
#[derive(Parser)]
#[command(name = "recohere", version)]
struct Args {
    /// Reconciliation mode.
    #[arg(long, value_enum)]
    mode: Mode,
    /// Hierarchy descriptor JSON (required except for simulate-study).
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    /// Per-step forecasts JSON, or the simulation spec for simulate-study.
    #[arg(long)]
    forecasts: PathBuf,
    /// Observations CSV, one row per step in hierarchy order.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Monte Carlo draws per step (sampling and scoring).
    #[arg(long, default_value_t = 100_000)]
    n_draws: usize,
    /// Master seed; fully determines all outputs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Truncation tail mass for enumeration supports.
    #[arg(long, default_value_t = 1e-9)]
    tail_tol: f64,
    /// Interval miss level: (1 - alpha) central prediction intervals.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Output directory for the CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = RunConfig {
        mode: args.mode,
        hierarchy: args.hierarchy,
        forecasts: args.forecasts,
        obs: args.obs,
        n_draws: args.n_draws,
        seed: args.seed,
        tail_tol: args.tail_tol,
        alpha: args.alpha,
        out: args.out,
    };
    match run(&cfg) {
        Ok(report) if report.failed == 0 => ExitCode::SUCCESS,
        Ok(report) => {
            eprintln!("{} of {} steps failed", report.failed, report.steps);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
