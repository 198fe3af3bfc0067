//! Batch reconciliation front-end. Loads (or simulates) hierarchical count
//! or Gaussian base forecasts, reconciles every time step, optionally scores
//! against observations, and writes `reconciled.csv`, `scores.csv` and
//! `diagnostics.csv` into the output directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use nalgebra::{DMatrix, DVector};
use recohere::scoredriven::{aggregate_forecast, simulate_panel, ScoreDrivenParams};
use recohere::Hierarchy;

pub mod input;
pub mod pipeline;

use input::{load_json, load_obs, HierarchySpec, SimStudySpec, StepData, StepSpec};
use pipeline::{process_step, write_diagnostics, write_reconciled, write_scores, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    /// Closed-form reconciliation of joint Gaussian forecasts.
    Gaussian,
    /// Importance-sampling reconciliation of count forecasts.
    Importance,
    /// Exact enumeration of finite/truncated count forecasts.
    Enumerate,
    /// Simulate an intermittent count panel and reconcile every step.
    SimulateStudy,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    /// Hierarchy descriptor path; ignored by simulate-study (which builds a
    /// single-total hierarchy from the simulation spec).
    pub hierarchy: Option<PathBuf>,
    /// Per-step forecasts (gaussian/importance/enumerate) or the simulation
    /// spec (simulate-study).
    pub forecasts: PathBuf,
    pub obs: Option<PathBuf>,
    pub n_draws: usize,
    pub seed: u64,
    pub tail_tol: f64,
    /// Interval level: (1 - alpha) central intervals and interval scores.
    pub alpha: f64,
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy)]
pub struct RunReport {
    pub steps: usize,
    pub failed: usize,
}

/// SplitMix64 finalizer; the per-step seed hash.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one step, independent of execution order.
pub fn step_seed(master: u64, step: usize) -> u64 {
    splitmix64(master ^ splitmix64(step as u64 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    Strengthening,
    Compromise,
    Other,
}

impl std::fmt::Display for Effect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Effect::Strengthening => "strengthening",
            Effect::Compromise => "compromise",
            Effect::Other => "other",
        })
    }
}

/// Classify the reconciled upper mean against the base and bottom-up means:
/// below both (minus tol) is "strengthening", strictly between them is
/// "compromise", anything else (including ties) is "other".
pub fn classify_effect(base: f64, bottom_up: f64, reconciled: f64, tol: f64) -> Effect {
    let lo = base.min(bottom_up);
    let hi = base.max(bottom_up);
    if reconciled < lo - tol {
        Effect::Strengthening
    } else if reconciled > lo + tol && reconciled < hi - tol {
        Effect::Compromise
    } else {
        Effect::Other
    }
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::Config(format!(
            "alpha must lie in (0,1), got {}",
            cfg.alpha
        )));
    }
    if cfg.tail_tol < 0.0 || !cfg.tail_tol.is_finite() {
        return Err(CliError::Config("tail_tol must be non-negative".into()));
    }
    match cfg.mode {
        Mode::Importance | Mode::SimulateStudy if cfg.n_draws < 1000 => Err(CliError::Config(
            format!("importance modes need n_draws >= 1000, got {}", cfg.n_draws),
        )),
        _ if cfg.n_draws < 2 => Err(CliError::Config("n_draws must be >= 2".into())),
        _ => Ok(()),
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunReport, CliError> {
    validate(cfg)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io {
        path: cfg.out.display().to_string(),
        source: e,
    })?;
    match cfg.mode {
        Mode::SimulateStudy => run_simulate_study(cfg),
        _ => run_from_files(cfg),
    }
}

fn run_from_files(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let hpath = cfg
        .hierarchy
        .as_ref()
        .ok_or_else(|| CliError::Config("this mode requires --hierarchy".into()))?;
    let h = load_json::<HierarchySpec>(hpath)?.build()?;
    let steps: Vec<StepSpec> = load_json(&cfg.forecasts)?;
    let data = steps
        .into_iter()
        .map(StepSpec::build)
        .collect::<Result<Vec<_>, _>>()?;
    for (i, d) in data.iter().enumerate() {
        let ok = match d {
            StepData::Counts(fc) => fc.validate_against(&h).is_ok(),
            StepData::Joint(g) => g.dim() == h.n(),
        };
        if !ok {
            return Err(CliError::Config(format!(
                "step {i}: forecast dimensions do not match the hierarchy"
            )));
        }
    }
    let obs = match &cfg.obs {
        Some(p) => {
            let rows = load_obs(p, h.n())?;
            if rows.len() < data.len() {
                return Err(CliError::Config(format!(
                    "observations cover {} steps but forecasts have {}",
                    rows.len(),
                    data.len()
                )));
            }
            Some(rows)
        }
        None => None,
    };
    let inputs: Vec<(usize, StepData, Option<Vec<f64>>)> = data
        .into_iter()
        .enumerate()
        .map(|(i, d)| (i, d, obs.as_ref().map(|o| o[i].clone())))
        .collect();
    run_steps(&h, cfg, inputs)
}

const SIM_SALT: u64 = 0x51de_c0de_51de_c0de;

fn diag_params(
    spec: &SimStudySpec,
) -> Result<(ScoreDrivenParams<f64>, ScoreDrivenParams<f64>), CliError> {
    let m = spec.intercept.len();
    for (name, len) in [
        ("ar", spec.ar.len()),
        ("score", spec.score.len()),
        ("alpha", spec.alpha.len()),
        ("mu0", spec.mu0.len()),
    ] {
        if len != m {
            return Err(CliError::Config(format!(
                "simulation field {name} has length {len}, expected {m}"
            )));
        }
    }
    let bottom = ScoreDrivenParams::new(
        DVector::from_vec(spec.intercept.clone()),
        DMatrix::from_diagonal(&DVector::from_vec(spec.ar.clone())),
        DMatrix::from_diagonal(&DVector::from_vec(spec.score.clone())),
        spec.alpha.clone(),
        spec.mu0.clone(),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let upper = ScoreDrivenParams::new(
        DVector::from_element(1, spec.upper.intercept),
        DMatrix::from_element(1, 1, spec.upper.ar),
        DMatrix::from_element(1, 1, spec.upper.score),
        vec![spec.upper.alpha],
        vec![spec.upper.mu0],
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((bottom, upper))
}

fn run_simulate_study(cfg: &RunConfig) -> Result<RunReport, CliError> {
    use recohere::distributions::{BlockForecast, CountDistribution, HierForecast};

    let spec: SimStudySpec = load_json(&cfg.forecasts)?;
    let m = spec.intercept.len();
    if m == 0 {
        return Err(CliError::Config("simulation needs at least one series".into()));
    }
    if spec.burn_in + 1 >= spec.horizon {
        return Err(CliError::Config(
            "horizon must exceed burn_in + 1".into(),
        ));
    }
    let (bottom_params, upper_params) = diag_params(&spec)?;
    let panel = simulate_panel(&bottom_params, spec.horizon, splitmix64(cfg.seed ^ SIM_SALT))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let agg_fc =
        aggregate_forecast(&panel.counts, &upper_params).map_err(|e| CliError::Config(e.to_string()))?;

    let labels: Vec<String> = std::iter::once("total".to_string())
        .chain((0..m).map(|j| format!("b{j}")))
        .collect();
    let h = Hierarchy::new(vec![vec![1; m]], labels).map_err(|e| CliError::Config(e.to_string()))?;

    // the simulated counts double as the observations
    write_panel(&cfg.out.join("panel.csv"), h.labels(), &panel.counts).map_err(|e| {
        CliError::Io {
            path: cfg.out.join("panel.csv").display().to_string(),
            source: e,
        }
    })?;

    let count = |mu: f64, alpha: f64| {
        if alpha == 0.0 {
            CountDistribution::poisson(mu)
        } else {
            CountDistribution::negative_binomial(mu, alpha)
        }
    };
    let mut inputs = Vec::new();
    #[allow(clippy::needless_range_loop)] // t indexes two parallel time series
    for t in spec.burn_in..spec.horizon - 1 {
        // forecasts made after observing time t, evaluated on time t+1
        let bottom = (0..m)
            .map(|j| count(panel.forecasts[t][j].0, panel.forecasts[t][j].1))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let upper = count(agg_fc[t].0, agg_fc[t].1).map_err(|e| CliError::Config(e.to_string()))?;
        let fc = HierForecast::new(
            BlockForecast::Counts(vec![upper]),
            BlockForecast::Counts(bottom),
            true,
        );
        let next = &panel.counts[t + 1];
        let total: u64 = next.iter().sum();
        let y: Vec<f64> = std::iter::once(total as f64)
            .chain(next.iter().map(|&c| c as f64))
            .collect();
        inputs.push((t, StepData::Counts(fc), Some(y)));
    }
    run_steps(&h, cfg, inputs)
}

fn write_panel(path: &Path, labels: &[String], counts: &[Vec<u64>]) -> std::io::Result<()> {
    let mut s = format!("step,{}\n", labels.join(","));
    for (t, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        s.push_str(&t.to_string());
        s.push(',');
        s.push_str(&total.to_string());
        for v in row {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    std::fs::write(path, s)
}

fn run_steps(
    h: &Hierarchy,
    cfg: &RunConfig,
    inputs: Vec<(usize, StepData, Option<Vec<f64>>)>,
) -> Result<RunReport, CliError> {
    let outcomes: Vec<StepOutcome> = inputs
        .par_iter()
        .map(|(idx, data, obs)| {
            process_step(h, cfg, *idx, data, obs.as_deref(), step_seed(cfg.seed, *idx))
        })
        .collect();

    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let mut diags = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for out in outcomes {
        if out.failed {
            failed += 1;
            eprintln!("step {} {}", out.diag.step, out.diag.status);
        }
        rows.extend(out.rows);
        scores.extend(out.scores);
        diags.push(out.diag);
    }

    let io_err = |p: &Path, e: std::io::Error| CliError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let p = cfg.out.join("reconciled.csv");
    write_reconciled(&p, &rows).map_err(|e| io_err(&p, e))?;
    let p = cfg.out.join("scores.csv");
    write_scores(&p, &scores).map_err(|e| io_err(&p, e))?;
    let p = cfg.out.join("diagnostics.csv");
    write_diagnostics(&p, &diags).map_err(|e| io_err(&p, e))?;

    Ok(RunReport {
        steps: diags.len(),
        failed,
    })
}
