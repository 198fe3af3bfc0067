//! File-level pipeline behaviour: artifact schemas, per-step failures, and
//! config rejection.

use std::path::Path;

use recohere_cli::{run, CliError, Mode, RunConfig};

fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, content).unwrap();
    p
}

fn base_cfg(dir: &Path, mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        hierarchy: Some(write(
            dir,
            "hier.json",
            r#"{"labels_upper":["U"],"labels_bottom":["B1","B2"],"a":[[1,1]]}"#,
        )),
        forecasts: dir.join("fc.json"),
        obs: None,
        n_draws: 5000,
        seed: 7,
        tail_tol: 1e-9,
        alpha: 0.1,
        out: dir.join("out"),
    }
}

const BERNOULLI_STEP: &str = r#"[
 {"upper":[{"family":"tabulated","support":[0,1,2],"probs":[0.1,0.2,0.7]}],
  "bottom":[{"family":"bernoulli","p":0.3},{"family":"bernoulli","p":0.2}]}
]"#;

#[test]
fn enumerate_writes_expected_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path(), Mode::Enumerate);
    write(dir.path(), "fc.json", BERNOULLI_STEP);
    write(dir.path(), "obs.csv", "1,1,0\n");
    let cfg = RunConfig {
        obs: Some(dir.path().join("obs.csv")),
        ..cfg
    };
    let report = run(&cfg).unwrap();
    assert_eq!(report.steps, 1);
    assert_eq!(report.failed, 0);

    let rec = std::fs::read_to_string(cfg.out.join("reconciled.csv")).unwrap();
    let mut lines = rec.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,series,mean,variance,median,q_lo,q_hi"
    );
    // upper row first, exact closed-form mean 0.9195...
    let u: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(u[1], "U");
    assert!((u[2].parse::<f64>().unwrap() - 0.9195402298850575).abs() < 1e-12);
    let b1: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!((b1[2].parse::<f64>().unwrap() - 0.5172413793103448).abs() < 1e-12);

    let diag = std::fs::read_to_string(cfg.out.join("diagnostics.csv")).unwrap();
    let row = diag.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert!((fields[2].parse::<f64>().unwrap() - 0.174).abs() < 1e-12); // exact p_c
    assert_eq!(fields[8], "compromise");

    let scores = std::fs::read_to_string(cfg.out.join("scores.csv")).unwrap();
    let joint: Vec<&str> = scores
        .lines()
        .filter(|l| l.contains(",joint,"))
        .collect();
    assert_eq!(joint.len(), 1, "one joint energy score per step");
}

#[test]
fn failed_step_is_reported_and_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path(), Mode::Importance);
    // step 0 is infeasible (upper fixed at 5, bottoms sum to at most 2);
    // step 1 is fine
    write(
        dir.path(),
        "fc.json",
        r#"[
 {"upper":[{"family":"tabulated","support":[5],"probs":[1.0]}],
  "bottom":[{"family":"bernoulli","p":0.3},{"family":"bernoulli","p":0.2}]},
 {"upper":[{"family":"poisson","lambda":2.0}],
  "bottom":[{"family":"poisson","lambda":0.5},{"family":"poisson","lambda":0.8}]}
]"#,
    );
    let report = run(&cfg).unwrap();
    assert_eq!(report.steps, 2);
    assert_eq!(report.failed, 1);

    let diag = std::fs::read_to_string(cfg.out.join("diagnostics.csv")).unwrap();
    let rows: Vec<&str> = diag.lines().skip(1).collect();
    assert!(rows[0].contains("error:"));
    assert!(rows[1].contains("ok"));

    // failed step contributes no reconciled rows
    let rec = std::fs::read_to_string(cfg.out.join("reconciled.csv")).unwrap();
    assert_eq!(rec.lines().count(), 1 + 3);
}

#[test]
fn config_errors_are_rejected() {
    let dir = tempfile::tempdir().unwrap();

    // too few draws for importance mode
    let mut cfg = base_cfg(dir.path(), Mode::Importance);
    write(dir.path(), "fc.json", BERNOULLI_STEP);
    cfg.n_draws = 100;
    assert!(matches!(run(&cfg), Err(CliError::Config(_))));

    // forecast dimensions that do not match the hierarchy
    let mut cfg = base_cfg(dir.path(), Mode::Importance);
    write(
        dir.path(),
        "fc.json",
        r#"[{"upper":[{"family":"poisson","lambda":1.0}],
            "bottom":[{"family":"poisson","lambda":0.5}]}]"#,
    );
    cfg.n_draws = 5000;
    assert!(matches!(run(&cfg), Err(CliError::Config(_))));

    // malformed JSON
    let cfg = base_cfg(dir.path(), Mode::Importance);
    write(dir.path(), "fc.json", "not json");
    assert!(matches!(run(&cfg), Err(CliError::Parse { .. })));

    // missing hierarchy for a file-driven mode
    let mut cfg = base_cfg(dir.path(), Mode::Enumerate);
    write(dir.path(), "fc.json", BERNOULLI_STEP);
    cfg.hierarchy = None;
    assert!(matches!(run(&cfg), Err(CliError::Config(_))));

    // observations shorter than the forecast list
    let mut cfg = base_cfg(dir.path(), Mode::Enumerate);
    cfg.obs = Some(write(dir.path(), "obs.csv", "h,h,h\n"));
    assert!(matches!(run(&cfg), Err(CliError::Config(_))));
}

#[test]
fn gaussian_mode_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_cfg(dir.path(), Mode::Gaussian);
    write(
        dir.path(),
        "fc.json",
        r#"[{"joint":{"mean":[2.0,0.5,0.5],
            "cov":[[1.0,0,0],[0,0.25,0],[0,0,0.25]]}}]"#,
    );
    let report = run(&cfg).unwrap();
    assert_eq!(report.failed, 0);
    let rec = std::fs::read_to_string(cfg.out.join("reconciled.csv")).unwrap();
    let u: Vec<&str> = rec.lines().nth(1).unwrap().split(',').collect();
    // variance weights: (0.5 * 2 + 1.0 * 1) / 1.5
    assert!((u[2].parse::<f64>().unwrap() - 4.0 / 3.0).abs() < 1e-12);
}
