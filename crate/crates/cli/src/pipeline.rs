//! Per-step reconciliation, scoring, and the CSV sinks.

use nalgebra::DMatrix;

use recohere::analytic::{enumerate_reconciled, JointPmfTable};
use recohere::distributions::{stream_rng, BlockForecast, CountDistribution, HierForecast, MvGaussian};
use recohere::gaussian::reconcile_gaussian;
use recohere::importance::{estimate_pc, reconcile_is};
use recohere::scoring::{energy_score, interval_from_samples, interval_score, point_errors};
use recohere::{Error, Hierarchy};

use crate::input::StepData;
use crate::{classify_effect, splitmix64, Effect, Mode, RunConfig};

/// reconciled.csv row: one series at one step.
pub struct SeriesRow {
    pub step: usize,
    pub series: String,
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
    pub q_lo: f64,
    pub q_hi: f64,
}

/// scores.csv row. `series` is a label or "joint" for the energy score.
pub struct ScoreRow {
    pub step: usize,
    pub series: String,
    pub metric: &'static str,
    pub base: f64,
    pub reconciled: f64,
    pub skill: f64,
}

/// diagnostics.csv row; optional fields are empty when not applicable.
pub struct DiagRow {
    pub step: usize,
    pub status: String,
    pub pc: Option<f64>,
    pub pc_se: Option<f64>,
    pub ess: Option<f64>,
    pub base_upper_mean: Option<f64>,
    pub bottom_up_mean: Option<f64>,
    pub reconciled_upper_mean: Option<f64>,
    pub effect: Option<Effect>,
    pub base_upper_width: Option<f64>,
    pub reconciled_upper_width: Option<f64>,
}

pub struct StepOutcome {
    pub rows: Vec<SeriesRow>,
    pub scores: Vec<ScoreRow>,
    pub diag: DiagRow,
    pub failed: bool,
}

fn failed_outcome(step: usize, e: &Error) -> StepOutcome {
    StepOutcome {
        rows: Vec::new(),
        scores: Vec::new(),
        diag: DiagRow {
            step,
            status: format!("error: {e}"),
            pc: None,
            pc_se: None,
            ess: None,
            base_upper_mean: None,
            bottom_up_mean: None,
            reconciled_upper_mean: None,
            effect: None,
            base_upper_width: None,
            reconciled_upper_width: None,
        },
        failed: true,
    }
}

/// Acklam's rational approximation to the standard normal quantile;
/// absolute error below 1.2e-9 on (0, 1).
#[allow(clippy::excessive_precision)]
fn norm_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -norm_quantile(1.0 - p)
    }
}

#[allow(clippy::type_complexity)]
fn count_block(
    fc: &HierForecast<f64>,
) -> Option<(&[CountDistribution<f64>], &[CountDistribution<f64>])> {
    match (&fc.upper, &fc.bottom) {
        (BlockForecast::Counts(u), BlockForecast::Counts(b)) => Some((u, b)),
        _ => None,
    }
}

fn weighted_bottom_up_mean(h: &Hierarchy, bottom: &[CountDistribution<f64>]) -> f64 {
    (0..h.m())
        .map(|j| h.a_entry(0, j) as f64 * bottom[j].mean_var().0)
        .sum()
}

/// Independent draws from the base joint (each series from its own
/// marginal), as an N x n matrix in hierarchy order.
fn base_sample_matrix(
    h: &Hierarchy,
    fc: &HierForecast<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>, Error> {
    let n = h.n();
    let mut out = DMatrix::zeros(n_draws, n);
    match (&fc.upper, &fc.bottom) {
        (BlockForecast::Counts(u), BlockForecast::Counts(b)) => {
            for (i, d) in u.iter().chain(b.iter()).enumerate() {
                let mut rng = stream_rng(seed, i as u64);
                for r in 0..n_draws {
                    out[(r, i)] = d.sample_one(&mut rng) as f64;
                }
            }
        }
        (BlockForecast::Gaussian(u), BlockForecast::Gaussian(b)) => {
            let us = u.sample_n(&mut stream_rng(seed, 0), n_draws)?;
            let bs = b.sample_n(&mut stream_rng(seed, 1), n_draws)?;
            out.columns_mut(0, h.n_upper()).copy_from(&us);
            out.columns_mut(h.n_upper(), h.m()).copy_from(&bs);
        }
        _ => return Err(Error::InvalidParameter("mixed forecast blocks".into())),
    }
    Ok(out)
}

/// ES / interval-score / SE / AE rows for one step, base vs reconciled.
fn score_step(
    step: usize,
    labels: &[String],
    base: &DMatrix<f64>,
    reconciled: &DMatrix<f64>,
    y: &[f64],
    alpha: f64,
) -> Result<Vec<ScoreRow>, Error> {
    let mut rows = Vec::new();
    let es_b = energy_score(base, y, 2.0)?;
    let es_r = energy_score(reconciled, y, 2.0)?;
    rows.push(ScoreRow {
        step,
        series: "joint".into(),
        metric: "energy_score",
        base: es_b,
        reconciled: es_r,
        skill: safe_skill(es_b, es_r),
    });
    let level = 1.0 - alpha;
    for (i, label) in labels.iter().enumerate() {
        let col_b: Vec<f64> = base.column(i).iter().copied().collect();
        let col_r: Vec<f64> = reconciled.column(i).iter().copied().collect();
        let (lb, ub) = interval_from_samples(&col_b, level)?;
        let (lr, ur) = interval_from_samples(&col_r, level)?;
        let is_b = interval_score(lb, ub, y[i], alpha)?;
        let is_r = interval_score(lr, ur, y[i], alpha)?;
        rows.push(ScoreRow {
            step,
            series: label.clone(),
            metric: "interval_score",
            base: is_b,
            reconciled: is_r,
            skill: safe_skill(is_b, is_r),
        });
        let pe_b = point_errors(&col_b, y[i])?;
        let pe_r = point_errors(&col_r, y[i])?;
        rows.push(ScoreRow {
            step,
            series: label.clone(),
            metric: "se",
            base: pe_b.se,
            reconciled: pe_r.se,
            skill: safe_skill(pe_b.se, pe_r.se),
        });
        rows.push(ScoreRow {
            step,
            series: label.clone(),
            metric: "ae",
            base: pe_b.ae,
            reconciled: pe_r.ae,
            skill: safe_skill(pe_b.ae, pe_r.ae),
        });
    }
    Ok(rows)
}

/// Skill score, clamping tiny negative Monte Carlo estimates of the energy
/// score to zero instead of failing the step.
fn safe_skill(base: f64, reconciled: f64) -> f64 {
    recohere::scoring::skill_score(base.max(0.0), reconciled.max(0.0)).unwrap_or(0.0)
}

pub fn process_step(
    h: &Hierarchy,
    cfg: &RunConfig,
    step: usize,
    data: &StepData,
    obs: Option<&[f64]>,
    sseed: u64,
) -> StepOutcome {
    let r = match (cfg.mode, data) {
        (Mode::Importance | Mode::SimulateStudy, StepData::Counts(fc)) => {
            importance_step(h, cfg, step, fc, obs, sseed)
        }
        (Mode::Enumerate, StepData::Counts(fc)) => enumerate_step(h, cfg, step, fc, obs, sseed),
        (Mode::Gaussian, StepData::Joint(joint)) => gaussian_step(h, cfg, step, joint, obs, sseed),
        _ => Err(Error::InvalidParameter(
            "forecast kind does not match the run mode".into(),
        )),
    };
    match r {
        Ok(out) => out,
        Err(e) => failed_outcome(step, &e),
    }
}

fn importance_step(
    h: &Hierarchy,
    cfg: &RunConfig,
    step: usize,
    fc: &HierForecast<f64>,
    obs: Option<&[f64]>,
    sseed: u64,
) -> Result<StepOutcome, Error> {
    let samples = reconcile_is(h, fc, cfg.n_draws, sseed)?;
    let stats = samples.stats()?;
    let (q_lo_p, q_hi_p) = (cfg.alpha / 2.0, 1.0 - cfg.alpha / 2.0);
    let mut rows = Vec::with_capacity(h.n());
    for (i, label) in h.labels().iter().enumerate() {
        rows.push(SeriesRow {
            step,
            series: label.clone(),
            mean: stats[i].mean,
            variance: stats[i].variance,
            median: stats[i].median,
            q_lo: samples.quantile(i, q_lo_p)?,
            q_hi: samples.quantile(i, q_hi_p)?,
        });
    }

    let (pc, pc_se) = match count_block(fc) {
        Some(_) => {
            let (p, se) = estimate_pc(h, fc, cfg.n_draws, splitmix64(sseed ^ PC_SALT))?;
            (Some(p), Some(se))
        }
        None => (None, None),
    };

    let (base_u_mean, bottom_up, base_width) = match count_block(fc) {
        Some((u, b)) => {
            let lo = u[0].quantile(q_lo_p) as f64;
            let hi = u[0].quantile(q_hi_p) as f64;
            (u[0].mean_var().0, weighted_bottom_up_mean(h, b), hi - lo)
        }
        None => match (&fc.upper, &fc.bottom) {
            (BlockForecast::Gaussian(u), BlockForecast::Gaussian(b)) => {
                let z = norm_quantile(q_hi_p);
                let bu = (h.a_matrix::<f64>() * b.mean())[0];
                (u.mean()[0], bu, 2.0 * z * u.cov()[(0, 0)].sqrt())
            }
            _ => unreachable!("validated on load"),
        },
    };
    let rec_width = rows[0].q_hi - rows[0].q_lo;
    let effect = classify_effect(base_u_mean, bottom_up, rows[0].mean, EFFECT_TOL);

    let scores = match obs {
        Some(y) => {
            let base = base_sample_matrix(h, fc, cfg.n_draws, splitmix64(sseed ^ BASE_SALT))?;
            score_step(step, h.labels(), &base, samples.full(), y, cfg.alpha)?
        }
        None => Vec::new(),
    };

    Ok(StepOutcome {
        diag: DiagRow {
            step,
            status: if samples.ess_degenerate() {
                "ok (ess below 1% of draws)".into()
            } else {
                "ok".into()
            },
            pc,
            pc_se,
            ess: Some(samples.ess),
            base_upper_mean: Some(base_u_mean),
            bottom_up_mean: Some(bottom_up),
            reconciled_upper_mean: Some(rows[0].mean),
            effect: Some(effect),
            base_upper_width: Some(base_width),
            reconciled_upper_width: Some(rec_width),
        },
        rows,
        scores,
        failed: false,
    })
}

/// Marginal pmf of one coordinate of the table (or of an aggregate).
fn marginal(table: &JointPmfTable<f64>, value: impl Fn(&[u64]) -> u64) -> Vec<(u64, f64)> {
    let mut acc = std::collections::BTreeMap::new();
    for (b, &p) in table.support.iter().zip(&table.probs) {
        *acc.entry(value(b)).or_insert(0.0) += p;
    }
    acc.into_iter().collect()
}

fn pmf_stats(pmf: &[(u64, f64)]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for &(v, p) in pmf {
        mean += v as f64 * p;
        m2 += (v as f64) * (v as f64) * p;
    }
    (mean, m2 - mean * mean)
}

/// Lower quantile of a finite pmf: smallest value with CDF >= q.
fn pmf_quantile(pmf: &[(u64, f64)], q: f64) -> f64 {
    let mut cum = 0.0;
    for &(v, p) in pmf {
        cum += p;
        if cum >= q {
            return v as f64;
        }
    }
    pmf.last().map(|&(v, _)| v as f64).unwrap_or(0.0)
}

fn enumerate_step(
    h: &Hierarchy,
    cfg: &RunConfig,
    step: usize,
    fc: &HierForecast<f64>,
    obs: Option<&[f64]>,
    sseed: u64,
) -> Result<StepOutcome, Error> {
    let table = enumerate_reconciled(h, fc, cfg.tail_tol)?;
    let (q_lo_p, q_hi_p) = (cfg.alpha / 2.0, 1.0 - cfg.alpha / 2.0);

    let mut rows = Vec::with_capacity(h.n());
    for (i, label) in h.labels().iter().enumerate() {
        let pmf = if i < h.n_upper() {
            marginal(&table, |b| h.aggregate(b).unwrap()[i])
        } else {
            let j = i - h.n_upper();
            marginal(&table, |b| b[j])
        };
        let (mean, variance) = pmf_stats(&pmf);
        rows.push(SeriesRow {
            step,
            series: label.clone(),
            mean,
            variance,
            median: pmf_quantile(&pmf, 0.5),
            q_lo: pmf_quantile(&pmf, q_lo_p),
            q_hi: pmf_quantile(&pmf, q_hi_p),
        });
    }

    let (u, b) = count_block(fc).ok_or(Error::ContinuousUnsupported)?;
    let base_u_mean = u[0].mean_var().0;
    let bottom_up = weighted_bottom_up_mean(h, b);
    let base_width = (u[0].quantile(q_hi_p) - u[0].quantile(q_lo_p)) as f64;
    let rec_width = rows[0].q_hi - rows[0].q_lo;
    let effect = classify_effect(base_u_mean, bottom_up, rows[0].mean, EFFECT_TOL);

    let scores = match obs {
        Some(y) => {
            let rec = table_sample_matrix(h, &table, cfg.n_draws, sseed);
            let base = base_sample_matrix(h, fc, cfg.n_draws, splitmix64(sseed ^ BASE_SALT))?;
            score_step(step, h.labels(), &base, &rec, y, cfg.alpha)?
        }
        None => Vec::new(),
    };

    Ok(StepOutcome {
        diag: DiagRow {
            step,
            status: "ok".into(),
            pc: Some(table.pc),
            pc_se: Some(0.0),
            ess: None,
            base_upper_mean: Some(base_u_mean),
            bottom_up_mean: Some(bottom_up),
            reconciled_upper_mean: Some(rows[0].mean),
            effect: Some(effect),
            base_upper_width: Some(base_width),
            reconciled_upper_width: Some(rec_width),
        },
        rows,
        scores,
        failed: false,
    })
}

/// Inverse-CDF draws from the enumerated joint, expanded to the full
/// hierarchy (uppers are the aggregates).
fn table_sample_matrix(
    h: &Hierarchy,
    table: &JointPmfTable<f64>,
    n_draws: usize,
    seed: u64,
) -> DMatrix<f64> {
    use rand::Rng;
    let mut cum = Vec::with_capacity(table.probs.len());
    let mut acc = 0.0;
    for &p in &table.probs {
        acc += p;
        cum.push(acc);
    }
    let mut rng = stream_rng(seed, 0);
    let mut out = DMatrix::zeros(n_draws, h.n());
    for r in 0..n_draws {
        let u: f64 = rng.gen::<f64>() * acc;
        let idx = cum.partition_point(|&c| c < u).min(cum.len() - 1);
        let b = &table.support[idx];
        let agg = h.aggregate(b).unwrap();
        for (i, &v) in agg.iter().chain(b.iter()).enumerate() {
            out[(r, i)] = v as f64;
        }
    }
    out
}

fn gaussian_step(
    h: &Hierarchy,
    cfg: &RunConfig,
    step: usize,
    joint: &MvGaussian<f64>,
    obs: Option<&[f64]>,
    sseed: u64,
) -> Result<StepOutcome, Error> {
    let rec = reconcile_gaussian(h, joint)?;
    let z = norm_quantile(1.0 - cfg.alpha / 2.0);
    let k = h.n_upper();

    let mut rows = Vec::with_capacity(h.n());
    for (i, label) in h.labels().iter().enumerate() {
        let (mean, var) = if i < k {
            (rec.upper_mean[i], rec.upper_cov[(i, i)])
        } else {
            (rec.bottom_mean[i - k], rec.bottom_cov[(i - k, i - k)])
        };
        let sd = var.max(0.0).sqrt();
        rows.push(SeriesRow {
            step,
            series: label.clone(),
            mean,
            variance: var,
            median: mean,
            q_lo: mean - z * sd,
            q_hi: mean + z * sd,
        });
    }

    let base_u_mean = joint.mean()[0];
    let bottom_up = (h.a_matrix::<f64>() * joint.mean().rows(k, h.m()))[0];
    let effect = classify_effect(base_u_mean, bottom_up, rec.upper_mean[0], EFFECT_TOL);
    let base_width = 2.0 * z * joint.cov()[(0, 0)].max(0.0).sqrt();
    let rec_width = 2.0 * z * rec.upper_cov[(0, 0)].max(0.0).sqrt();

    let scores = match obs {
        Some(y) => {
            let rec_samples = rec
                .joint(h)?
                .sample_n(&mut stream_rng(sseed, 1), cfg.n_draws)?;
            let base_samples = joint.sample_n(&mut stream_rng(splitmix64(sseed ^ BASE_SALT), 0), cfg.n_draws)?;
            score_step(step, h.labels(), &base_samples, &rec_samples, y, cfg.alpha)?
        }
        None => Vec::new(),
    };

    Ok(StepOutcome {
        diag: DiagRow {
            step,
            status: "ok".into(),
            pc: None,
            pc_se: None,
            ess: None,
            base_upper_mean: Some(base_u_mean),
            bottom_up_mean: Some(bottom_up),
            reconciled_upper_mean: Some(rec.upper_mean[0]),
            effect: Some(effect),
            base_upper_width: Some(base_width),
            reconciled_upper_width: Some(rec_width),
        },
        rows,
        scores,
        failed: false,
    })
}

const PC_SALT: u64 = 0x70c0_ffee_70c0_ffee;
const BASE_SALT: u64 = 0xba5e_ba5e_ba5e_ba5e;
const EFFECT_TOL: f64 = 1e-9;

fn fmt_opt(v: &Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_reconciled(path: &std::path::Path, rows: &[SeriesRow]) -> std::io::Result<()> {
    let mut s = String::from("step,series,mean,variance,median,q_lo,q_hi\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.series, r.mean, r.variance, r.median, r.q_lo, r.q_hi
        ));
    }
    std::fs::write(path, s)
}

pub fn write_scores(path: &std::path::Path, rows: &[ScoreRow]) -> std::io::Result<()> {
    let mut s = String::from("step,series,metric,base,reconciled,skill\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.series, r.metric, r.base, r.reconciled, r.skill
        ));
    }
    std::fs::write(path, s)
}

pub fn write_diagnostics(path: &std::path::Path, rows: &[DiagRow]) -> std::io::Result<()> {
    let mut s = String::from(
        "step,status,pc,pc_se,ess,base_upper_mean,bottom_up_mean,reconciled_upper_mean,effect,base_upper_width,reconciled_upper_width\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.status,
            fmt_opt(&r.pc),
            fmt_opt(&r.pc_se),
            fmt_opt(&r.ess),
            fmt_opt(&r.base_upper_mean),
            fmt_opt(&r.bottom_up_mean),
            fmt_opt(&r.reconciled_upper_mean),
            r.effect.map(|e| e.to_string()).unwrap_or_default(),
            fmt_opt(&r.base_upper_width),
            fmt_opt(&r.reconciled_upper_width),
        ));
    }
    std::fs::write(path, s)
}
