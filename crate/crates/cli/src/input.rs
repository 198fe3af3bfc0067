//! Input descriptors: hierarchy and base-forecast JSON, observation CSV,
//! and the simulation-study configuration.

use std::path::Path;

use serde::Deserialize;

use recohere::distributions::{BlockForecast, CountDistribution, HierForecast, MvGaussian};
use recohere::Hierarchy;

use crate::CliError;

/// Hierarchy descriptor: `{"labels_upper": [...], "labels_bottom": [...],
/// "a": [[...], ...]}` with `a[i][j]` the weight of bottom j in upper i.
#[derive(Debug, Deserialize)]
pub struct HierarchySpec {
    pub labels_upper: Vec<String>,
    pub labels_bottom: Vec<String>,
    pub a: Vec<Vec<u64>>,
}

impl HierarchySpec {
    pub fn build(self) -> Result<Hierarchy, CliError> {
        let labels = self
            .labels_upper
            .into_iter()
            .chain(self.labels_bottom)
            .collect();
        Hierarchy::new(self.a, labels).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// One per-series count forecast.
#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CountSpec {
    Poisson { lambda: f64 },
    Negbin { mu: f64, alpha: f64 },
    Bernoulli { p: f64 },
    Tabulated { support: Vec<u64>, probs: Vec<f64> },
}

impl CountSpec {
    pub fn build(self) -> Result<CountDistribution<f64>, CliError> {
        let d = match self {
            Self::Poisson { lambda } => CountDistribution::poisson(lambda),
            Self::Negbin { mu, alpha } => CountDistribution::negative_binomial(mu, alpha),
            Self::Bernoulli { p } => CountDistribution::bernoulli(p),
            Self::Tabulated { support, probs } => CountDistribution::tabulated(support, probs),
        };
        d.map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Joint Gaussian over the full hierarchy, upper block first.
#[derive(Debug, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianSpec {
    pub fn build(self) -> Result<MvGaussian<f64>, CliError> {
        let n = self.mean.len();
        if self.cov.len() != n || self.cov.iter().any(|r| r.len() != n) {
            return Err(CliError::Config(format!(
                "covariance must be {n}x{n} to match the mean"
            )));
        }
        let mean = nalgebra::DVector::from_vec(self.mean);
        let cov = nalgebra::DMatrix::from_fn(n, n, |i, j| self.cov[i][j]);
        MvGaussian::new(mean, cov).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn default_true() -> bool {
    true
}

/// One reconciliation step: independent count blocks, or a joint Gaussian.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Counts {
        upper: Vec<CountSpec>,
        bottom: Vec<CountSpec>,
        #[serde(default = "default_true")]
        independent: bool,
    },
    Joint { joint: GaussianSpec },
}

/// Parsed step payload handed to the pipeline.
#[derive(Debug, Clone)]
pub enum StepData {
    Counts(HierForecast<f64>),
    Joint(MvGaussian<f64>),
}

impl StepSpec {
    pub fn build(self) -> Result<StepData, CliError> {
        match self {
            Self::Counts {
                upper,
                bottom,
                independent,
            } => {
                let upper = upper
                    .into_iter()
                    .map(CountSpec::build)
                    .collect::<Result<Vec<_>, _>>()?;
                let bottom = bottom
                    .into_iter()
                    .map(CountSpec::build)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(StepData::Counts(HierForecast::new(
                    BlockForecast::Counts(upper),
                    BlockForecast::Counts(bottom),
                    independent,
                )))
            }
            Self::Joint { joint } => Ok(StepData::Joint(joint.build()?)),
        }
    }
}

/// Score-driven simulation study: a diagonal multivariate model for the
/// bottom panel plus a univariate model for the (overdispersed) upper base
/// forecast. All bottom vectors must share one length.
#[derive(Debug, Deserialize)]
pub struct SimStudySpec {
    pub horizon: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub intercept: Vec<f64>,
    pub ar: Vec<f64>,
    pub score: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mu0: Vec<f64>,
    pub upper: UpperSimSpec,
}

#[derive(Debug, Deserialize)]
pub struct UpperSimSpec {
    pub intercept: f64,
    pub ar: f64,
    pub score: f64,
    pub alpha: f64,
    pub mu0: f64,
}

fn default_burn_in() -> usize {
    100
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Observations: one CSV row of `n` comma-separated values per step, in
/// hierarchy order (uppers first). A non-numeric first line is treated as a
/// header and skipped.
pub fn load_obs(path: &Path, n: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse()).collect();
        match vals {
            Ok(v) if v.len() == n => rows.push(v),
            Ok(v) => {
                return Err(CliError::Parse {
                    path: path.display().to_string(),
                    msg: format!("line {}: expected {n} values, got {}", lineno + 1, v.len()),
                })
            }
            Err(_) if lineno == 0 => continue, // header
            Err(e) => {
                return Err(CliError::Parse {
                    path: path.display().to_string(),
                    msg: format!("line {}: {e}", lineno + 1),
                })
            }
        }
    }
    Ok(rows)
}
