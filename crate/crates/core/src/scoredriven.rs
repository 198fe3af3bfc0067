//! Simulation of multivariate intermittent count panels with negative
//! binomial observations whose log-locations follow a score-driven
//! recursion, plus one-step-ahead base forecasts given the parameters.
//! Parameter estimation is out of scope; parameters are inputs.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{stream_rng, CountDistribution};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Guard on |log mu|; crossing it signals an exploding parameterization.
const LOG_MU_LIMIT: f64 = 50.0;

/// Parameters of the k-variate score-driven location recursion
/// log mu_{t+1} = C + D log mu_t + E (y_t - mu_t) / (alpha mu_t + 1),
/// with negative binomial observations y_t ~ NB(mu_t, alpha).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDrivenParams<T: Scalar> {
    pub intercept: DVector<T>,
    pub ar: DMatrix<T>,
    pub score_loading: DMatrix<T>,
    pub alpha: Vec<T>,
    pub mu0: Vec<T>,
}

impl<T: Scalar> ScoreDrivenParams<T> {
    pub fn new(
        intercept: DVector<T>,
        ar: DMatrix<T>,
        score_loading: DMatrix<T>,
        alpha: Vec<T>,
        mu0: Vec<T>,
    ) -> Result<Self> {
        let k = intercept.len();
        for (rows, cols) in [(ar.nrows(), ar.ncols()), (score_loading.nrows(), score_loading.ncols())] {
            if rows != k || cols != k {
                return Err(Error::DimensionMismatch { expected: k, got: rows });
            }
        }
        if alpha.len() != k || mu0.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: alpha.len(),
            });
        }
        if alpha.iter().any(|&a| a < T::zero()) {
            return Err(Error::InvalidParameter(
                "dispersion alpha must be non-negative".into(),
            ));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if mu0.iter().any(|&m| !(m > T::zero())) {
            return Err(Error::InvalidParameter(
                "initial locations mu0 must be positive".into(),
            ));
        }
        let radius = ar
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(T::zero(), num_traits::Float::max);
        if radius >= T::one() {
            return Err(Error::InvalidParameter(format!(
                "autoregressive matrix spectral radius {:?} >= 1",
                radius.to_f64_c()
            )));
        }
        Ok(Self {
            intercept,
            ar,
            score_loading,
            alpha,
            mu0,
        })
    }

    pub fn k(&self) -> usize {
        self.intercept.len()
    }
}

/// One recursion step; inputs and output are locations (not logs).
pub fn step_mu<T: Scalar>(params: &ScoreDrivenParams<T>, mu: &[T], y: &[T]) -> Result<Vec<T>> {
    let k = params.k();
    if mu.len() != k || y.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: mu.len(),
        });
    }
    let log_mu = DVector::from_fn(k, |i, _| num_traits::Float::ln(mu[i]));
    let score = DVector::from_fn(k, |i, _| {
        (y[i] - mu[i]) / (params.alpha[i] * mu[i] + T::one())
    });
    let next = &params.intercept + &params.ar * log_mu + &params.score_loading * score;
    let limit = T::from_f64_c(LOG_MU_LIMIT);
    for (i, &v) in next.iter().enumerate() {
        if !num_traits::Float::is_finite(v) || num_traits::Float::abs(v) > limit {
            return Err(Error::NonFiniteUpdate(i));
        }
    }
    Ok(next.iter().map(|&v| num_traits::Float::exp(v)).collect())
}

/// A simulated count panel with its location paths and the one-step-ahead
/// base forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel<T: Scalar> {
    /// counts[t][j]: observed count of series j at time t.
    pub counts: Vec<Vec<u64>>,
    /// mus[t][j]: location used to generate counts[t][j].
    pub mus: Vec<Vec<T>>,
    /// forecasts[t][j]: NB(mu, alpha) parameters predicting time t+1,
    /// formed after observing counts[t].
    pub forecasts: Vec<Vec<(T, T)>>,
}

/// Iterate draw-then-update for `horizon` steps. Series j draws from RNG
/// stream j of `seed`, so the panel is deterministic given the seed.
pub fn simulate_panel<T: Scalar>(
    params: &ScoreDrivenParams<T>,
    horizon: usize,
    seed: u64,
) -> Result<SimulatedPanel<T>> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let k = params.k();
    let mut rngs: Vec<_> = (0..k).map(|j| stream_rng(seed, j as u64)).collect();
    let mut mu = params.mu0.clone();
    let mut counts = Vec::with_capacity(horizon);
    let mut mus = Vec::with_capacity(horizon);
    let mut forecasts = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let y: Vec<u64> = (0..k)
            .map(|j| {
                let d = if params.alpha[j] == T::zero() {
                    CountDistribution::poisson(mu[j])
                } else {
                    CountDistribution::negative_binomial(mu[j], params.alpha[j])
                }?;
                Ok(d.sample_one(&mut rngs[j]))
            })
            .collect::<Result<_>>()?;
        let y_t: Vec<T> = y.iter().map(|&c| T::from_u64(c).unwrap()).collect();
        let next_mu = step_mu(params, &mu, &y_t)?;
        mus.push(mu.clone());
        counts.push(y);
        forecasts.push(
            next_mu
                .iter()
                .zip(&params.alpha)
                .map(|(&m, &a)| (m, a))
                .collect(),
        );
        mu = next_mu;
    }
    Ok(SimulatedPanel {
        counts,
        mus,
        forecasts,
    })
}

/// Average inter-demand interval: series length over the number of non-zero
/// entries. Values above 1.32 mark an intermittent series.
pub fn adi<T: Scalar>(series: &[u64]) -> Result<T> {
    let nonzero = series.iter().filter(|&&x| x > 0).count();
    if nonzero == 0 {
        return Err(Error::AllZeroSeries);
    }
    Ok(T::from_usize(series.len()).unwrap() / T::from_usize(nonzero).unwrap())
}

/// Run a univariate score-driven recursion on the aggregated bottom counts,
/// returning the NB(mu, alpha) base forecast for each step's successor.
pub fn aggregate_forecast<T: Scalar>(
    bottom_counts: &[Vec<u64>],
    upper_params: &ScoreDrivenParams<T>,
) -> Result<Vec<(T, T)>> {
    if upper_params.k() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: upper_params.k(),
        });
    }
    let mut mu = upper_params.mu0.clone();
    let mut out = Vec::with_capacity(bottom_counts.len());
    for row in bottom_counts {
        let agg: u64 = row.iter().sum();
        let y = [T::from_u64(agg).unwrap()];
        let next = step_mu(upper_params, &mu, &y)?;
        out.push((next[0], upper_params.alpha[0]));
        mu = next;
    }
    Ok(out)
}
