//! Probabilistic and point-forecast evaluation: energy score, interval
//! score, squared/absolute error, the symmetric skill score, and interval
//! diagnostics, all sample-based.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::scalar::Scalar;

/// Pairing used by the second term of the energy-score estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EsPairing {
    /// Disjoint consecutive pairs (s_0, s_1), (s_2, s_3), ...
    #[default]
    Disjoint,
    /// All N^2 ordered pairs; O(N^2), for cross-checking only.
    AllPairs,
}

fn norm_pow<T: Scalar>(diff: impl Iterator<Item = T>, beta: T) -> T {
    let sq = diff.map(|d| d * d).fold(T::zero(), |a, b| a + b);
    // ||.||^beta = (||.||^2)^(beta/2)
    num_traits::Float::powf(sq, beta * T::from_f64_c(0.5))
}

/// Sampling estimator of the energy score
/// ES = E||y - s||^beta - 1/2 E||s - s'||^beta over joint forecast draws
/// (one row per draw). Deterministic given the sample order.
pub fn energy_score<T: Scalar>(samples: &DMatrix<T>, y: &[T], beta: T) -> Result<T> {
    energy_score_with(samples, y, beta, EsPairing::Disjoint)
}

pub fn energy_score_with<T: Scalar>(
    samples: &DMatrix<T>,
    y: &[T],
    beta: T,
    pairing: EsPairing,
) -> Result<T> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples(2));
    }
    if samples.ncols() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.ncols(),
            got: y.len(),
        });
    }
    if beta <= T::zero() || beta > T::from_f64_c(2.0) {
        return Err(Error::InvalidParameter(
            "energy score exponent must lie in (0, 2]".into(),
        ));
    }
    let nt = T::from_usize(n).unwrap();
    let term1 = (0..n)
        .map(|i| norm_pow(samples.row(i).iter().zip(y).map(|(&s, &yi)| s - yi), beta))
        .fold(T::zero(), |a, b| a + b)
        / nt;
    let half = T::from_f64_c(0.5);
    let term2 = match pairing {
        EsPairing::Disjoint => {
            let pairs = n / 2;
            let sum = (0..pairs)
                .map(|k| {
                    norm_pow(
                        samples
                            .row(2 * k)
                            .iter()
                            .zip(samples.row(2 * k + 1).iter())
                            .map(|(&a, &b)| a - b),
                        beta,
                    )
                })
                .fold(T::zero(), |a, b| a + b);
            half * sum / T::from_usize(pairs).unwrap()
        }
        EsPairing::AllPairs => {
            let mut sum = T::zero();
            for i in 0..n {
                for j in 0..n {
                    sum += norm_pow(
                        samples
                            .row(i)
                            .iter()
                            .zip(samples.row(j).iter())
                            .map(|(&a, &b)| a - b),
                        beta,
                    );
                }
            }
            half * sum / (nt * nt)
        }
    };
    Ok(term1 - term2)
}

/// Interval score for a (1 - alpha) prediction interval [l, u]:
/// width plus 2/alpha penalties on the violated side.
pub fn interval_score<T: Scalar>(l: T, u: T, y: T, alpha: T) -> Result<T> {
    if l > u {
        return Err(Error::InvertedInterval);
    }
    if alpha <= T::zero() || alpha >= T::one() {
        return Err(Error::InvalidParameter(
            "interval level alpha must lie in (0,1)".into(),
        ));
    }
    let two_over = T::from_f64_c(2.0) / alpha;
    let mut score = u - l;
    if y < l {
        score += two_over * (l - y);
    }
    if y > u {
        score += two_over * (y - u);
    }
    Ok(score)
}

/// Point-error summary of a predictive sample against an observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointErrors<T> {
    /// Squared error of the SE-optimal point forecast (the mean).
    pub se: T,
    /// Absolute error of the AE-optimal point forecast (the lower median).
    pub ae: T,
    pub mean: T,
    pub median: T,
}

/// SE = (y - mean)^2 and AE = |y - median| with the lower-median convention.
pub fn point_errors<T: Scalar>(samples: &[T], y: T) -> Result<PointErrors<T>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = T::from_usize(samples.len()).unwrap();
    let mean = samples.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = empirical_quantile(&sorted, T::from_f64_c(0.5));
    Ok(PointErrors {
        se: (y - mean) * (y - mean),
        ae: num_traits::Float::abs(y - median),
        mean,
        median,
    })
}

/// Symmetric skill score (base - reconc) / ((base + reconc) / 2), positive
/// when the reconciled forecast improves on the base; 0/0 maps to 0.
pub fn skill_score<T: Scalar>(metric_base: T, metric_reconc: T) -> Result<T> {
    if metric_base < T::zero() || metric_reconc < T::zero() {
        return Err(Error::NegativeMetric);
    }
    let denom = (metric_base + metric_reconc) * T::from_f64_c(0.5);
    if denom == T::zero() {
        return Ok(T::zero());
    }
    Ok((metric_base - metric_reconc) / denom)
}

/// Inverse empirical CDF on an ascending-sorted slice: the q-quantile is the
/// smallest x with F(x) >= q (lower value at ties).
pub fn empirical_quantile<T: Scalar>(sorted: &[T], q: T) -> T {
    let n = sorted.len();
    let pos = num_traits::Float::ceil(q * T::from_usize(n).unwrap()).to_f64_c() as usize;
    sorted[pos.saturating_sub(1).min(n - 1)]
}

/// Central (1 - alpha) prediction interval from samples, where
/// `level` = 1 - alpha (e.g. 0.9 for a 90% interval).
pub fn interval_from_samples<T: Scalar>(samples: &[T], level: T) -> Result<(T, T)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if level <= T::zero() || level >= T::one() {
        return Err(Error::InvalidParameter(
            "interval level must lie in (0,1)".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let half_alpha = (T::one() - level) * T::from_f64_c(0.5);
    Ok((
        empirical_quantile(&sorted, half_alpha),
        empirical_quantile(&sorted, T::one() - half_alpha),
    ))
}

/// Coherent point forecast: per-variable lower medians of the bottom
/// samples, with upper entries aggregated from them. Returns the full
/// [upper; bottom] vector, coherent by construction.
pub fn coherent_point_forecast<T: Scalar>(
    h: &Hierarchy,
    bottom_samples: &DMatrix<T>,
) -> Result<Vec<T>> {
    if bottom_samples.nrows() == 0 {
        return Err(Error::EmptySamples);
    }
    if bottom_samples.ncols() != h.m() {
        return Err(Error::DimensionMismatch {
            expected: h.m(),
            got: bottom_samples.ncols(),
        });
    }
    let medians: Vec<T> = (0..h.m())
        .map(|j| {
            let mut col: Vec<T> = bottom_samples.column(j).iter().copied().collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            empirical_quantile(&col, T::from_f64_c(0.5))
        })
        .collect();
    let mut out = h.aggregate(&medians)?;
    out.extend(medians);
    Ok(out)
}
