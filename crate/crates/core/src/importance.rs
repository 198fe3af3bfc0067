//! Reconciliation by conditioning via importance sampling: draw from the
//! bottom base forecast, weight each draw by the upper forecast evaluated at
//! its aggregate, and resample with replacement into an unweighted coherent
//! sample.

use nalgebra::DMatrix;
use rand::Rng;

use crate::distributions::{stream_rng, BlockForecast, HierForecast};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::scalar::Scalar;
use crate::scoring::empirical_quantile;

/// Resampling scheme for turning weighted draws into an unweighted sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    /// Sample indices with replacement, proportional to the weights.
    #[default]
    Multinomial,
    /// Systematic (stratified) resampling; lower variance but not the
    /// literal with-replacement scheme, so off by default.
    Systematic,
}

/// Unweighted coherent samples over the full hierarchy, upper columns first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconciledSamples<T: Scalar> {
    full: DMatrix<T>,
    n_upper: usize,
    /// Effective sample size of the pre-resampling weights, in (0, N].
    pub ess: T,
    pub weight_sum_zero: bool,
    pub n_draws: usize,
    pub seed: u64,
}

/// Per-variable summary of a sample column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats<T> {
    pub mean: T,
    pub variance: T,
    pub median: T,
}

impl<T: Scalar> ReconciledSamples<T> {
    /// Full N x n sample matrix (upper columns first).
    pub fn full(&self) -> &DMatrix<T> {
        &self.full
    }

    pub fn n_upper(&self) -> usize {
        self.n_upper
    }

    pub fn n_vars(&self) -> usize {
        self.full.ncols()
    }

    /// One column of samples.
    pub fn column(&self, var: usize) -> Vec<T> {
        self.full.column(var).iter().copied().collect()
    }

    /// Bottom block as an N x m matrix.
    pub fn bottom(&self) -> DMatrix<T> {
        let m = self.full.ncols() - self.n_upper;
        self.full.columns(self.n_upper, m).into_owned()
    }

    /// True when the ESS fell below 1% of N, the degeneracy regime in which
    /// importance sampling quality is poor.
    pub fn ess_degenerate(&self) -> bool {
        self.ess < T::from_f64_c(0.01) * T::from_usize(self.n_draws).unwrap()
    }

    /// Empirical mean/variance/median for every variable.
    pub fn stats(&self) -> Result<Vec<SeriesStats<T>>> {
        if self.full.nrows() == 0 {
            return Err(Error::EmptySamples);
        }
        (0..self.n_vars())
            .map(|v| {
                let col = self.column(v);
                let n = T::from_usize(col.len()).unwrap();
                let mean = col.iter().copied().fold(T::zero(), |a, b| a + b) / n;
                let variance = col
                    .iter()
                    .map(|&x| (x - mean) * (x - mean))
                    .fold(T::zero(), |a, b| a + b)
                    / n;
                let median = self.quantile(v, T::from_f64_c(0.5))?;
                Ok(SeriesStats {
                    mean,
                    variance,
                    median,
                })
            })
            .collect()
    }

    /// Inverse empirical CDF quantile of one variable (lower value at ties).
    pub fn quantile(&self, var: usize, q: T) -> Result<T> {
        let mut col = self.column(var);
        if col.is_empty() {
            return Err(Error::EmptySamples);
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(empirical_quantile(&col, q))
    }
}

fn single_upper(h: &Hierarchy) -> Result<()> {
    if h.n_upper() != 1 {
        return Err(Error::MultipleUppers(h.n_upper()));
    }
    Ok(())
}

/// Draw the N bottom samples (stream j+1 for bottom variable j) as scalars,
/// plus the integer aggregate when the block is discrete.
fn draw_bottom<T: Scalar>(
    bottom: &BlockForecast<T>,
    h: &Hierarchy,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<T>, Vec<T>)> {
    let m = h.m();
    match bottom {
        BlockForecast::Counts(dists) => {
            let mut counts = vec![vec![0u64; n]; m];
            for (j, d) in dists.iter().enumerate() {
                let mut rng = stream_rng(seed, 1 + j as u64);
                counts[j] = d.sample_n(&mut rng, n);
            }
            let mat = DMatrix::from_fn(n, m, |i, j| T::from_u64(counts[j][i]).unwrap());
            let sums: Vec<T> = (0..n)
                .map(|i| {
                    let b: Vec<u64> = (0..m).map(|j| counts[j][i]).collect();
                    T::from_u64(h.aggregate(&b).unwrap()[0]).unwrap()
                })
                .collect();
            Ok((mat, sums))
        }
        BlockForecast::Gaussian(g) => {
            if g.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: g.dim(),
                });
            }
            let mut rng = stream_rng(seed, 1);
            let mat = g.sample_n(&mut rng, n)?;
            let sums: Vec<T> = (0..n)
                .map(|i| {
                    let row: Vec<T> = mat.row(i).iter().copied().collect();
                    h.aggregate(&row).unwrap()[0]
                })
                .collect();
            Ok((mat, sums))
        }
    }
}

/// Importance-sampling reconciliation for a single-upper hierarchy with
/// independent upper and bottom base forecasts. Deterministic given `seed`.
pub fn reconcile_is<T: Scalar>(
    h: &Hierarchy,
    base: &HierForecast<T>,
    n_draws: usize,
    seed: u64,
) -> Result<ReconciledSamples<T>> {
    reconcile_is_with(h, base, n_draws, seed, Resampling::Multinomial)
}

pub fn reconcile_is_with<T: Scalar>(
    h: &Hierarchy,
    base: &HierForecast<T>,
    n_draws: usize,
    seed: u64,
    scheme: Resampling,
) -> Result<ReconciledSamples<T>> {
    single_upper(h)?;
    base.validate_against(h)?;
    if !base.independent {
        return Err(Error::DependentBlocks);
    }
    if n_draws < 1 {
        return Err(Error::InsufficientSamples(1));
    }

    let (bottom, sums) = draw_bottom(&base.bottom, h, n_draws, seed)?;

    // log-space weights with max subtraction before exponentiation
    let ln_w: Vec<T> = match &base.upper {
        BlockForecast::Counts(dists) => sums
            .iter()
            .map(|&s| dists[0].ln_pmf(s.to_f64_c().round() as i64))
            .collect(),
        BlockForecast::Gaussian(g) => sums
            .iter()
            .map(|&s| g.ln_pdf(&[s]))
            .collect::<Result<Vec<_>>>()?,
    };
    let max_ln = ln_w
        .iter()
        .copied()
        .fold(T::neg_infinity(), num_traits::Float::max);
    if !num_traits::Float::is_finite(max_ln) {
        return Err(Error::AllWeightsZero);
    }
    let w: Vec<T> = ln_w
        .iter()
        .map(|&lw| num_traits::Float::exp(lw - max_ln))
        .collect();
    let total: T = w.iter().copied().fold(T::zero(), |a, b| a + b);
    if total <= T::zero() {
        return Err(Error::AllWeightsZero);
    }
    let sum_sq: T = w.iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b);
    let ess = total * total / sum_sq;

    // cumulative normalized weights for index resampling
    let mut cum = Vec::with_capacity(n_draws);
    let mut acc = T::zero();
    for &wi in &w {
        acc += wi / total;
        cum.push(acc);
    }
    *cum.last_mut().unwrap() = T::one();

    let mut rng = stream_rng(seed, 0);
    let indices: Vec<usize> = match scheme {
        Resampling::Multinomial => (0..n_draws)
            .map(|_| {
                let u = T::from_f64_c(rng.gen::<f64>());
                cum.partition_point(|&c| c < u).min(n_draws - 1)
            })
            .collect(),
        Resampling::Systematic => {
            let n_t = T::from_usize(n_draws).unwrap();
            let u0 = T::from_f64_c(rng.gen::<f64>()) / n_t;
            let mut idx = 0usize;
            (0..n_draws)
                .map(|i| {
                    let target = u0 + T::from_usize(i).unwrap() / n_t;
                    while idx < n_draws - 1 && cum[idx] < target {
                        idx += 1;
                    }
                    idx
                })
                .collect()
        }
    };

    let full = DMatrix::from_fn(n_draws, h.n(), |i, col| {
        let src = indices[i];
        if col == 0 {
            sums[src]
        } else {
            bottom[(src, col - 1)]
        }
    });

    Ok(ReconciledSamples {
        full,
        n_upper: 1,
        ess,
        weight_sum_zero: false,
        n_draws,
        seed,
    })
}

/// Monte-Carlo estimate of the coherence probability P(U = A B) together
/// with its binomial standard error. Discrete base forecasts only.
pub fn estimate_pc<T: Scalar>(
    h: &Hierarchy,
    base: &HierForecast<T>,
    n_draws: usize,
    seed: u64,
) -> Result<(T, T)> {
    single_upper(h)?;
    base.validate_against(h)?;
    if !base.independent {
        return Err(Error::DependentBlocks);
    }
    let (BlockForecast::Counts(bottom), BlockForecast::Counts(upper)) =
        (&base.bottom, &base.upper)
    else {
        return Err(Error::ContinuousUnsupported);
    };
    let m = h.m();
    let mut samples = vec![vec![0u64; n_draws]; m];
    for (j, d) in bottom.iter().enumerate() {
        let mut rng = stream_rng(seed, 1 + j as u64);
        samples[j] = d.sample_n(&mut rng, n_draws);
    }
    let mut rng = stream_rng(seed, 1 + m as u64);
    let upper_draws = upper[0].sample_n(&mut rng, n_draws);
    let mut hits = 0usize;
    for i in 0..n_draws {
        let b: Vec<u64> = (0..m).map(|j| samples[j][i]).collect();
        if h.aggregate(&b)?[0] == upper_draws[i] {
            hits += 1;
        }
    }
    let n = T::from_usize(n_draws).unwrap();
    let p = T::from_usize(hits).unwrap() / n;
    let se = num_traits::Float::sqrt(p * (T::one() - p) / n);
    Ok((p, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::CountDistribution;

    fn minimal() -> Hierarchy {
        Hierarchy::new(
            vec![vec![1, 1]],
            vec!["U".into(), "B1".into(), "B2".into()],
        )
        .unwrap()
    }

    fn poisson_forecast(l1: f64, l2: f64, lu: f64) -> HierForecast<f64> {
        HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::poisson(lu).unwrap()]),
            BlockForecast::Counts(vec![
                CountDistribution::poisson(l1).unwrap(),
                CountDistribution::poisson(l2).unwrap(),
            ]),
            true,
        )
    }

    #[test]
    fn poisson_table_values() {
        let h = minimal();
        let base = poisson_forecast(0.5, 0.8, 6.0);
        let rec = reconcile_is(&h, &base, 100_000, 42).unwrap();
        let stats = rec.stats().unwrap();
        // upper first, then bottoms
        assert!((stats[1].mean - 0.97).abs() < 0.05, "{:?}", stats[1]);
        assert!((stats[2].mean - 1.56).abs() < 0.05, "{:?}", stats[2]);
        assert!((stats[0].mean - 2.53).abs() < 0.05, "{:?}", stats[0]);
        assert!((stats[1].variance - 0.81).abs() < 0.10);
        assert!((stats[2].variance - 1.13).abs() < 0.10);
        assert!((stats[0].variance - 1.41).abs() < 0.10);
    }

    #[test]
    fn strengthening_regime_means() {
        let h = minimal();
        let base = poisson_forecast(0.5, 0.8, 1.5);
        let rec = reconcile_is(&h, &base, 100_000, 7).unwrap();
        let stats = rec.stats().unwrap();
        assert!((stats[1].mean - 0.43).abs() < 0.05);
        assert!((stats[2].mean - 0.68).abs() < 0.05);
        assert!((stats[0].mean - 1.11).abs() < 0.05);
    }

    #[test]
    fn point_mass_upper_filters_support() {
        let h = minimal();
        let base = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::point_mass(2)]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(0.5).unwrap(),
                CountDistribution::bernoulli(0.5).unwrap(),
            ]),
            true,
        );
        let rec = reconcile_is(&h, &base, 2000, 3).unwrap();
        for i in 0..rec.full().nrows() {
            assert_eq!(rec.full()[(i, 1)], 1.0);
            assert_eq!(rec.full()[(i, 2)], 1.0);
            assert_eq!(rec.full()[(i, 0)], 2.0);
        }
    }

    #[test]
    fn all_rows_coherent() {
        let h = minimal();
        let base = poisson_forecast(0.5, 0.8, 1.5);
        let rec = reconcile_is(&h, &base, 10_000, 5).unwrap();
        for i in 0..rec.full().nrows() {
            let row: Vec<f64> = rec.full().row(i).iter().copied().collect();
            assert!(h.is_coherent(&row, 0.0).unwrap());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let h = minimal();
        let base = poisson_forecast(0.5, 0.8, 1.5);
        let a = reconcile_is(&h, &base, 5000, 99).unwrap();
        let b = reconcile_is(&h, &base, 5000, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_supports_fail() {
        let h = minimal();
        let base = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::point_mass(5)]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(0.5).unwrap(),
                CountDistribution::bernoulli(0.5).unwrap(),
            ]),
            true,
        );
        assert!(matches!(
            reconcile_is(&h, &base, 2000, 3),
            Err(Error::AllWeightsZero)
        ));
    }

    #[test]
    fn pc_estimates() {
        let h = minimal();
        let bern = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::tabulated(
                vec![0, 1, 2],
                vec![0.1, 0.2, 0.7],
            )
            .unwrap()]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(0.3).unwrap(),
                CountDistribution::bernoulli(0.2).unwrap(),
            ]),
            true,
        );
        let (p, se) = estimate_pc(&h, &bern, 200_000, 21).unwrap();
        assert!((p - 0.174f64).abs() < 3.0 * se, "p={p} se={se}");

        let pois = poisson_forecast(0.5, 0.8, 6.0);
        let (p, se) = estimate_pc(&h, &pois, 200_000, 22).unwrap();
        assert!((p - 0.03f64).abs() < 3.0 * se + 0.005, "p={p} se={se}");
    }

    #[test]
    fn pc_is_one_for_fully_coherent_construction() {
        let h = minimal();
        let base = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::point_mass(2)]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(1.0).unwrap(),
                CountDistribution::bernoulli(1.0).unwrap(),
            ]),
            true,
        );
        let (p, _) = estimate_pc(&h, &base, 10_000, 1).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn stats_of_constant_samples() {
        let h = minimal();
        let base = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::<f64>::point_mass(2)]),
            BlockForecast::Counts(vec![
                CountDistribution::point_mass(1),
                CountDistribution::point_mass(1),
            ]),
            true,
        );
        let rec = reconcile_is(&h, &base, 1000, 0).unwrap();
        let stats = rec.stats().unwrap();
        assert_eq!(stats[0].mean, 2.0);
        assert_eq!(stats[1].mean, 1.0);
        assert_eq!(stats[0].variance, 0.0);
        assert_eq!(rec.ess, 1000.0);
    }

    #[test]
    fn bernoulli_reconciled_variances_match_table() {
        let h = minimal();
        let base = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::tabulated(
                vec![0, 1, 2],
                vec![0.1f64, 0.2, 0.7],
            )
            .unwrap()]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(0.3).unwrap(),
                CountDistribution::bernoulli(0.2).unwrap(),
            ]),
            true,
        );
        let rec = reconcile_is(&h, &base, 200_000, 13).unwrap();
        let stats = rec.stats().unwrap();
        assert!((stats[1].variance - 0.25).abs() < 0.01);
        assert!((stats[2].variance - 0.24).abs() < 0.01);
    }

    #[test]
    fn lower_median_convention() {
        let h = minimal();
        let base = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::tabulated(
                vec![0, 1, 2, 3, 4],
                vec![0.2; 5],
            )
            .unwrap()]),
            BlockForecast::Counts(vec![
                CountDistribution::point_mass(0),
                CountDistribution::point_mass(0),
            ]),
            true,
        );
        // only coherent point is sum 0
        let rec = reconcile_is(&h, &base, 1000, 2).unwrap();
        assert_eq!(rec.quantile(0, 0.5).unwrap(), 0.0);
    }
}
