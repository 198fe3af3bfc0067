//! Base-forecast distributions: count families (Poisson, negative binomial in
//! the mean/dispersion parameterization, Bernoulli, tabulated pmfs) and the
//! multivariate Gaussian, each with pmf/density evaluation, sampling, and
//! exact moments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson as PoissonSampler};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::scalar::Scalar;

/// Hard cap on enumerated count supports. Hitting it sets the truncation
/// flag instead of looping forever on heavy-tailed parameters.
pub const SUPPORT_CAP: u64 = 10_000;

/// Seed-derivable RNG stream. Stream `k` of the same master seed is
/// independent of stream `j != k`, so per-variable sampling order does not
/// change results when parallelized.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lanczos approximation of ln Gamma(x) for x > 0.
#[allow(clippy::excessive_precision)]
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::from_f64_c(0.5);
    let x = x - T::one();
    let mut a = T::from_f64_c(COEF[0]);
    let t = x + T::from_f64_c(G + 0.5);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += T::from_f64_c(c) / (x + T::from_usize(i).unwrap());
    }
    T::from_f64_c((2.0 * std::f64::consts::PI).sqrt().ln())
        + (x + half) * num_traits::Float::ln(t)
        - t
        + num_traits::Float::ln(a)
}

/// Discrete base-forecast family on the non-negative integers.
#[derive(Debug, Clone, PartialEq)]
pub enum CountDistribution<T: Scalar> {
    Poisson { lambda: T },
    /// Negative binomial with mean `mu` and dispersion `alpha`:
    /// Var = mu + alpha * mu^2. `alpha = 0` degenerates to Poisson(mu).
    NegativeBinomial { mu: T, alpha: T },
    Bernoulli { p: T },
    /// Finite pmf on the given integer support.
    Tabulated { support: Vec<u64>, probs: Vec<T> },
}

impl<T: Scalar> CountDistribution<T> {
    pub fn poisson(lambda: T) -> Result<Self> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(lambda > T::zero()) || !num_traits::Float::is_finite(lambda) {
            return Err(Error::InvalidParameter(format!(
                "Poisson rate must be positive, got {lambda:?}"
            )));
        }
        Ok(Self::Poisson { lambda })
    }

    pub fn negative_binomial(mu: T, alpha: T) -> Result<Self> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(mu > T::zero()) || !num_traits::Float::is_finite(mu) {
            return Err(Error::InvalidParameter(format!(
                "NB mean must be positive, got {mu:?}"
            )));
        }
        if alpha < T::zero() || !num_traits::Float::is_finite(alpha) {
            return Err(Error::InvalidParameter(format!(
                "NB dispersion must be non-negative, got {alpha:?}"
            )));
        }
        Ok(Self::NegativeBinomial { mu, alpha })
    }

    pub fn bernoulli(p: T) -> Result<Self> {
        if p < T::zero() || p > T::one() {
            return Err(Error::InvalidParameter(format!(
                "Bernoulli probability must lie in [0,1], got {p:?}"
            )));
        }
        Ok(Self::Bernoulli { p })
    }

    pub fn tabulated(support: Vec<u64>, probs: Vec<T>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidParameter(
                "tabulated pmf needs matching non-empty support and probs".into(),
            ));
        }
        if probs.iter().any(|&p| p < T::zero()) {
            return Err(Error::InvalidParameter(
                "tabulated pmf has negative probability".into(),
            ));
        }
        let total: T = probs.iter().copied().fold(T::zero(), |a, b| a + b);
        if num_traits::Float::abs(total - T::one()) > T::from_f64_c(1e-12) {
            return Err(Error::InvalidParameter(format!(
                "tabulated pmf must sum to 1, got {:?}",
                total.to_f64_c()
            )));
        }
        let mut pairs: Vec<(u64, T)> = support.into_iter().zip(probs).collect();
        pairs.sort_by_key(|&(k, _)| k);
        pairs.dedup_by(|a, b| {
            if a.0 == b.0 {
                b.1 += a.1;
                true
            } else {
                false
            }
        });
        let (support, probs) = pairs.into_iter().unzip();
        Ok(Self::Tabulated { support, probs })
    }

    /// Point mass at `k`.
    pub fn point_mass(k: u64) -> Self {
        Self::Tabulated {
            support: vec![k],
            probs: vec![T::one()],
        }
    }

    /// P(X = k). Returns 0 for k outside the support (negative k included).
    pub fn pmf(&self, k: i64) -> T {
        if k < 0 {
            return T::zero();
        }
        num_traits::Float::exp(self.ln_pmf(k))
    }

    /// ln P(X = k); negative infinity outside the support.
    pub fn ln_pmf(&self, k: i64) -> T {
        if k < 0 {
            return T::neg_infinity();
        }
        let kt = T::from_i64(k).unwrap();
        match self {
            Self::Poisson { lambda } => {
                kt * num_traits::Float::ln(*lambda) - *lambda - ln_gamma(kt + T::one())
            }
            Self::NegativeBinomial { mu, alpha } => {
                if *alpha == T::zero() {
                    return kt * num_traits::Float::ln(*mu) - *mu - ln_gamma(kt + T::one());
                }
                let r = T::one() / *alpha;
                // success probability of the (r, p) form: p = r / (r + mu)
                let p = r / (r + *mu);
                ln_gamma(kt + r) - ln_gamma(r) - ln_gamma(kt + T::one())
                    + r * num_traits::Float::ln(p)
                    + kt * num_traits::Float::ln(T::one() - p)
            }
            Self::Bernoulli { p } => match k {
                0 => num_traits::Float::ln(T::one() - *p),
                1 => num_traits::Float::ln(*p),
                _ => T::neg_infinity(),
            },
            Self::Tabulated { support, probs } => match support.binary_search(&(k as u64)) {
                Ok(i) => num_traits::Float::ln(probs[i]),
                Err(_) => T::neg_infinity(),
            },
        }
    }

    /// Exact (mean, variance).
    pub fn mean_var(&self) -> (T, T) {
        match self {
            Self::Poisson { lambda } => (*lambda, *lambda),
            Self::NegativeBinomial { mu, alpha } => (*mu, *mu + *alpha * *mu * *mu),
            Self::Bernoulli { p } => (*p, *p * (T::one() - *p)),
            Self::Tabulated { support, probs } => {
                let mut mean = T::zero();
                let mut m2 = T::zero();
                for (&k, &p) in support.iter().zip(probs) {
                    let kt = T::from_u64(k).unwrap();
                    mean += kt * p;
                    m2 += kt * kt * p;
                }
                (mean, m2 - mean * mean)
            }
        }
    }

    /// Smallest K such that P(X > K) < tail_tol, together with the actual
    /// tail mass left beyond K. Capped at [`SUPPORT_CAP`].
    pub fn support_bound(&self, tail_tol: T) -> (u64, T) {
        match self {
            Self::Bernoulli { .. } => (1, T::zero()),
            Self::Tabulated { support, .. } => (*support.last().unwrap(), T::zero()),
            _ => {
                let mut cum = T::zero();
                let mut k = 0u64;
                loop {
                    cum += self.pmf(k as i64);
                    if T::one() - cum < tail_tol || k >= SUPPORT_CAP {
                        return (k, num_traits::Float::max(T::one() - cum, T::zero()));
                    }
                    k += 1;
                }
            }
        }
    }

    /// Inverse-CDF quantile on the count support (lower value at ties).
    pub fn quantile(&self, q: T) -> u64 {
        let (bound, _) = self.support_bound(T::from_f64_c(1e-12));
        let mut cum = T::zero();
        match self {
            Self::Tabulated { support, probs } => {
                for (&k, &p) in support.iter().zip(probs) {
                    cum += p;
                    if cum >= q {
                        return k;
                    }
                }
                *support.last().unwrap()
            }
            _ => {
                for k in 0..=bound {
                    cum += self.pmf(k as i64);
                    if cum >= q {
                        return k;
                    }
                }
                bound
            }
        }
    }

    /// Draw `n` i.i.d. counts.
    pub fn sample_n<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            Self::Poisson { lambda } => sample_poisson(rng, lambda.to_f64_c()),
            Self::NegativeBinomial { mu, alpha } => {
                let (mu, alpha) = (mu.to_f64_c(), alpha.to_f64_c());
                if alpha == 0.0 {
                    return sample_poisson(rng, mu);
                }
                // gamma-Poisson mixture: rate ~ Gamma(1/alpha, scale alpha*mu)
                let r = 1.0 / alpha;
                let gamma = Gamma::new(r, mu / r).expect("validated NB parameters");
                let rate = gamma.sample(rng);
                sample_poisson(rng, rate)
            }
            Self::Bernoulli { p } => {
                if rng.gen::<f64>() < p.to_f64_c() {
                    1
                } else {
                    0
                }
            }
            Self::Tabulated { support, probs } => {
                let u = T::from_f64_c(rng.gen::<f64>());
                let mut cum = T::zero();
                for (&k, &p) in support.iter().zip(probs) {
                    cum += p;
                    if u < cum {
                        return k;
                    }
                }
                *support.last().unwrap()
            }
        }
    }
}

fn sample_poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    PoissonSampler::new(lambda).expect("positive rate").sample(rng) as u64
}

/// Multivariate Gaussian with dense mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MvGaussian<T: Scalar> {
    mean: DVector<T>,
    cov: DMatrix<T>,
}

impl<T: Scalar> MvGaussian<T> {
    /// Validates symmetry (relative inf-norm 1e-10) and positive
    /// semi-definiteness (eigenvalues >= -1e-10 * trace).
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let scale = cov
            .iter()
            .fold(T::zero(), |a, &x| num_traits::Float::max(a, num_traits::Float::abs(x)));
        let tol = T::from_f64_c(1e-10) * num_traits::Float::max(scale, T::one());
        for i in 0..d {
            for j in (i + 1)..d {
                if num_traits::Float::abs(cov[(i, j)] - cov[(j, i)]) > tol {
                    return Err(Error::InvalidParameter(
                        "covariance matrix is not symmetric".into(),
                    ));
                }
            }
        }
        let sym = (&cov + cov.transpose()) * T::from_f64_c(0.5);
        let eig = sym.clone().symmetric_eigen();
        let trace = sym.trace();
        let floor = -T::from_f64_c(1e-10) * num_traits::Float::max(trace, T::one());
        if eig.eigenvalues.iter().any(|&l| l < floor) {
            return Err(Error::FactorizationFailure(
                "covariance has a negative eigenvalue beyond tolerance".into(),
            ));
        }
        Ok(Self { mean, cov: sym })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Symmetric PSD square-root factor L with L L^T = cov (eigenvalue
    /// factorization, tiny negatives clipped to zero).
    pub fn factor(&self) -> Result<DMatrix<T>> {
        let eig = self.cov.clone().symmetric_eigen();
        let mut l = eig.eigenvectors.clone();
        for j in 0..l.ncols() {
            let s = num_traits::Float::sqrt(num_traits::Float::max(
                eig.eigenvalues[j],
                T::zero(),
            ));
            for i in 0..l.nrows() {
                l[(i, j)] *= s;
            }
        }
        Ok(l)
    }

    /// Draw `n` samples; one row per draw.
    pub fn sample_n<R: Rng>(&self, rng: &mut R, n: usize) -> Result<DMatrix<T>> {
        let d = self.dim();
        let l = self.factor()?;
        let mut out = DMatrix::zeros(n, d);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            for k in 0..d {
                z[k] = T::from_f64_c(rng.sample::<f64, _>(rand_distr::StandardNormal));
            }
            let x = &self.mean + &l * &z;
            out.row_mut(i).copy_from(&x.transpose());
        }
        Ok(out)
    }

    /// Log density; requires a positive-definite covariance.
    pub fn ln_pdf(&self, x: &[T]) -> Result<T> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let chol = nalgebra::Cholesky::new(self.cov.clone()).ok_or_else(|| {
            Error::FactorizationFailure("covariance is not positive definite".into())
        })?;
        let diff = DVector::from_row_slice(x) - &self.mean;
        let solved = chol.solve(&diff);
        let maha = diff.dot(&solved);
        let mut ln_det = T::zero();
        for i in 0..d {
            ln_det += num_traits::Float::ln(chol.l_dirty()[(i, i)]);
        }
        let two_pi = T::from_f64_c(2.0 * std::f64::consts::PI);
        let half = T::from_f64_c(0.5);
        Ok(-half * maha
            - ln_det
            - half * T::from_usize(d).unwrap() * num_traits::Float::ln(two_pi))
    }
}

/// One block (upper or bottom) of a hierarchical base forecast.
#[derive(Debug, Clone)]
pub enum BlockForecast<T: Scalar> {
    Counts(Vec<CountDistribution<T>>),
    Gaussian(MvGaussian<T>),
}

impl<T: Scalar> BlockForecast<T> {
    pub fn len(&self) -> usize {
        match self {
            Self::Counts(v) => v.len(),
            Self::Gaussian(g) => g.dim(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Counts(_))
    }
}

/// Base forecasts for a whole hierarchy, split by block.
#[derive(Debug, Clone)]
pub struct HierForecast<T: Scalar> {
    pub upper: BlockForecast<T>,
    pub bottom: BlockForecast<T>,
    /// Whether the upper and bottom blocks are probabilistically independent.
    pub independent: bool,
}

impl<T: Scalar> HierForecast<T> {
    pub fn new(upper: BlockForecast<T>, bottom: BlockForecast<T>, independent: bool) -> Self {
        Self {
            upper,
            bottom,
            independent,
        }
    }

    pub fn validate_against(&self, h: &Hierarchy) -> Result<()> {
        if self.upper.len() != h.n_upper() {
            return Err(Error::DimensionMismatch {
                expected: h.n_upper(),
                got: self.upper.len(),
            });
        }
        if self.bottom.len() != h.m() {
            return Err(Error::DimensionMismatch {
                expected: h.m(),
                got: self.bottom.len(),
            });
        }
        Ok(())
    }
}
