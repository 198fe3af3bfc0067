//! Closed-form reconciliation of jointly Gaussian base forecasts by
//! conditioning on the aggregation constraints, plus the single-upper
//! convex-combination view of the reconciled upper mean.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::distributions::MvGaussian;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::scalar::Scalar;

/// Result of reconciling a joint Gaussian base forecast.
#[derive(Debug, Clone)]
pub struct GaussianReconciliation<T: Scalar> {
    pub bottom_mean: DVector<T>,
    pub bottom_cov: DMatrix<T>,
    pub upper_mean: DVector<T>,
    pub upper_cov: DMatrix<T>,
    /// Innovation covariance Q of the constraint residual U - A B.
    pub q: DMatrix<T>,
    /// Incoherence of the base means, A b_hat - u_hat.
    pub incoherence: DVector<T>,
}

impl<T: Scalar> GaussianReconciliation<T> {
    /// Reconciled joint Gaussian over the full hierarchy (upper block first).
    pub fn joint(&self, h: &Hierarchy) -> Result<MvGaussian<T>> {
        let a = h.a_matrix::<T>();
        let (k, m) = (h.n_upper(), h.m());
        let n = k + m;
        let mut mean = DVector::zeros(n);
        mean.rows_mut(0, k).copy_from(&self.upper_mean);
        mean.rows_mut(k, m).copy_from(&self.bottom_mean);
        let cross = &a * &self.bottom_cov; // cov(A B, B) = A Sigma_B
        let mut cov = DMatrix::zeros(n, n);
        cov.view_mut((0, 0), (k, k)).copy_from(&self.upper_cov);
        cov.view_mut((0, k), (k, m)).copy_from(&cross);
        cov.view_mut((k, 0), (m, k)).copy_from(&cross.transpose());
        cov.view_mut((k, k), (m, m)).copy_from(&self.bottom_cov);
        MvGaussian::new(mean, cov)
    }
}

#[allow(clippy::type_complexity)]
fn split_blocks<T: Scalar>(
    h: &Hierarchy,
    base: &MvGaussian<T>,
) -> Result<(DVector<T>, DVector<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>)> {
    let (k, m) = (h.n_upper(), h.m());
    if base.dim() != h.n() {
        return Err(Error::DimensionMismatch {
            expected: h.n(),
            got: base.dim(),
        });
    }
    let u_hat = base.mean().rows(0, k).into_owned();
    let b_hat = base.mean().rows(k, m).into_owned();
    let sigma_u = base.cov().view((0, 0), (k, k)).into_owned();
    let sigma_ub = base.cov().view((0, k), (k, m)).into_owned();
    let sigma_b = base.cov().view((k, k), (m, m)).into_owned();
    Ok((u_hat, b_hat, sigma_u, sigma_ub, sigma_b))
}

/// Clip eigenvalues in (-1e-9 * trace, 0) to zero; anything more negative is
/// a genuine breakdown of the input covariance.
fn psd_repair<T: Scalar>(mat: DMatrix<T>) -> Result<DMatrix<T>> {
    let sym = (&mat + mat.transpose()) * T::from_f64_c(0.5);
    let eig = sym.clone().symmetric_eigen();
    let scale = num_traits::Float::max(sym.trace(), T::one());
    let floor = -T::from_f64_c(1e-9) * scale;
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(T::infinity(), num_traits::Float::min);
    if min >= T::zero() {
        return Ok(sym);
    }
    if min < floor {
        return Err(Error::NumericalBreakdown);
    }
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = num_traits::Float::max(*v, T::zero());
    }
    let v = &eig.eigenvectors;
    let repaired = v * DMatrix::from_diagonal(&vals) * v.transpose();
    Ok((&repaired + repaired.transpose()) * T::from_f64_c(0.5))
}

/// Solver for Q^{-1} terms: Cholesky when Q is positive definite, otherwise
/// an eigenvalue pseudo-inverse so that an exactly-coherent degenerate base
/// forecast (Q singular, zero incoherence in the null directions) is still
/// reconciled instead of rejected.
enum QSolver<T: Scalar> {
    Chol(Cholesky<T, nalgebra::Dyn>),
    Pinv {
        vectors: DMatrix<T>,
        inv_values: Vec<T>,
    },
}

impl<T: Scalar> QSolver<T> {
    fn build(q: &DMatrix<T>, incoherence: &DVector<T>) -> Result<Self> {
        if let Some(chol) = Cholesky::new(q.clone()) {
            return Ok(Self::Chol(chol));
        }
        let eig = q.clone().symmetric_eigen();
        let max_eig = eig
            .eigenvalues
            .iter()
            .fold(T::zero(), |a, &l| num_traits::Float::max(a, num_traits::Float::abs(l)));
        let cut = T::from_f64_c(1e-12) * num_traits::Float::max(max_eig, T::one());
        let scale = T::one() + incoherence.norm();
        let mut inv_values = Vec::with_capacity(eig.eigenvalues.len());
        for (j, &l) in eig.eigenvalues.iter().enumerate() {
            if l > cut {
                inv_values.push(T::one() / l);
            } else {
                // null direction: the constraint residual is deterministic
                // there, so conditioning is defined only if it is zero
                let component = eig.eigenvectors.column(j).dot(incoherence);
                if num_traits::Float::abs(component) > T::from_f64_c(1e-8) * scale {
                    return Err(Error::SingularQ);
                }
                inv_values.push(T::zero());
            }
        }
        Ok(Self::Pinv {
            vectors: eig.eigenvectors,
            inv_values,
        })
    }

    fn solve(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        match self {
            Self::Chol(chol) => chol.solve(rhs),
            Self::Pinv {
                vectors,
                inv_values,
            } => {
                let mut proj = vectors.transpose() * rhs;
                for (j, &iv) in inv_values.iter().enumerate() {
                    for c in 0..proj.ncols() {
                        proj[(j, c)] *= iv;
                    }
                }
                vectors * proj
            }
        }
    }
}

/// Condition the joint Gaussian base forecast on u = A b. All Q^{-1} terms
/// are computed by solving against a factorization of Q.
pub fn reconcile_gaussian<T: Scalar>(
    h: &Hierarchy,
    base: &MvGaussian<T>,
) -> Result<GaussianReconciliation<T>> {
    let (u_hat, b_hat, sigma_u, sigma_ub, sigma_b) = split_blocks(h, base)?;
    let a = h.a_matrix::<T>();

    let d_b = sigma_ub.transpose() - &sigma_b * a.transpose(); // m x k
    let d_u = &sigma_u - &sigma_ub * a.transpose(); // k x k
    let q = &sigma_u - &sigma_ub * a.transpose() - &a * sigma_ub.transpose()
        + &a * &sigma_b * a.transpose();
    let q = (&q + q.transpose()) * T::from_f64_c(0.5);

    let incoherence = &a * &b_hat - &u_hat;
    let solver = QSolver::build(&q, &incoherence)?;

    let correction = solver.solve(&DMatrix::from_column_slice(
        incoherence.len(),
        1,
        incoherence.as_slice(),
    ));
    let correction = DVector::from_column_slice(correction.as_slice());
    let bottom_mean = &b_hat + &d_b * &correction;
    let upper_mean = &u_hat + &d_u * &correction;

    let bottom_cov = psd_repair(&sigma_b - &d_b * solver.solve(&d_b.transpose()))?;
    let upper_cov = psd_repair(&sigma_u - &d_u * solver.solve(&d_u.transpose()))?;

    Ok(GaussianReconciliation {
        bottom_mean,
        bottom_cov,
        upper_mean,
        upper_cov,
        q,
        incoherence,
    })
}

/// Convex-combination weights of the reconciled upper mean for a single
/// upper variable with block-independent base forecasts:
/// u_rec = w_base * u_hat + w_bu * (A b_hat).
///
/// Returns `(w_base, w_bu, bottom_up_var)`.
pub fn convex_weights_single_upper<T: Scalar>(
    h: &Hierarchy,
    base: &MvGaussian<T>,
) -> Result<(T, T, T)> {
    if h.n_upper() != 1 {
        return Err(Error::MultipleUppers(h.n_upper()));
    }
    let (u_hat, b_hat, sigma_u, sigma_ub, sigma_b) = split_blocks(h, base)?;
    let max_cross = sigma_ub
        .iter()
        .fold(T::zero(), |acc, &x| num_traits::Float::max(acc, num_traits::Float::abs(x)));
    if max_cross > T::from_f64_c(1e-12) {
        return Err(Error::CorrelatedBlocks);
    }
    let a = h.a_matrix::<T>();
    let var_u = sigma_u[(0, 0)];
    let var_bu = (&a * &sigma_b * a.transpose())[(0, 0)];
    let denom = var_u + var_bu;
    if denom == T::zero() {
        // both point masses: conditioning is defined only if already coherent
        let incoh = (&a * &b_hat)[0] - u_hat[0];
        if num_traits::Float::abs(incoh) > T::zero() {
            return Err(Error::DegenerateWeights);
        }
        let half = T::from_f64_c(0.5);
        return Ok((half, half, var_bu));
    }
    // complement rather than a second division, so the weights sum to one
    // exactly
    let w_base = var_bu / denom;
    Ok((w_base, T::one() - w_base, var_bu))
}

/// Probabilistic bottom-up: lift a bottom Gaussian to the full hierarchy
/// with mean S b_hat and covariance S Sigma_B S^T.
pub fn bottom_up_gaussian<T: Scalar>(
    h: &Hierarchy,
    bottom: &MvGaussian<T>,
) -> Result<MvGaussian<T>> {
    if bottom.dim() != h.m() {
        return Err(Error::DimensionMismatch {
            expected: h.m(),
            got: bottom.dim(),
        });
    }
    let s = h.summing_matrix::<T>();
    let mean = &s * bottom.mean();
    let cov = &s * bottom.cov() * s.transpose();
    MvGaussian::new(mean, (&cov + cov.transpose()) * T::from_f64_c(0.5))
}
