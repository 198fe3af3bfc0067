//! Exact reconciliation machinery for finite (or truncatable) discrete base
//! forecasts: enumeration of the conditioned bottom distribution, the
//! minimal-hierarchy Bernoulli closed form, exact coherence probability, and
//! the variance decomposition of the reconciled bottom marginals.

use itertools::Itertools;

use crate::distributions::{BlockForecast, CountDistribution, HierForecast};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::scalar::Scalar;

/// Enumeration is refused beyond this many bottom support points.
pub const MAX_ENUM_POINTS: usize = 100_000_000;

/// Explicit table of the reconciled bottom distribution, in lexicographic
/// support order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmfTable<T: Scalar> {
    /// Bottom support vectors, lexicographic.
    pub support: Vec<Vec<u64>>,
    /// Normalized reconciled probabilities, matching `support`.
    pub probs: Vec<T>,
    /// Pre-normalization mass: the coherence probability p_c up to
    /// truncation.
    pub pc: T,
    /// Rigorous bound on the bottom-support probability mass dropped by
    /// truncation.
    pub truncation: T,
}

impl<T: Scalar> JointPmfTable<T> {
    /// Reconciled probability of one bottom vector (0 outside the table).
    pub fn prob_of(&self, b: &[u64]) -> T {
        match self.support.binary_search_by(|s| s.as_slice().cmp(b)) {
            Ok(i) => self.probs[i],
            Err(_) => T::zero(),
        }
    }

    /// Mean and variance of bottom variable `j`.
    pub fn bottom_mean_var(&self, j: usize) -> (T, T) {
        let mut mean = T::zero();
        let mut m2 = T::zero();
        for (b, &p) in self.support.iter().zip(&self.probs) {
            let x = T::from_u64(b[j]).unwrap();
            mean += x * p;
            m2 += x * x * p;
        }
        (mean, m2 - mean * mean)
    }

    /// Mean and variance of upper variable `i` (the aggregate A_i b).
    pub fn upper_mean_var(&self, h: &Hierarchy, i: usize) -> (T, T) {
        let mut mean = T::zero();
        let mut m2 = T::zero();
        for (b, &p) in self.support.iter().zip(&self.probs) {
            let x = T::from_u64(h.aggregate(b).unwrap()[i]).unwrap();
            mean += x * p;
            m2 += x * x * p;
        }
        (mean, m2 - mean * mean)
    }

    /// Marginal pmf of the upper aggregate as (value, probability) pairs.
    pub fn upper_pmf(&self, h: &Hierarchy) -> Vec<(u64, T)> {
        let mut acc: std::collections::BTreeMap<u64, T> = Default::default();
        for (b, &p) in self.support.iter().zip(&self.probs) {
            let u = h.aggregate(b).unwrap()[0];
            *acc.entry(u).or_insert_with(T::zero) += p;
        }
        acc.into_iter().collect()
    }
}

#[allow(clippy::type_complexity)]
fn discrete_blocks<'a, T: Scalar>(
    h: &Hierarchy,
    base: &'a HierForecast<T>,
) -> Result<(&'a [CountDistribution<T>], &'a [CountDistribution<T>])> {
    if h.n_upper() != 1 {
        return Err(Error::MultipleUppers(h.n_upper()));
    }
    base.validate_against(h)?;
    if !base.independent {
        return Err(Error::DependentBlocks);
    }
    let (BlockForecast::Counts(bottom), BlockForecast::Counts(upper)) =
        (&base.bottom, &base.upper)
    else {
        return Err(Error::ContinuousUnsupported);
    };
    Ok((upper, bottom))
}

fn bottom_supports<T: Scalar>(
    bottom: &[CountDistribution<T>],
    tail_tol: T,
) -> Result<(Vec<Vec<u64>>, T)> {
    let mut supports = Vec::with_capacity(bottom.len());
    let mut kept = T::one();
    let mut points = 1usize;
    for d in bottom {
        let support: Vec<u64> = match d {
            CountDistribution::Tabulated { support, .. } => support.clone(),
            _ => {
                let (bound, _) = d.support_bound(tail_tol);
                (0..=bound).collect()
            }
        };
        let mass: T = support
            .iter()
            .map(|&k| d.pmf(k as i64))
            .fold(T::zero(), |a, b| a + b);
        kept *= num_traits::Float::min(mass, T::one());
        points = points.saturating_mul(support.len());
        if points > MAX_ENUM_POINTS {
            return Err(Error::SupportExplosion(MAX_ENUM_POINTS));
        }
        supports.push(support);
    }
    Ok((supports, T::one() - kept))
}

/// Enumerate the reconciled bottom distribution by conditioning: table
/// entries proportional to pi_U(A b) * prod_j pi_{B_j}(b_j), normalized.
pub fn enumerate_reconciled<T: Scalar>(
    h: &Hierarchy,
    base: &HierForecast<T>,
    tail_tol: T,
) -> Result<JointPmfTable<T>> {
    let (upper, bottom) = discrete_blocks(h, base)?;
    let (supports, truncation) = bottom_supports(bottom, tail_tol)?;

    let mut support = Vec::new();
    let mut weights = Vec::new();
    let mut pc = T::zero();
    for b in supports
        .iter()
        .map(|s| s.iter().copied())
        .multi_cartesian_product()
    {
        let mut w = upper[0].pmf(h.aggregate(&b)?[0] as i64);
        if w == T::zero() {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            w *= bottom[j].pmf(bj as i64);
        }
        if w > T::zero() {
            pc += w;
            support.push(b);
            weights.push(w);
        }
    }
    if pc <= T::zero() {
        return Err(Error::ZeroNormalizer);
    }
    for w in weights.iter_mut() {
        *w /= pc;
    }
    Ok(JointPmfTable {
        support,
        probs: weights,
        pc,
        truncation,
    })
}

/// Exact coherence probability over the truncated joint support, reported
/// with the truncation bound.
pub fn exact_pc<T: Scalar>(h: &Hierarchy, base: &HierForecast<T>, tail_tol: T) -> Result<(T, T)> {
    match enumerate_reconciled(h, base, tail_tol) {
        Ok(table) => Ok((table.pc, table.truncation)),
        Err(Error::ZeroNormalizer) => Ok((T::zero(), T::zero())),
        Err(e) => Err(e),
    }
}

/// Closed-form reconciliation of the minimal Bernoulli hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliReconciliation<T> {
    pub p1: T,
    pub p2: T,
    pub q: [T; 3],
    /// Normalizing constant S; equals the coherence probability.
    pub normalizer: T,
}

/// Reconcile B1 ~ Bernoulli(p1), B2 ~ Bernoulli(p2) against an upper pmf q
/// on {0, 1, 2}.
pub fn bernoulli_closed_form<T: Scalar>(p1: T, p2: T, q: [T; 3]) -> Result<BernoulliReconciliation<T>> {
    for &p in &[p1, p2] {
        if p < T::zero() || p > T::one() {
            return Err(Error::InvalidParameter(
                "Bernoulli probability outside [0,1]".into(),
            ));
        }
    }
    let qsum = q[0] + q[1] + q[2];
    if q.iter().any(|&x| x < T::zero())
        || num_traits::Float::abs(qsum - T::one()) > T::from_f64_c(1e-12)
    {
        return Err(Error::InvalidParameter(
            "upper pmf must be a length-3 simplex".into(),
        ));
    }
    let one = T::one();
    let s = (one - p1) * (one - p2) * q[0]
        + p1 * (one - p2) * q[1]
        + (one - p1) * p2 * q[1]
        + p1 * p2 * q[2];
    if s <= T::zero() {
        return Err(Error::ZeroNormalizer);
    }
    let p1_rec = ((one - p2) * q[1] + p2 * q[2]) * p1 / s;
    let p2_rec = ((one - p1) * q[1] + p1 * q[2]) * p2 / s;
    let q_rec = [
        (one - p1) * (one - p2) * q[0] / s,
        (p1 + p2 - T::from_f64_c(2.0) * p1 * p2) * q[1] / s,
        p1 * p2 * q[2] / s,
    ];
    Ok(BernoulliReconciliation {
        p1: p1_rec,
        p2: p2_rec,
        q: q_rec,
        normalizer: s,
    })
}

/// Pieces of the reconciled-variance identity for one bottom variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition<T> {
    /// Var(B_j) under the base forecast (truncated joint).
    pub base_var: T,
    /// Var(B_j | U != A B).
    pub cond_var_incoherent: T,
    /// Coherence probability.
    pub pc: T,
    /// E[B_j | U != A B].
    pub a: T,
    /// E[B_j | U = A B].
    pub b: T,
    /// Reconciled variance obtained from the decomposition formula.
    pub reconciled_var: T,
    /// Reconciled variance enumerated directly; equals `reconciled_var` up
    /// to round-off.
    pub direct_var: T,
}

/// Evaluate the law-of-total-variance decomposition of Var(B_j | coherent)
/// by joint enumeration of the upper and bottom supports.
pub fn variance_decomposition<T: Scalar>(
    h: &Hierarchy,
    base: &HierForecast<T>,
    j: usize,
    tail_tol: T,
) -> Result<VarianceDecomposition<T>> {
    let (upper, bottom) = discrete_blocks(h, base)?;
    if j >= bottom.len() {
        return Err(Error::DimensionMismatch {
            expected: bottom.len(),
            got: j,
        });
    }
    let (supports, _) = bottom_supports(bottom, tail_tol)?;
    let upper_support: Vec<u64> = match &upper[0] {
        CountDistribution::Tabulated { support, .. } => support.clone(),
        d => {
            let (bound, _) = d.support_bound(tail_tol);
            (0..=bound).collect()
        }
    };
    let q_total: T = upper_support
        .iter()
        .map(|&u| upper[0].pmf(u as i64))
        .fold(T::zero(), |a, b| a + b);

    let mut mass_c = T::zero();
    let mut sum_c = T::zero();
    let mut sq_c = T::zero();
    let mut mass_i = T::zero();
    let mut sum_i = T::zero();
    let mut sq_i = T::zero();
    for b in supports
        .iter()
        .map(|s| s.iter().copied())
        .multi_cartesian_product()
    {
        let mut pb = T::one();
        for (k, &bk) in b.iter().enumerate() {
            pb *= bottom[k].pmf(bk as i64);
        }
        if pb == T::zero() {
            continue;
        }
        let agg = h.aggregate(&b)?[0];
        let x = T::from_u64(b[j]).unwrap();
        let q_match = if upper_support.binary_search(&agg).is_ok() {
            upper[0].pmf(agg as i64)
        } else {
            T::zero()
        };
        let pc_part = pb * q_match;
        let pi_part = pb * (q_total - q_match);
        mass_c += pc_part;
        sum_c += x * pc_part;
        sq_c += x * x * pc_part;
        mass_i += pi_part;
        sum_i += x * pi_part;
        sq_i += x * x * pi_part;
    }
    if mass_c <= T::zero() {
        return Err(Error::ZeroCoherence);
    }
    let total = mass_c + mass_i;
    let pc = mass_c / total;
    let base_mean = (sum_c + sum_i) / total;
    let base_var = (sq_c + sq_i) / total - base_mean * base_mean;
    let b_mean = sum_c / mass_c;
    let direct_var = sq_c / mass_c - b_mean * b_mean;
    let (a_mean, var_i) = if mass_i > T::zero() {
        let a = sum_i / mass_i;
        (a, sq_i / mass_i - a * a)
    } else {
        (b_mean, T::zero())
    };
    let one = T::one();
    let reconciled_var =
        (base_var - (one - pc) * var_i - pc * (one - pc) * (a_mean - b_mean) * (a_mean - b_mean))
            / pc;
    Ok(VarianceDecomposition {
        base_var,
        cond_var_incoherent: var_i,
        pc,
        a: a_mean,
        b: b_mean,
        reconciled_var,
        direct_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn minimal() -> Hierarchy {
        Hierarchy::new(
            vec![vec![1, 1]],
            vec!["U".into(), "B1".into(), "B2".into()],
        )
        .unwrap()
    }

    fn bernoulli_forecast(p1: f64, p2: f64, q: [f64; 3]) -> HierForecast<f64> {
        HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::tabulated(
                vec![0, 1, 2],
                q.to_vec(),
            )
            .unwrap()]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(p1).unwrap(),
                CountDistribution::bernoulli(p2).unwrap(),
            ]),
            true,
        )
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
    fn bernoulli_closed_form_paper_case() {
        let rec = bernoulli_closed_form(0.3f64, 0.2, [0.1, 0.2, 0.7]).unwrap();
        assert_relative_eq!(rec.normalizer, 0.174, max_relative = 1e-12);
        assert!((rec.p1 - 0.52).abs() < 5e-3);
        assert!((rec.p2 - 0.40).abs() < 5e-3);
        assert!((rec.q[0] - 0.32).abs() < 5e-3);
        assert!((rec.q[1] - 0.44).abs() < 5e-3);
        assert!((rec.q[2] - 0.24).abs() < 5e-3);
    }

    #[test]
    fn bernoulli_closed_form_coherent_point_masses() {
        let rec = bernoulli_closed_form(0.0, 0.0, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(rec.p1, 0.0);
        assert_eq!(rec.p2, 0.0);
        assert_eq!(rec.q, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn bernoulli_closed_form_convolution_upper() {
        // q is the exact convolution of two Bernoulli(1/2); hand evaluation
        // gives S = 3/8, marginals unchanged (p = 1/2 by symmetry) but a
        // dependent joint, so q_rec = [1/6, 2/3, 1/6].
        let rec = bernoulli_closed_form(0.5, 0.5, [0.25, 0.5, 0.25]).unwrap();
        assert_relative_eq!(rec.normalizer, 0.375, max_relative = 1e-14);
        assert_relative_eq!(rec.p1, 0.5, max_relative = 1e-14);
        assert_relative_eq!(rec.p2, 0.5, max_relative = 1e-14);
        assert_relative_eq!(rec.q[0], 1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(rec.q[1], 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(rec.q[2], 1.0 / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn bernoulli_zero_normalizer() {
        assert!(matches!(
            bernoulli_closed_form(0.0, 0.0, [0.0, 0.0, 1.0]),
            Err(Error::ZeroNormalizer)
        ));
    }

    #[test]
    fn enumeration_matches_closed_form() {
        let h = minimal();
        let table = enumerate_reconciled(&h, &bernoulli_forecast(0.3, 0.2, [0.1, 0.2, 0.7]), 1e-9)
            .unwrap();
        let rec = bernoulli_closed_form(0.3, 0.2, [0.1, 0.2, 0.7]).unwrap();
        let (m1, _) = table.bottom_mean_var(0);
        let (m2, _) = table.bottom_mean_var(1);
        assert_relative_eq!(m1, rec.p1, max_relative = 1e-12);
        assert_relative_eq!(m2, rec.p2, max_relative = 1e-12);
        assert_relative_eq!(table.pc, rec.normalizer, max_relative = 1e-12);
        for (u, p) in table.upper_pmf(&h) {
            assert_relative_eq!(p, rec.q[u as usize], max_relative = 1e-12);
        }
        assert_relative_eq!(
            table.prob_of(&[0, 0]),
            0.7 * 0.8 * 0.1 / rec.normalizer,
            max_relative = 1e-12
        );
    }

    #[test]
    fn flat_upper_weights_leave_bottom_unchanged() {
        let h = minimal();
        // uniform over the full reachable range {0,1,2}
        let base = bernoulli_forecast(0.3, 0.2, [1.0 / 3.0; 3]);
        let table = enumerate_reconciled(&h, &base, 1e-9).unwrap();
        let (m1, v1) = table.bottom_mean_var(0);
        assert_relative_eq!(m1, 0.3, max_relative = 1e-12);
        assert_relative_eq!(v1, 0.21, max_relative = 1e-12);
    }

    #[test]
    fn poisson_strengthening_means() {
        let h = minimal();
        let table = enumerate_reconciled(&h, &poisson_forecast(0.5, 0.8, 1.5), 1e-9).unwrap();
        let (m1, _) = table.bottom_mean_var(0);
        let (m2, _) = table.bottom_mean_var(1);
        let (mu, _) = table.upper_mean_var(&h, 0);
        assert!((m1 - 0.43).abs() < 0.005, "{m1}");
        assert!((m2 - 0.68).abs() < 0.005, "{m2}");
        assert!((mu - 1.11).abs() < 0.005, "{mu}");
        // strengthening: below both base (1.5) and bottom-up (1.3) means
        assert!(mu < 1.3);
    }

    #[test]
    fn poisson_compromise_means() {
        let h = minimal();
        let table = enumerate_reconciled(&h, &poisson_forecast(5.0, 7.0, 18.0), 1e-9).unwrap();
        let (m1, _) = table.bottom_mean_var(0);
        let (m2, _) = table.bottom_mean_var(1);
        let (mu, _) = table.upper_mean_var(&h, 0);
        assert!((m1 - 6.02).abs() < 0.01, "{m1}");
        assert!((m2 - 8.43).abs() < 0.01, "{m2}");
        assert!((mu - 14.44).abs() < 0.01, "{mu}");
        assert!(mu > 12.0 && mu < 18.0);
    }

    #[test]
    fn exact_pc_cases() {
        let h = minimal();
        let (pc, trunc) = exact_pc(&h, &bernoulli_forecast(0.3, 0.2, [0.1, 0.2, 0.7]), 1e-9)
            .unwrap();
        assert_relative_eq!(pc, 0.174, max_relative = 1e-12);
        assert_eq!(trunc, 0.0);

        let (pc, _) = exact_pc(&h, &poisson_forecast(0.5, 0.8, 6.0), 1e-9).unwrap();
        assert!((pc - 0.03).abs() < 0.005, "{pc}");

        let disjoint = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::point_mass(5)]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(0.5).unwrap(),
                CountDistribution::bernoulli(0.5).unwrap(),
            ]),
            true,
        );
        let (pc, _) = exact_pc(&h, &disjoint, 1e-9).unwrap();
        assert_eq!(pc, 0.0);
    }

    #[test]
    fn variance_decomposition_bernoulli() {
        let h = minimal();
        let dec =
            variance_decomposition(&h, &bernoulli_forecast(0.3, 0.2, [0.1, 0.2, 0.7]), 0, 1e-9)
                .unwrap();
        assert_relative_eq!(dec.base_var, 0.21, max_relative = 1e-12);
        assert!((dec.reconciled_var - 0.2496).abs() < 1e-3);
        assert!((dec.reconciled_var - dec.base_var - 0.04).abs() < 0.005);
        assert_relative_eq!(dec.reconciled_var, dec.direct_var, epsilon = 1e-12);
    }

    #[test]
    fn variance_decomposition_collapses_at_full_coherence() {
        let h = minimal();
        let base = HierForecast::new(
            BlockForecast::Counts(vec![CountDistribution::point_mass(2)]),
            BlockForecast::Counts(vec![
                CountDistribution::bernoulli(1.0).unwrap(),
                CountDistribution::bernoulli(1.0).unwrap(),
            ]),
            true,
        );
        let dec = variance_decomposition(&h, &base, 0, 1e-9).unwrap();
        assert_eq!(dec.pc, 1.0);
        assert_relative_eq!(dec.reconciled_var, dec.base_var, epsilon = 1e-14);
    }

    #[test]
    fn variance_decomposition_poisson() {
        let h = minimal();
        let dec = variance_decomposition(&h, &poisson_forecast(0.5, 0.8, 6.0), 1, 1e-9).unwrap();
        assert!((dec.reconciled_var - 1.13).abs() < 0.01, "{}", dec.reconciled_var);
        assert!((dec.reconciled_var - dec.base_var - 0.33).abs() < 0.02);
        assert_relative_eq!(dec.reconciled_var, dec.direct_var, epsilon = 1e-10);
    }

    #[test]
    fn lexicographic_support_order() {
        let h = minimal();
        let table = enumerate_reconciled(&h, &bernoulli_forecast(0.3, 0.2, [0.1, 0.2, 0.7]), 1e-9)
            .unwrap();
        let mut sorted = table.support.clone();
        sorted.sort();
        assert_eq!(table.support, sorted);
    }
}
