//! Agreement between the sampling reconciler and the analytic routes:
//! exact enumeration for finite discrete instances, and the Gaussian
//! closed form for jointly Gaussian instances.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use recohere::analytic::enumerate_reconciled;
use recohere::distributions::{BlockForecast, CountDistribution, HierForecast, MvGaussian};
use recohere::gaussian::reconcile_gaussian;
use recohere::importance::{reconcile_is_with, Resampling};
use recohere::Hierarchy;

fn minimal(m: usize) -> Hierarchy {
    let labels = std::iter::once("U".to_string())
        .chain((0..m).map(|j| format!("B{j}")))
        .collect();
    Hierarchy::new(vec![vec![1; m]], labels).unwrap()
}

fn random_tabulated(rng: &mut ChaCha8Rng, top: u64) -> CountDistribution<f64> {
    let w: Vec<f64> = (0..=top).map(|_| rng.gen_range(0.2..0.8)).collect();
    let s: f64 = w.iter().sum();
    CountDistribution::tabulated(
        (0..=top).collect(),
        w.iter().map(|x| x / s).collect(),
    )
    .unwrap()
}

#[test]
fn sampler_matches_enumeration_in_total_variation() {
    let n_draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for inst in 0..50u64 {
        let m = rng.gen_range(2..=3usize);
        let h = minimal(m);
        let bottom: Vec<_> = (0..m).map(|_| random_tabulated(&mut rng, 2)).collect();
        let upper = random_tabulated(&mut rng, 2 * m as u64);
        let base = HierForecast::new(
            BlockForecast::Counts(vec![upper]),
            BlockForecast::Counts(bottom),
            true,
        );

        let table = enumerate_reconciled(&h, &base, 0.0).unwrap();
        let samples = reconcile_is_with(&h, &base, n_draws, 1000 + inst, Resampling::Systematic).unwrap();
        assert!(!samples.ess_degenerate(), "degenerate ESS on instance {inst}");

        let bottom_draws = samples.bottom();
        let mut counts: HashMap<Vec<u64>, usize> = HashMap::new();
        for r in 0..bottom_draws.nrows() {
            let key: Vec<u64> = (0..m).map(|j| bottom_draws[(r, j)] as u64).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
        // half the L1 distance between empirical and exact bottom pmfs
        let mut tv = 0.0;
        for (b, &p) in table.support.iter().zip(&table.probs) {
            let emp = counts.remove(b).unwrap_or(0) as f64 / n_draws as f64;
            tv += (emp - p).abs();
        }
        for &c in counts.values() {
            tv += c as f64 / n_draws as f64;
        }
        tv *= 0.5;
        assert!(tv < 0.01, "TV {tv} on instance {inst}");
    }
}

#[test]
fn sampler_matches_gaussian_closed_form() {
    let n_draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for inst in 0..20u64 {
        let m = rng.gen_range(2..=3usize);
        let h = minimal(m);

        let b_mean = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0f64));
        let g = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-0.7..0.7f64));
        let b_cov = &g * g.transpose() + DMatrix::identity(m, m) * 0.3;
        let u_mean = b_mean.sum() + rng.gen_range(-1.0..1.0);
        let u_var = rng.gen_range(0.5..2.0);

        let bottom = MvGaussian::new(b_mean.clone(), b_cov.clone()).unwrap();
        let upper =
            MvGaussian::new(DVector::from_element(1, u_mean), DMatrix::from_element(1, 1, u_var))
                .unwrap();
        let base = HierForecast::new(
            BlockForecast::Gaussian(upper),
            BlockForecast::Gaussian(bottom),
            true,
        );

        // closed form on the block-diagonal joint
        let n = m + 1;
        let mut mean = DVector::zeros(n);
        mean[0] = u_mean;
        mean.rows_mut(1, m).copy_from(&b_mean);
        let mut cov = DMatrix::zeros(n, n);
        cov[(0, 0)] = u_var;
        cov.view_mut((1, 1), (m, m)).copy_from(&b_cov);
        let joint = MvGaussian::new(mean, cov).unwrap();
        let exact = reconcile_gaussian(&h, &joint).unwrap();

        let samples = reconcile_is_with(&h, &base, n_draws, 2000 + inst, Resampling::Systematic).unwrap();
        let stats = samples.stats().unwrap();
        for j in 0..m {
            let se = (exact.bottom_cov[(j, j)] / samples.ess).sqrt();
            let diff = (stats[1 + j].mean - exact.bottom_mean[j]).abs();
            assert!(
                diff < 4.0 * se + 1e-3,
                "instance {inst}, bottom {j}: diff {diff} vs 4se {}",
                4.0 * se
            );
            let vr = stats[1 + j].variance / exact.bottom_cov[(j, j)];
            assert!((0.9..1.1).contains(&vr), "variance ratio {vr}");
        }
        let se_u = (exact.upper_cov[(0, 0)] / samples.ess).sqrt();
        let diff_u = (stats[0].mean - exact.upper_mean[0]).abs();
        assert!(diff_u < 4.0 * se_u + 1e-3, "upper mean diff {diff_u}");
    }
}
