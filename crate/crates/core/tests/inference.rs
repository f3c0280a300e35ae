use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use spatial_ridge::basis::{Interval, TensorBasis};
use spatial_ridge::estimator::{fit_covariate, fit_trend, RidgeFit};
use spatial_ridge::inference::{
    bartlett_kernel, confidence_band, covariate_variance, hac_long_run_matrix, normal_quantile, omega_hat, HacConfig,
};
use spatial_ridge::points::Points;
use spatial_ridge::sampling::{rescale_sites, SamplingDesign, SiteSet};

fn dense_rows(fit: &RidgeFit) -> Vec<DVector<f64>> {
    let j = fit.basis().total_dimension();
    fit.design_rows().iter().map(|r| DVector::from_vec(r.to_dense(j))).collect()
}

fn penalized_inverse(fit: &RidgeFit) -> DMatrix<f64> {
    let j = fit.basis().total_dimension();
    (fit.gram() + DMatrix::identity(j, j) * fit.penalty()).try_inverse().unwrap()
}

/// All-pairs evaluation of the spatial HAC matrix.
fn brute_force_hac(fit: &RidgeFit, y: &[f64], bandwidths: &[f64]) -> (DMatrix<f64>, usize) {
    let rows = dense_rows(fit);
    let r = fit.residuals(y).unwrap();
    let raw = fit.sites().raw();
    let n = rows.len();
    let j = fit.basis().total_dimension();
    let mut s = DMatrix::<f64>::zeros(j, j);
    let mut pairs = 0;
    for a in 0..n {
        for b in 0..n {
            let lag: Vec<f64> = raw.row(a).iter().zip(raw.row(b)).map(|(u, v)| u - v).collect();
            let w = bartlett_kernel(&lag, bandwidths);
            if w > 0.0 {
                s += &rows[a] * rows[b].transpose() * (w * r[a] * r[b]);
                if a < b {
                    pairs += 1;
                }
            }
        }
    }
    let m = penalized_inverse(fit);
    let volume = fit.sites().volume();
    (&m * s * &m * (volume / (n * n) as f64), pairs)
}

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

fn normal_data(sites: &SiteSet, seed: u64) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    sites
        .scaled()
        .rows()
        .map(|z| (2.0 * z[0]).cos() + Distribution::<f64>::sample(&StandardNormal, &mut rng) * 0.5)
        .collect()
}

#[test]
fn single_site_is_exact() {
    // one site at z = 1/8 with psi = (3/8, 5/8); with unit penalty the
    // residual is y / (1 + |psi|^2) and G = A M psi psi' M r^2
    let raw = Points::new(1, vec![0.5]).unwrap();
    let s = rescale_sites(raw, &[4.0]).unwrap();
    let basis = TensorBasis::uniform(1, &[0]).unwrap();
    let fit = fit_trend(&s, &[2.0], &basis, 1.0).unwrap();
    let norm2 = 0.375f64.powi(2) + 0.625f64.powi(2);
    let r = 2.0 / (1.0 + norm2);
    assert!((fit.residuals(&[2.0]).unwrap()[0] - r).abs() < 1e-15);
    let var = hac_long_run_matrix(&fit, &[2.0], &HacConfig::new(vec![1.0]).unwrap()).unwrap();
    assert!(var.diagonal_only);
    let band = confidence_band(&fit, &var, s.scaled(), 0.95).unwrap();
    let want = norm2 * r / (1.0 + norm2);
    assert!((band.se[0] - want).abs() < 1e-15, "{} vs {want}", band.se[0]);
}

#[test]
fn three_site_fixture() {
    // linear fit through (-0.3, 1), (0, 2), (0.3, 6): residuals (0.5, -1, 0.5)
    // and Bartlett weights 0.4 for the two adjacent pairs at bandwidth 0.5
    let raw = Points::new(1, vec![-0.3, 0.0, 0.3]).unwrap();
    let s = rescale_sites(raw, &[1.0]).unwrap();
    let basis = TensorBasis::uniform(1, &[0]).unwrap();
    let y = [1.0, 2.0, 6.0];
    let fit = fit_trend(&s, &y, &basis, 0.0).unwrap();
    let resid = fit.residuals(&y).unwrap();
    for (r, want) in resid.iter().zip([0.5, -1.0, 0.5]) {
        assert!((r - want).abs() < 1e-12);
    }
    let var = hac_long_run_matrix(&fit, &y, &HacConfig::new(vec![0.5]).unwrap()).unwrap();
    let want = DMatrix::from_row_slice(2, 2, &[0.425, -0.269_444_444_444_444_5, -0.269_444_444_444_444_5, 0.425]);
    assert!((&var.matrix - &want).amax() < 1e-12, "{}", var.matrix);
    assert_eq!(var.pairs, 2);
    // at z = 0 the estimate is the intercept: S_11 / n^2 = (1.5 - 0.8) / 9
    assert!((omega_hat(&fit, &var, &[0.0], &[0.0]).unwrap() - 0.7 / 9.0).abs() < 1e-12);
    assert!((omega_hat(&fit, &var, &[0.1], &[0.1]).unwrap() - 0.091_666_666_666_666_66).abs() < 1e-12);
    let (brute, _) = brute_force_hac(&fit, &y, &[0.5]);
    assert!((&brute - &want).amax() < 1e-12);
}

#[test]
fn bucketed_hac_matches_all_pairs() {
    for (d, n, seed) in [(1usize, 800usize, 1u64), (2, 1000, 2), (3, 500, 3)] {
        let scales: Vec<f64> = (0..d).map(|k| 20.0 + 5.0 * k as f64).collect();
        let s = SamplingDesign::uniform(scales.clone()).unwrap().draw_sites(n, seed).unwrap();
        let y = normal_data(&s, seed + 10);
        let basis = TensorBasis::uniform(2, &vec![1; d]).unwrap();
        let fit = fit_trend(&s, &y, &basis, 0.01).unwrap();
        let bandwidths: Vec<f64> = scales.iter().map(|a| 0.1 * a).collect();
        let var = hac_long_run_matrix(&fit, &y, &HacConfig::new(bandwidths.clone()).unwrap()).unwrap();
        let (brute, pairs) = brute_force_hac(&fit, &y, &bandwidths);
        assert!(max_rel(&var.matrix, &brute) < 1e-10, "d = {d}: {}", max_rel(&var.matrix, &brute));
        assert_eq!(var.pairs, pairs);
        assert!(!var.diagonal_only);
        // exactly symmetric
        assert_eq!(var.matrix, var.matrix.transpose());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bucketed_hac_matches_all_pairs_random(n in 2usize..120, seed in 0u64..10_000, frac in 0.01f64..0.6, d in 1usize..=2) {
        let s = SamplingDesign::uniform(vec![10.0; d]).unwrap().draw_sites(n, seed).unwrap();
        let y = normal_data(&s, seed);
        let basis = TensorBasis::uniform(1, &vec![1; d]).unwrap();
        let fit = fit_trend(&s, &y, &basis, 0.1).unwrap();
        let b = vec![10.0 * frac; d];
        let var = hac_long_run_matrix(&fit, &y, &HacConfig::new(b.clone()).unwrap()).unwrap();
        let (brute, pairs) = brute_force_hac(&fit, &y, &b);
        prop_assert!(max_rel(&var.matrix, &brute) < 1e-10);
        prop_assert_eq!(var.pairs, pairs);
    }

    #[test]
    fn one_dimensional_hac_is_positive_semidefinite(n in 5usize..200, seed in 0u64..10_000, frac in 0.01f64..0.5) {
        let s = SamplingDesign::uniform(vec![30.0]).unwrap().draw_sites(n, seed).unwrap();
        let y = normal_data(&s, seed);
        let basis = TensorBasis::uniform(3, &[3]).unwrap();
        let fit = fit_trend(&s, &y, &basis, 0.05).unwrap();
        let var = hac_long_run_matrix(&fit, &y, &HacConfig::from_fraction(&[30.0], frac).unwrap()).unwrap();
        let eig = var.matrix.clone().symmetric_eigen().eigenvalues;
        let scale = var.matrix.amax().max(1e-300);
        prop_assert!(eig.iter().all(|&e| e >= -1e-12 * scale));
    }

    #[test]
    fn band_widens_with_level(seed in 0u64..1000, lo in 0.05f64..0.5, hi in 0.5f64..0.999) {
        let s = SamplingDesign::uniform(vec![10.0, 10.0]).unwrap().draw_sites(120, seed).unwrap();
        let y = normal_data(&s, seed);
        let basis = TensorBasis::uniform(2, &[1, 1]).unwrap();
        let fit = fit_trend(&s, &y, &basis, 0.05).unwrap();
        let var = hac_long_run_matrix(&fit, &y, &HacConfig::from_fraction(&[10.0, 10.0], 0.2).unwrap()).unwrap();
        let grid = Points::grid(&[5, 5], &[Interval::UNIT; 2]).unwrap();
        let narrow = confidence_band(&fit, &var, &grid, lo).unwrap();
        let wide = confidence_band(&fit, &var, &grid, hi).unwrap();
        for i in 0..grid.len() {
            prop_assert!(wide.upper[i] - wide.lower[i] >= narrow.upper[i] - narrow.lower[i]);
            prop_assert!(narrow.lower[i] <= narrow.estimate[i] && narrow.estimate[i] <= narrow.upper[i]);
            prop_assert_eq!(narrow.se[i], wide.se[i]);
        }
    }
}

#[test]
fn pairs_at_the_bandwidth_get_no_weight() {
    // sites exactly one bandwidth apart form no pair
    let raw = Points::new(1, vec![-0.25, 0.25]).unwrap();
    let s = rescale_sites(raw, &[1.0]).unwrap();
    let basis = TensorBasis::uniform(1, &[0]).unwrap();
    let y = [1.0, 3.0];
    let fit = fit_trend(&s, &y, &basis, 0.1).unwrap();
    let exact = hac_long_run_matrix(&fit, &y, &HacConfig::new(vec![0.5]).unwrap()).unwrap();
    assert_eq!(exact.pairs, 0);
    let wider = hac_long_run_matrix(&fit, &y, &HacConfig::new(vec![0.5 + 1e-9]).unwrap()).unwrap();
    assert_eq!(wider.pairs, 1);
}

#[test]
fn zero_residuals_collapse_the_band() {
    let s = SamplingDesign::uniform(vec![5.0]).unwrap().draw_sites(100, 4).unwrap();
    let y: Vec<f64> = s.scaled().rows().map(|z| 1.0 + z[0] - z[0] * z[0]).collect();
    let basis = TensorBasis::uniform(2, &[2]).unwrap();
    let fit = fit_trend(&s, &y, &basis, 0.0).unwrap();
    let var = hac_long_run_matrix(&fit, &y, &HacConfig::from_fraction(&[5.0], 0.1).unwrap()).unwrap();
    let grid = Points::grid(&[11], &[Interval::UNIT]).unwrap();
    let band = confidence_band(&fit, &var, &grid, 0.95).unwrap();
    for i in 0..grid.len() {
        assert!(band.se[i] < 1e-10);
        assert!((band.upper[i] - band.lower[i]).abs() < 1e-9);
    }
}

#[test]
fn covariate_core_matches_dense_sandwich() {
    for (n, seed) in [(4usize, 1u64), (300, 2)] {
        let s = SamplingDesign::uniform(vec![3.0]).unwrap().draw_sites(n, seed).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = Points::new(1, xs.clone()).unwrap();
        let y: Vec<f64> =
            xs.iter().map(|v| v.sin() + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let knots = if n == 4 { [0, 0] } else { [2, 2] };
        let basis = TensorBasis::uniform(1, &knots).unwrap();
        let fit = fit_covariate(&s, &x, &y, &basis, None, 0.05).unwrap();
        let var = covariate_variance(&fit, &y).unwrap();
        let rows = dense_rows(&fit);
        let r = fit.residuals(&y).unwrap();
        let j = basis.total_dimension();
        let mut core = DMatrix::<f64>::zeros(j, j);
        for (b, ri) in rows.iter().zip(&r) {
            core += b * b.transpose() * (ri * ri);
        }
        let m = penalized_inverse(&fit);
        let want = &m * core * &m / n as f64;
        assert!(max_rel(&var.matrix, &want) < 1e-10, "n = {n}");
        assert_eq!(var.matrix, var.matrix.transpose());
        let eig = var.matrix.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-12 * var.matrix.amax()));
    }
}

#[test]
fn kind_mismatch_is_rejected() {
    let s = SamplingDesign::uniform(vec![3.0]).unwrap().draw_sites(50, 1).unwrap();
    let y = normal_data(&s, 1);
    let basis = TensorBasis::uniform(1, &[1]).unwrap();
    let fit = fit_trend(&s, &y, &basis, 0.1).unwrap();
    assert!(matches!(covariate_variance(&fit, &y), Err(spatial_ridge::Error::ModelKind { .. })));
    let var = hac_long_run_matrix(&fit, &y, &HacConfig::new(vec![0.3]).unwrap()).unwrap();
    assert!(confidence_band(&fit, &var, &Points::new(1, vec![0.0]).unwrap(), 1.0).is_err());
    assert!(HacConfig::new(vec![0.0]).is_err());
}

#[test]
fn normal_quantile_reference_values() {
    assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-15);
    assert!((normal_quantile(0.75) - 0.674_489_750_196_081_7).abs() < 1e-15);
    assert!((normal_quantile(1e-10) + 6.361_340_902_404_056).abs() < 1e-12);
    assert_eq!(normal_quantile(0.5), 0.0);
}

/// With independent noise the HAC standard error tracks the Monte Carlo
/// spread of the estimate.
#[test]
fn standard_error_matches_monte_carlo_spread() {
    let reps = 2000;
    let n = 500;
    let design = SamplingDesign::uniform(vec![500.0]).unwrap();
    let basis = TensorBasis::uniform(3, &[2]).unwrap();
    let point = Points::new(1, vec![0.1]).unwrap();
    let mut estimates = Vec::with_capacity(reps);
    let mut variances = Vec::with_capacity(reps);
    for rep in 0..reps as u64 {
        let s = design.draw_sites(n, 1000 + rep).unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(rep);
        let y: Vec<f64> =
            s.scaled().rows().map(|z| z[0] + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let fit = fit_trend(&s, &y, &basis, 0.5 / n as f64).unwrap();
        let var = hac_long_run_matrix(&fit, &y, &HacConfig::new(vec![2.0]).unwrap()).unwrap();
        let band = confidence_band(&fit, &var, &point, 0.95).unwrap();
        estimates.push(band.estimate[0]);
        variances.push(band.se[0] * band.se[0]);
    }
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let mc = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let avg = variances.iter().sum::<f64>() / reps as f64;
    assert!((avg / mc - 1.0).abs() < 0.15, "HAC {avg} vs Monte Carlo {mc}");
}
