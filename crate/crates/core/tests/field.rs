use spatial_ridge::field::{
    covariance, simulate_covariate_data, simulate_field, simulate_trend_data, FieldModel, FieldSimulator,
    JumpDistribution, KernelSpec, LevyDriver,
};
use spatial_ridge::points::Points;
use spatial_ridge::rng::Streams;
use spatial_ridge::sampling::{rescale_sites, SiteSet};

/// `count` sites spaced `gap` apart, centered on the origin.
fn spaced_sites(count: usize, gap: f64) -> SiteSet {
    let extent = gap * count as f64;
    let raw: Vec<f64> = (0..count).map(|k| -extent / 2.0 + gap * (k as f64 + 0.5)).collect();
    rescale_sites(Points::new(1, raw).unwrap(), &[extent]).unwrap()
}

/// Sample moments of values pooled over replications.
fn moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (mean, m2, m4 / (m2 * m2) - 3.0)
}

fn pooled(model: &FieldModel, sites: &SiteSet, reps: u64, seed: u64) -> Vec<f64> {
    let sim = FieldSimulator::new(model, 1).unwrap();
    let mut out = Vec::new();
    for rep in 0..reps {
        let mut rng = Streams::new(seed).replication(rep + 1).rng(spatial_ridge::rng::Purpose::Field);
        out.extend(sim.simulate(sites, &mut rng).unwrap());
    }
    out
}

#[test]
fn exponential_correlation_has_closed_form() {
    // in one dimension the normalized autocorrelation of exp(-|x|) is (1 + x) e^{-x}
    let model = FieldModel::standard_exponential(1.0).unwrap();
    for lag in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let want = (1.0 + lag) * f64::exp(-lag);
        assert!((covariance(&model, &[lag]).unwrap() - want).abs() < 1e-7, "lag {lag}");
    }
    // unnormalized: sigma0 r0^2 int exp(-r1 |u|) exp(-r1 |u - x|) du = sigma0 r0^2 (1 + r1 x) e^{-r1 x} / r1
    let raw =
        FieldModel::new(KernelSpec::Exponential { r0: 2.0, r1: 0.5 }, LevyDriver::Gaussian { sigma0: 3.0 }, false)
            .unwrap();
    let want = 3.0 * 4.0 * (1.0 + 0.5) * f64::exp(-0.5) / 0.5;
    assert!((covariance(&raw, &[1.0]).unwrap() - want).abs() < 1e-6 * want);
}

#[test]
fn gaussian_field_has_unit_variance_and_zero_mean() {
    let model = FieldModel::standard_exponential(1.0).unwrap();
    // sites 40 kernel lengths apart are effectively independent
    let values = pooled(&model, &spaced_sites(500, 40.0), 20, 5);
    let (mean, var, kurt) = moments(&values);
    let n = values.len() as f64;
    assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
    assert!(kurt.abs() < 0.3, "excess kurtosis {kurt}");
}

#[test]
fn variance_is_uniform_up_to_the_region_edge() {
    let model = FieldModel::standard_exponential(1.0).unwrap();
    // two sites at the region edges and one at the center
    let sites = rescale_sites(Points::new(1, vec![-10.0, 0.0, 10.0]).unwrap(), &[20.0]).unwrap();
    let sim = FieldSimulator::new(&model, 1).unwrap();
    let reps = 4000;
    let mut sums = [0.0f64; 3];
    for rep in 0..reps {
        let mut rng = Streams::new(9).replication(rep + 1).rng(spatial_ridge::rng::Purpose::Field);
        for (s, v) in sums.iter_mut().zip(sim.simulate(&sites, &mut rng).unwrap()) {
            *s += v * v;
        }
    }
    for (k, s) in sums.iter().enumerate() {
        let var = s / reps as f64;
        assert!((var - 1.0).abs() < 0.08, "site {k}: variance {var}");
    }
}

#[test]
fn grid_refinement_changes_variance_little() {
    let coarse = FieldModel::standard_exponential(1.0).unwrap();
    let fine = coarse.clone().with_grid_step(coarse.grid_step() / 2.0).unwrap();
    let sites = spaced_sites(400, 40.0);
    let (_, a, _) = moments(&pooled(&coarse, &sites, 20, 11));
    let (_, b, _) = moments(&pooled(&fine, &sites, 20, 12));
    assert!((a / b - 1.0).abs() < 0.05, "{a} vs {b}");
}

#[test]
fn compound_poisson_field_is_heavy_tailed() {
    // rate 0.2 with unit jumps: excess kurtosis rate E[J^4] int theta^4 / var^2 = 0.1 / 0.04
    let driver = LevyDriver::CompoundPoisson { rate: 0.2, jumps: JumpDistribution::TwoPoint { magnitude: 1.0 } };
    let model = FieldModel::new(KernelSpec::Exponential { r0: 1.0, r1: 1.0 }, driver, false).unwrap();
    let values = pooled(&model, &spaced_sites(500, 40.0), 40, 13);
    let (mean, var, kurt) = moments(&values);
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 0.2).abs() < 0.02, "variance {var}");
    assert!((kurt - 2.5).abs() < 0.6, "excess kurtosis {kurt}");
    // skewness of symmetric jumps vanishes
    let n = values.len() as f64;
    let skew = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
    assert!(skew.abs() < 0.15, "skewness {skew}");
}

#[test]
fn lag_covariance_matches_closed_form() {
    let model = FieldModel::standard_exponential(1.0).unwrap();
    // clusters of sites at offsets 0, 0.5, 1, 2, clusters 40 apart
    let lags = [0.0, 0.5, 1.0, 2.0];
    let clusters = 200;
    let mut raw = Vec::new();
    for c in 0..clusters {
        let base = -4000.0 + 40.0 * c as f64 + 10.0;
        raw.extend(lags.iter().map(|l| base + l));
    }
    let sites = rescale_sites(Points::new(1, raw).unwrap(), &[8000.0]).unwrap();
    let values = pooled(&model, &sites, 10, 17);
    for (k, lag) in lags.iter().enumerate() {
        let est: f64 = values.chunks(4).map(|c| c[0] * c[k]).sum::<f64>() / (values.len() / 4) as f64;
        let want = (1.0 + lag) * f64::exp(-lag);
        assert!((est - want).abs() < 0.1 * want.max(0.4), "lag {lag}: {est} vs {want}");
    }
}

#[test]
fn simulation_is_reproducible() {
    let model = FieldModel::standard_exponential(2.0).unwrap();
    let sites = spaced_sites(100, 0.7);
    let a = simulate_field(&model, &sites, 3).unwrap();
    let b = simulate_field(&model, &sites, 3).unwrap();
    let c = simulate_field(&model, &sites, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn trend_data_variance_adds_field_and_noise() {
    // eta = sigma = 1/2 gives Var Y = 1/4 + 1/4
    let model = FieldModel::standard_exponential(1.0).unwrap();
    let sites = spaced_sites(2000, 40.0);
    let mut values = Vec::new();
    for rep in 0..5 {
        let y =
            simulate_trend_data(&|_| 0.0, &|_| 0.5, &|_| 0.5, &model, &sites, Streams::new(21).replication(rep + 1))
                .unwrap();
        values.extend(y);
    }
    let (_, var, _) = moments(&values);
    assert!((var - 0.5).abs() < 0.03, "{var}");
    assert!(simulate_trend_data(&|_| 0.0, &|_| 0.0, &|_| 0.5, &model, &sites, 1).is_err());
}

#[test]
fn covariate_data_noise_has_requested_scale() {
    let model = FieldModel::standard_exponential(1.0).unwrap();
    let sites = spaced_sites(5000, 2.0);
    let (y, x) = simulate_covariate_data(&|_, x| x[0], &|_, _| 0.3, &[model.clone(), model], &sites, 8).unwrap();
    assert_eq!(x.dim(), 2);
    let resid: Vec<f64> = y.iter().zip(x.rows()).map(|(y, x)| y - x[0]).collect();
    let (_, var, _) = moments(&resid);
    assert!((var - 0.09).abs() < 0.01, "{var}");
    // the two covariate fields are independent streams
    let corr = x.rows().map(|r| r[0] * r[1]).sum::<f64>() / x.len() as f64;
    assert!(corr.abs() < 0.1, "{corr}");
}
