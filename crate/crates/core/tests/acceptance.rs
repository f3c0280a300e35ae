//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p spatial-ridge --test acceptance`. Tolerances and
//! study configurations are pinned below; every study is seeded, so the
//! numbers printed are reproducible.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use spatial_ridge::basis::{Interval, TensorBasis};
use spatial_ridge::estimator::{fit_covariate, fit_trend, RidgeFit};
use spatial_ridge::experiments::{
    run_covariate_study, run_coverage_study, run_rate_study, CovariateRung, CovariateStudyConfig, CovariateTruth,
    CoverageStudyConfig, JMode, JRule, PenaltyRule, RateStudyConfig,
};
use spatial_ridge::field::{covariance, FieldModel, FieldSimulator};
use spatial_ridge::inference::{bartlett_kernel, hac_long_run_matrix, HacConfig};
use spatial_ridge::points::Points;
use spatial_ridge::rng::{Purpose, Streams};
use spatial_ridge::sampling::{rescale_sites, SamplingDesign};

const EXACT_SUP: f64 = 1e-8;
const PARTITION_TOL: f64 = 1e-12;
const GRADIENT_STEP: f64 = 1e-6;
const GRADIENT_REL: f64 = 1e-5;
const SMALL_SOLVE_TOL: f64 = 1e-12;
const HAC_REL_TOL: f64 = 1e-10;
const FIELD_COV_REL: f64 = 0.10;
const FIELD_REPS: u64 = 400;
const TARGET_SLOPE: f64 = -0.4;
const L2_SLOPE_BAND: f64 = 0.15;
const SUP_SLOPE_BAND: f64 = 0.2;
const COVERAGE_BAND: (f64, f64) = (0.90, 0.985);
const MAX_CLAMPED_FRACTION: f64 = 0.01;
/// Rate-study seed, fixed when the basis-size constants were chosen.
const RATE_SEED: u64 = 20_240_501;

type Surface = Box<dyn Fn(&[f64]) -> f64>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    let timing = if in_time { String::new() } else { format!("; over the {:.0} s budget", budget.as_secs_f64()) };
    println!(
        "{} [{id}] {name}: {}{timing} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

// ---------------------------------------------------------------- 1

fn exact_reproduction() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for d in 1..=2usize {
        let scales = vec![50.0; d];
        let sites = SamplingDesign::uniform(scales).unwrap().draw_sites(400, 7).unwrap();
        // 200 grid points in either dimension
        let grid = if d == 1 {
            Points::grid(&[200], &[Interval::UNIT]).unwrap()
        } else {
            Points::grid(&[20, 10], &[Interval::UNIT; 2]).unwrap()
        };
        for degree in 1..=3usize {
            let basis = TensorBasis::uniform(degree, &vec![3; d]).unwrap();
            let mut truths: Vec<Surface> = vec![Box::new(|_: &[f64]| 2.5)];
            truths.push(Box::new(move |z: &[f64]| {
                let k = degree as i32;
                // tensor splines of degree k contain z1^k z2^k, so the cross term stays in the span
                let cross = if d == 2 { -2.0 * z[0] * z[1] } else { 0.0 };
                1.0 - z[0] + 3.0 * z[0].powi(k) + 0.5 * z[d - 1].powi(k) + cross
            }));
            for (t, truth) in truths.iter().enumerate() {
                let y: Vec<f64> = sites.scaled().rows().map(truth).collect();
                let fit = fit_trend(&sites, &y, &basis, 0.0).unwrap();
                let pred = fit.predict(&grid).unwrap();
                let sup = grid.rows().zip(&pred).map(|(z, p)| (p - truth(z)).abs()).fold(0.0, f64::max);
                worst = worst.max(sup);
                if sup >= EXACT_SUP {
                    failures.push(format!("d={d} degree={degree} truth={t}: {sup:.2e}"));
                }
            }
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let basis = TensorBasis::uniform(3, &[12, 7]).unwrap();
    let mut partition: f64 = 0.0;
    let mut gradient: f64 = 0.0;
    for _ in 0..1000 {
        let z = [rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5)];
        partition = partition.max((basis.eval(&z).unwrap().iter().sum::<f64>() - 1.0).abs());
        let zi = [z[0].clamp(-0.49, 0.49), z[1].clamp(-0.49, 0.49)];
        let g = basis.eval_gradient(&zi).unwrap();
        let scale = g.amax();
        for k in 0..2 {
            let (mut up, mut down) = (zi, zi);
            up[k] += GRADIENT_STEP;
            down[k] -= GRADIENT_STEP;
            let fu = basis.eval(&up).unwrap();
            let fd = basis.eval(&down).unwrap();
            for j in 0..basis.total_dimension() {
                let fdiff = (fu[j] - fd[j]) / (2.0 * GRADIENT_STEP);
                gradient = gradient.max((fdiff - g[(j, k)]).abs() / scale);
            }
        }
    }
    let pass = failures.is_empty() && partition < PARTITION_TOL && gradient < GRADIENT_REL;
    Outcome {
        pass,
        detail: format!(
            "worst sup error {worst:.2e} (< {EXACT_SUP:.0e}); partition of unity {partition:.1e}; gradient rel error {gradient:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------- 2

fn dense_rows(fit: &RidgeFit) -> Vec<DVector<f64>> {
    let j = fit.basis().total_dimension();
    fit.design_rows().iter().map(|r| DVector::from_vec(r.to_dense(j))).collect()
}

/// `(Psi'Psi / n + s I)^{-1} Psi'y / n` by explicit inversion.
fn explicit_beta(rows: &[DVector<f64>], y: &[f64], penalty: f64) -> DVector<f64> {
    let j = rows[0].len();
    let n = rows.len() as f64;
    let mut g = DMatrix::<f64>::identity(j, j) * penalty;
    let mut m = DVector::<f64>::zeros(j);
    for (b, &yi) in rows.iter().zip(y) {
        g += b * b.transpose() / n;
        m += b * (yi / n);
    }
    g.try_inverse().expect("invertible") * m
}

fn oracle_equivalence() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // small solves: trend n = 6, J = 4 and covariate n = 6, J = 4
    let raw = Points::new(1, vec![-4.0, -2.5, -0.5, 1.0, 2.0, 4.5]).unwrap();
    let sites = rescale_sites(raw, &[10.0]).unwrap();
    let y = [0.3, -1.2, 0.8, 2.2, 1.1, -0.4];
    let basis = TensorBasis::uniform(3, &[0]).unwrap();
    let fit = fit_trend(&sites, &y, &basis, 0.05).unwrap();
    let want = explicit_beta(&dense_rows(&fit), &y, 0.05);
    let trend_err = (fit.beta() - &want).amax() / want.amax();
    let x = Points::new(1, vec![0.2, 1.4, -0.7, 0.9, 2.5, -1.3]).unwrap();
    let cbasis = TensorBasis::uniform(1, &[0, 0]).unwrap();
    let cfit = fit_covariate(&sites, &x, &y, &cbasis, None, 0.05).unwrap();
    let cwant = explicit_beta(&dense_rows(&cfit), &y, 0.05);
    let cov_err = (cfit.beta() - &cwant).amax() / cwant.amax();
    pass &= trend_err < SMALL_SOLVE_TOL && cov_err < SMALL_SOLVE_TOL;
    notes.push(format!("small solves {:.1e}/{:.1e}", trend_err, cov_err));

    // bucketed HAC against the full double sum
    let sites = SamplingDesign::uniform(vec![60.0, 40.0]).unwrap().draw_sites(1000, 11).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let y: Vec<f64> = sites.scaled().rows().map(|z| z[0] + rng.random_range(-1.0..1.0)).collect();
    let basis = TensorBasis::uniform(2, &[2, 1]).unwrap();
    let fit = fit_trend(&sites, &y, &basis, 1e-3).unwrap();
    let hac = HacConfig::from_fraction(&[60.0, 40.0], 0.1).unwrap();
    let fast = hac_long_run_matrix(&fit, &y, &hac).unwrap();
    let rows = dense_rows(&fit);
    let r = fit.residuals(&y).unwrap();
    let j = basis.total_dimension();
    let mut s = DMatrix::<f64>::zeros(j, j);
    let raw = fit.sites().raw();
    for a in 0..rows.len() {
        for b in 0..rows.len() {
            let lag: Vec<f64> = raw.row(a).iter().zip(raw.row(b)).map(|(u, v)| u - v).collect();
            let w = bartlett_kernel(&lag, &hac.bandwidths);
            if w > 0.0 {
                s += &rows[a] * rows[b].transpose() * (w * r[a] * r[b]);
            }
        }
    }
    let minv = (fit.gram() + DMatrix::identity(j, j) * fit.penalty()).try_inverse().unwrap();
    let n = rows.len() as f64;
    let brute = &minv * s * &minv * (fit.sites().volume() / (n * n));
    let hac_err = (&fast.matrix - &brute).amax() / brute.amax();
    pass &= hac_err < HAC_REL_TOL;
    notes.push(format!("HAC n=1000 {hac_err:.1e}"));

    // field covariance against the quadrature values, d = 1 and d = 2
    let mut worst: f64 = 0.0;
    for d in 1..=2usize {
        let mut model = FieldModel::standard_exponential(1.0).unwrap();
        if d == 2 {
            model = model.with_truncation_radius(8.0).unwrap().with_grid_step(0.25).unwrap();
        }
        let lags = [0.0, 0.5, 1.0, 2.0];
        let clusters = if d == 1 { 50 } else { 16 };
        let gap = 30.0;
        let extent = gap * clusters as f64;
        let mut coords = Vec::new();
        for c in 0..clusters {
            let base = -extent / 2.0 + gap * (c as f64 + 0.25);
            for l in lags {
                coords.push(base + l);
                if d == 2 {
                    coords.push(0.0);
                }
            }
        }
        let scales = vec![extent; d];
        let sites = rescale_sites(Points::new(d, coords).unwrap(), &scales).unwrap();
        let sim = FieldSimulator::new(&model, d).unwrap();
        let mut sums = [0.0f64; 4];
        for rep in 0..FIELD_REPS {
            let mut rng = Streams::new(77).replication(rep + 1).rng(Purpose::Field);
            let e = sim.simulate(&sites, &mut rng).unwrap();
            for c in e.chunks(4) {
                for k in 0..4 {
                    sums[k] += c[0] * c[k];
                }
            }
        }
        let count = (FIELD_REPS as usize * clusters) as f64;
        let mut parts = Vec::new();
        for (k, &l) in lags.iter().enumerate() {
            let mut lag = vec![0.0; d];
            lag[0] = l;
            let oracle = covariance(&model, &lag).unwrap();
            let est = sums[k] / count;
            let rel = (est - oracle).abs() / oracle;
            worst = worst.max(rel);
            parts.push(format!("{est:.3}/{oracle:.3}"));
        }
        notes.push(format!("field d={d} [{}]", parts.join(" ")));
    }
    pass &= worst < FIELD_COV_REL;
    notes.push(format!("worst field rel error {worst:.3}"));
    Outcome { pass, detail: notes.join("; ") }
}

// ---------------------------------------------------------------- 3, 4

fn rate_config(mode: JMode, scale: f64) -> RateStudyConfig {
    RateStudyConfig { j_rule: JRule { mode, scale }, seed: RATE_SEED, ..RateStudyConfig::default() }
}

fn rate(mode: JMode, scale: f64, band: f64) -> Outcome {
    let config = rate_config(mode, scale);
    let result = run_rate_study(&config).unwrap();
    let (slope, errors): (_, Vec<String>) = match mode {
        JMode::L2 => {
            (result.l2_slope.clone(), result.rungs.iter().map(|r| format!("{:.4}", r.mean_l2_error)).collect())
        }
        JMode::Sup => {
            (result.sup_slope.clone(), result.rungs.iter().map(|r| format!("{:.4}", r.mean_sup_error)).collect())
        }
    };
    let js: Vec<String> = result.rungs.iter().map(|r| r.j.to_string()).collect();
    let slope = slope.map_or(f64::NAN, |s| s.slope);
    Outcome {
        pass: (slope - TARGET_SLOPE).abs() <= band,
        detail: format!(
            "slope {slope:.3} (target {TARGET_SLOPE} +- {band}); J = [{}]; errors [{}]",
            js.join(", "),
            errors.join(", ")
        ),
    }
}

// ---------------------------------------------------------------- 5

fn coverage() -> Outcome {
    let config = CoverageStudyConfig::default();
    let result = run_coverage_study(&config).unwrap();
    let rung = &result.rungs[0];
    let ok = rung.coverage.iter().all(|c| within(c.coverage, COVERAGE_BAND.0, COVERAGE_BAND.1));
    let parts: Vec<String> = rung.coverage.iter().map(|c| format!("z={:+.2}: {:.3}", c.point[0], c.coverage)).collect();
    Outcome {
        pass: ok && rung.coverage.len() == 4,
        detail: format!(
            "coverage [{}] in [{}, {}] over {} replications",
            parts.join(", "),
            COVERAGE_BAND.0,
            COVERAGE_BAND.1,
            config.study.replications
        ),
    }
}

// ---------------------------------------------------------------- 6

fn covariate_base() -> CovariateStudyConfig {
    CovariateStudyConfig {
        degree: 3,
        ladder: Vec::new(),
        replications: 100,
        truth: CovariateTruth::SinePlusSquare,
        noise_sd: 0.5,
        covariates: vec![FieldModel::standard_exponential(1.0).unwrap()],
        penalty: PenaltyRule::PerN { c: 1e-3 },
        weight_region: None,
        targets: Vec::new(),
        level: 0.95,
        seed: 11,
    }
}

fn covariate_suite() -> Outcome {
    let ladder = [(500usize, 1usize), (2000, 2), (8000, 4)]
        .iter()
        .map(|&(n, k)| CovariateRung { scales: vec![n as f64], n, knots: vec![k, k] })
        .collect();
    let rates = run_covariate_study(&CovariateStudyConfig { ladder, ..covariate_base() }).unwrap();
    let l2: Vec<f64> = rates.rungs.iter().map(|r| r.mean_l2_error).collect();
    let monotone = l2.windows(2).all(|w| w[1] < w[0]);

    let config = CovariateStudyConfig {
        ladder: vec![CovariateRung { scales: vec![2000.0], n: 2000, knots: vec![4, 1] }],
        replications: 500,
        targets: vec![vec![0.1, 0.3], vec![-0.2, -0.5]],
        ..covariate_base()
    };
    let cov = run_covariate_study(&config).unwrap();
    let points = &cov.rungs[0].coverage;
    let ok = points.iter().all(|c| within(c.coverage, COVERAGE_BAND.0, COVERAGE_BAND.1));
    let parts: Vec<String> =
        points.iter().map(|c| format!("({:+.1}, {:+.1}): {:.3}", c.point[0], c.point[1], c.coverage)).collect();
    Outcome {
        pass: monotone && ok,
        detail: format!(
            "L2 error over n = 500, 2000, 8000: [{}]{}; coverage [{}]",
            l2.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            if monotone { " decreasing" } else { " NOT decreasing" },
            parts.join(", ")
        ),
    }
}

// ---------------------------------------------------------------- 7

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["spatial-ridge"];
    full.extend_from_slice(args);
    let code = spatial_ridge::cli::run_with(full, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn workflow() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sites.csv");
    let model = dir.path().join("model.json");
    let band = dir.path().join("band.csv");
    let (code, _, err) = cli(&["simulate", "--region", "102,74", "--n", "5975", "--seed", "4", "--output", s(&data)]);
    if code != 0 {
        return Outcome { pass: false, detail: format!("simulate failed: {err}") };
    }
    let start = Instant::now();
    let (code, _, err) = cli(&["fit", "--input", s(&data), "--output", s(&model), "--region", "102,74", "--J", "900"]);
    if code != 0 {
        return Outcome { pass: false, detail: format!("fit failed: {err}") };
    }
    let (code, out, err) = cli(&[
        "infer",
        "--fit",
        s(&model),
        "--input",
        s(&data),
        "--grid",
        "100,74",
        "--bandwidth-frac",
        "0.1",
        "--output",
        s(&band),
    ]);
    let elapsed = start.elapsed();
    if code != 0 {
        return Outcome { pass: false, detail: format!("infer failed: {err}") };
    }
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    let mut rdr = csv::Reader::from_path(&band).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().count();
    let clamped = summary["clamped"].as_u64().unwrap_or(u64::MAX) as f64;
    let fraction = clamped / rows.max(1) as f64;
    let surfaces = ["estimate", "se", "lower", "upper"].iter().all(|c| header.iter().any(|h| h == c));
    let pass = elapsed < Duration::from_secs(60) && rows == 7400 && surfaces && fraction <= MAX_CLAMPED_FRACTION;
    Outcome {
        pass,
        detail: format!(
            "fit + infer {:.1} s (< 60 s); {rows} grid rows; columns {}; clamped {clamped} ({:.2}%)",
            elapsed.as_secs_f64(),
            header.join(","),
            100.0 * fraction
        ),
    }
}

fn main() {
    // `cargo test` passes harness flags; a filter argument other than flags selects criteria by number
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: usize| selected.is_empty() || selected.contains(&id);
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let mut all = true;
    if want(1) {
        all &= check(1, "exact reproduction", Duration::from_secs(10), exact_reproduction);
    }
    if want(2) {
        all &= check(2, "oracle equivalence", minutes(2), oracle_equivalence);
    }
    if want(3) {
        all &= check(3, "L2 rate", minutes(10), || rate(JMode::L2, 2.0, L2_SLOPE_BAND));
    }
    if want(4) {
        all &= check(4, "sup-norm rate", minutes(10), || rate(JMode::Sup, 2.8, SUP_SLOPE_BAND));
    }
    if want(5) {
        all &= check(5, "confidence interval coverage", minutes(15), coverage);
    }
    if want(6) {
        all &= check(6, "covariate model", minutes(15), covariate_suite);
    }
    if want(7) {
        all &= check(7, "fit and infer workflow", minutes(5), workflow);
    }
    if !all {
        std::process::exit(1);
    }
}
