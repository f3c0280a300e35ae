//! Monte Carlo studies of convergence rates and interval coverage.
//!
//! Each replication draws fresh sites and data from its own random streams
//! (see [`crate::rng`]); replications run in parallel and are aggregated in
//! index order, so a study is bit-for-bit reproducible from its config.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{factor_dimension, Interval, TensorBasis};
use crate::error::{invalid, Error, Result};
use crate::estimator::{fit_covariate, fit_trend, WeightRegion};
use crate::field::{simulate_covariate_data_with, simulate_trend_data_with, FieldModel, FieldSimulator};
use crate::inference::{confidence_band, covariate_variance, hac_long_run_matrix, HacConfig};
use crate::points::Points;
use crate::rng::{Streams, GENERATOR_NAME};
use crate::sampling::{SamplingDesign, SiteDensity};

/// Studies with fewer replications get a warning about the binomial band.
pub const MIN_RECOMMENDED_REPLICATIONS: usize = 50;
/// Points per dimension of the error grid (total capped at 200^2).
pub const ERROR_GRID_POINTS: usize = 200;
/// An interval whose ends miss the truth by less than this (relative) still
/// covers it; absorbs rounding in degenerate zero-width bands.
pub const COVERAGE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coefficient: f64,
    pub powers: Vec<u32>,
}

/// Trend function on the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    /// `sin(2 pi z_1) * (1 + z_d / 2)`.
    Default,
    Constant {
        value: f64,
    },
    Polynomial {
        terms: Vec<Monomial>,
    },
}

impl Truth {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Truth::Default => (2.0 * std::f64::consts::PI * z[0]).sin() * (1.0 + 0.5 * z[z.len() - 1]),
            Truth::Constant { value } => *value,
            Truth::Polynomial { terms } => terms
                .iter()
                .map(|t| t.coefficient * t.powers.iter().zip(z).map(|(&p, &x)| x.powi(p as i32)).product::<f64>())
                .sum(),
        }
    }
}

/// Regression function of the covariate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateTruth {
    /// `sin(2 pi z_1) + sum_j x_j^2`.
    SinePlusSquare,
    Constant {
        value: f64,
    },
}

impl CovariateTruth {
    pub fn eval(&self, z: &[f64], x: &[f64]) -> f64 {
        match self {
            CovariateTruth::SinePlusSquare => {
                (2.0 * std::f64::consts::PI * z[0]).sin() + x.iter().map(|v| v * v).sum::<f64>()
            }
            CovariateTruth::Constant { value } => *value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JMode {
    /// `J ~ (A_n / log n)^(d / (2r + d))`.
    Sup,
    /// `J ~ A_n^(d / (2r + d))`.
    L2,
}

fn unit_scale() -> f64 {
    1.0
}

/// Basis-size rule `J = round(scale * rate)`; the rates fix `J` only up to a
/// constant factor, which `scale` supplies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JRule {
    pub mode: JMode,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JSelection {
    /// Unrounded rule value.
    pub target: f64,
    pub total: usize,
    pub per_dim: Vec<usize>,
    /// True when the rule fell below the smallest spline space.
    pub clamped: bool,
}

/// Basis size for a region of volume `a_n` with `n` sites, smoothness `r`
/// and dimension `d`, split into per-dimension sizes of at least `degree + 1`.
pub fn select_j(a_n: f64, n: usize, r: f64, d: usize, degree: usize, rule: JRule) -> Result<JSelection> {
    if !(a_n > 1.0 && r > 0.0 && d > 0 && rule.scale > 0.0) {
        return Err(invalid("basis-size rule needs A_n > 1, r > 0, d >= 1 and a positive scale"));
    }
    let exponent = d as f64 / (2.0 * r + d as f64);
    let base = match rule.mode {
        JMode::L2 => a_n,
        JMode::Sup => {
            if n < 2 {
                return Err(invalid("the sup-norm rule needs n >= 2"));
            }
            a_n / (n as f64).ln()
        }
    };
    let target = rule.scale * base.max(1.0).powf(exponent);
    let requested = (target.round() as usize).max(1);
    let (per_dim, clamped) = factor_dimension(requested, &vec![degree + 1; d])?;
    if clamped {
        log::warn!("basis-size rule gives J = {requested}, below the minimum spline dimension; clamping");
    }
    Ok(JSelection { target, total: per_dim.iter().product(), per_dim, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyRule {
    /// `s = c / n`.
    PerN {
        c: f64,
    },
    Fixed {
        value: f64,
    },
}

impl PenaltyRule {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            PenaltyRule::PerN { c } => c / n as f64,
            PenaltyRule::Fixed { value } => *value,
        }
    }
}

impl Default for PenaltyRule {
    fn default() -> Self {
        PenaltyRule::PerN { c: 0.5 }
    }
}

/// One design point of a study ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub scales: Vec<f64>,
    pub n: usize,
    /// Total basis size; taken from the study's rule when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
}

impl Rung {
    pub fn volume(&self) -> f64 {
        self.scales.iter().product()
    }
}

/// Noise amplitudes; both zero gives noiseless data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub eta: f64,
    pub sigma_eps: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.eta) && ok(self.sigma_eps)) {
            return Err(invalid("noise amplitudes must be finite and nonnegative"));
        }
        if (self.eta == 0.0) != (self.sigma_eps == 0.0) {
            return Err(invalid("eta and sigma_eps must both be positive, or both zero for noiseless data"));
        }
        Ok(())
    }

    pub fn noiseless(&self) -> bool {
        self.eta == 0.0
    }
}

fn default_degree() -> usize {
    3
}

fn default_grid_points() -> usize {
    ERROR_GRID_POINTS
}

fn default_density() -> SiteDensity {
    SiteDensity::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyConfig {
    pub smoothness: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    pub ladder: Vec<Rung>,
    pub j_rule: JRule,
    pub replications: usize,
    pub truth: Truth,
    pub noise: NoiseSpec,
    pub field: FieldModel,
    #[serde(default)]
    pub penalty: PenaltyRule,
    #[serde(default = "default_density")]
    pub density: SiteDensity,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub seed: u64,
}

impl RateStudyConfig {
    pub fn dim(&self) -> usize {
        self.ladder.first().map_or(0, |r| r.scales.len())
    }

    fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(invalid("study ladder is empty"));
        }
        let d = self.dim();
        if d == 0 || self.ladder.iter().any(|r| r.scales.len() != d) {
            return Err(invalid("every rung needs the same positive number of region scales"));
        }
        if self.ladder.windows(2).any(|w| w[1].volume() <= w[0].volume()) {
            return Err(invalid("ladder must be strictly increasing in region volume"));
        }
        if self.replications == 0 {
            return Err(invalid("need at least one replication"));
        }
        if self.grid_points < 2 {
            return Err(invalid("error grid needs at least 2 points per dimension"));
        }
        self.noise.validate()?;
        self.field.validate()?;
        Ok(())
    }

    fn selection(&self, rung: &Rung) -> Result<JSelection> {
        let d = self.dim();
        match rung.j {
            Some(j) => {
                let (per_dim, clamped) = factor_dimension(j, &vec![self.degree + 1; d])?;
                Ok(JSelection { target: j as f64, total: per_dim.iter().product(), per_dim, clamped })
            }
            None => select_j(rung.volume(), rung.n, self.smoothness, d, self.degree, self.j_rule),
        }
    }
}

impl Default for RateStudyConfig {
    /// One-dimensional ladder `n = A_n` from 200 to 3200 with an
    /// exponential-kernel Gaussian field and cubic splines.
    fn default() -> Self {
        RateStudyConfig {
            smoothness: 2.0,
            degree: 3,
            ladder: [200.0, 400.0, 800.0, 1600.0, 3200.0]
                .iter()
                .map(|&a| Rung { scales: vec![a], n: a as usize, j: None })
                .collect(),
            j_rule: JRule { mode: JMode::L2, scale: 2.0 },
            replications: 200,
            truth: Truth::Default,
            noise: NoiseSpec { eta: 0.5, sigma_eps: 0.5 },
            field: FieldModel::standard_exponential(1.0).expect("valid kernel"),
            penalty: PenaltyRule::default(),
            density: SiteDensity::Uniform,
            grid_points: ERROR_GRID_POINTS,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudyConfig {
    #[serde(flatten)]
    pub study: RateStudyConfig,
    /// Cube points whose intervals are checked.
    pub targets: Vec<Vec<f64>>,
    pub level: f64,
    pub bandwidth_fraction: f64,
}

impl Default for CoverageStudyConfig {
    /// `A_n = n = 2000`, eight cubic B-splines, three interior targets and
    /// the right boundary. The field decays at rate 4 so that the Bartlett
    /// bandwidth (5 site units) spans many correlation lengths while staying
    /// well inside the support of a basis function.
    fn default() -> Self {
        CoverageStudyConfig {
            study: RateStudyConfig {
                ladder: vec![Rung { scales: vec![2000.0], n: 2000, j: Some(8) }],
                replications: 500,
                field: FieldModel::standard_exponential(4.0).expect("valid kernel"),
                ..RateStudyConfig::default()
            },
            targets: vec![vec![-0.25], vec![0.05], vec![0.3], vec![0.5]],
            level: 0.95,
            bandwidth_fraction: 0.0025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCoverage {
    pub point: Vec<f64>,
    pub truth: f64,
    pub covered: usize,
    pub trials: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungSummary {
    pub scales: Vec<f64>,
    pub volume: f64,
    pub n: usize,
    pub j: usize,
    pub per_dim: Vec<usize>,
    pub penalty: f64,
    pub replications: usize,
    pub mean_sup_error: f64,
    pub se_sup_error: f64,
    pub mean_l2_error: f64,
    pub se_l2_error: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coverage: Vec<PointCoverage>,
    /// Variance estimates clamped from slightly negative values, summed over replications.
    #[serde(default)]
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual-based standard error; absent with fewer than three rungs.
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub generator: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rungs: Vec<RungSummary>,
    /// Slope of log mean L2 error against log region volume.
    pub l2_slope: Option<SlopeFit>,
    /// Slope of log mean grid-sup error against log region volume.
    pub sup_slope: Option<SlopeFit>,
    pub provenance: Provenance,
}

/// Least-squares line through `(x_i, y_i)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    let m = x.len();
    if m < 2 || y.len() != m {
        return None;
    }
    let mx = x.iter().sum::<f64>() / m as f64;
    let my = y.iter().sum::<f64>() / m as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = (m > 2).then(|| {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (m - 2) as f64 / sxx).sqrt()
    });
    Some(SlopeFit { slope, intercept, std_error })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Error grid over the cube with trapezoid weights for `g`.
struct ErrorGrid {
    points: Points,
    weights: Vec<f64>,
}

impl ErrorGrid {
    fn new(d: usize, per_dim_request: usize, density: &SiteDensity) -> Result<Self> {
        let cap = (ERROR_GRID_POINTS * ERROR_GRID_POINTS) as f64;
        let per_dim = if d <= 2 { per_dim_request } else { (cap.powf(1.0 / d as f64).floor() as usize).max(2) };
        let points = Points::grid(&vec![per_dim; d], &vec![Interval::UNIT; d])?;
        let h = 1.0 / (per_dim - 1) as f64;
        let axis: Vec<f64> = (0..per_dim).map(|k| if k == 0 || k == per_dim - 1 { 0.5 * h } else { h }).collect();
        let mut weights = Vec::with_capacity(points.len());
        let mut idx = vec![0usize; d];
        for p in points.rows() {
            let w: f64 = idx.iter().map(|&k| axis[k]).product();
            weights.push(w * density.eval(p));
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < per_dim {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(ErrorGrid { points, weights })
    }
}

struct Replicate {
    sup: f64,
    l2: f64,
    /// Per target: (covered, width, se).
    coverage: Vec<(bool, f64, f64)>,
    clamped: usize,
}

fn covers(lower: f64, upper: f64, truth: f64) -> bool {
    let slack = COVERAGE_SLACK * (1.0 + truth.abs());
    lower - slack <= truth && truth <= upper + slack
}

struct Inference<'a> {
    targets: &'a Points,
    truths: &'a [f64],
    level: f64,
    fraction: f64,
}

fn run_trend(config: &RateStudyConfig, inference: Option<Inference<'_>>) -> Result<StudyResult> {
    config.validate()?;
    let d = config.dim();
    let mut warnings = Vec::new();
    if config.replications < MIN_RECOMMENDED_REPLICATIONS {
        let w = format!(
            "{} replications (< {MIN_RECOMMENDED_REPLICATIONS}) give a wide binomial band for coverage and noisy means",
            config.replications
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let grid = ErrorGrid::new(d, config.grid_points, &config.density)?;
    let truth_grid: Vec<f64> = grid.points.rows().map(|z| config.truth.eval(z)).collect();
    let sim = FieldSimulator::new(&config.field, d)?;
    let truth = |z: &[f64]| config.truth.eval(z);
    let eta = |_: &[f64]| config.noise.eta;
    let sig = |_: &[f64]| config.noise.sigma_eps;

    let mut rungs = Vec::with_capacity(config.ladder.len());
    for (ri, rung) in config.ladder.iter().enumerate() {
        let sel = config.selection(rung)?;
        if sel.clamped {
            warnings.push(format!("rung {ri}: basis size clamped to {:?}", sel.per_dim));
        }
        let knots: Vec<usize> = sel.per_dim.iter().map(|s| s - config.degree - 1).collect();
        let basis = TensorBasis::uniform(config.degree, &knots)?;
        let penalty = config.penalty.value(rung.n);
        let design = SamplingDesign::new(rung.scales.clone(), config.density.clone())?;
        let reps: Vec<Result<Replicate>> = (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let wrap = |e: Error| Error::Study { rung: ri, replication: rep, source: Box::new(e) };
                let streams = Streams::study(config.seed, ri, rep);
                let sites = design.draw_sites(rung.n, streams).map_err(wrap)?;
                let y = if config.noise.noiseless() {
                    sites.scaled().rows().map(truth).collect()
                } else {
                    simulate_trend_data_with(&sim, &truth, &eta, &sig, &sites, streams).map_err(wrap)?
                };
                let fit = fit_trend(&sites, &y, &basis, penalty).map_err(wrap)?;
                let pred = fit.predict(&grid.points).map_err(wrap)?;
                let mut sup: f64 = 0.0;
                let mut l2 = 0.0;
                for k in 0..pred.len() {
                    let e = pred[k] - truth_grid[k];
                    sup = sup.max(e.abs());
                    l2 += grid.weights[k] * e * e;
                }
                let mut coverage = Vec::new();
                let mut clamped = 0;
                if let Some(inf) = &inference {
                    let hac = HacConfig::from_fraction(sites.scales(), inf.fraction).map_err(wrap)?;
                    let var = hac_long_run_matrix(&fit, &y, &hac).map_err(wrap)?;
                    let band = confidence_band(&fit, &var, inf.targets, inf.level).map_err(wrap)?;
                    clamped = band.clamped.len();
                    for (t, &m0) in inf.truths.iter().enumerate() {
                        coverage.push((
                            covers(band.lower[t], band.upper[t], m0),
                            band.upper[t] - band.lower[t],
                            band.se[t],
                        ));
                    }
                }
                Ok(Replicate { sup, l2: l2.sqrt(), coverage, clamped })
            })
            .collect();
        let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
        rungs.push(summarize(rung, &sel, penalty, &reps, inference.as_ref().map(|i| (i.targets, i.truths))));
    }
    let result = StudyResult {
        l2_slope: slope_of(&rungs, |r| r.mean_l2_error),
        sup_slope: slope_of(&rungs, |r| r.mean_sup_error),
        rungs,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            generator: GENERATOR_NAME.into(),
            seed: config.seed,
            config: serde_json::Value::Null,
            warnings,
        },
    };
    Ok(result)
}

fn summarize(
    rung: &Rung,
    sel: &JSelection,
    penalty: f64,
    reps: &[Replicate],
    targets: Option<(&Points, &[f64])>,
) -> RungSummary {
    let sups: Vec<f64> = reps.iter().map(|r| r.sup).collect();
    let l2s: Vec<f64> = reps.iter().map(|r| r.l2).collect();
    let (mean_sup_error, se_sup_error) = mean_and_se(&sups);
    let (mean_l2_error, se_l2_error) = mean_and_se(&l2s);
    let mut coverage = Vec::new();
    if let Some((points, truths)) = targets {
        for (t, p) in points.rows().enumerate() {
            let hits: Vec<&(bool, f64, f64)> = reps.iter().filter_map(|r| r.coverage.get(t)).collect();
            let trials = hits.len();
            let covered = hits.iter().filter(|h| h.0).count();
            coverage.push(PointCoverage {
                point: p.to_vec(),
                truth: truths[t],
                covered,
                trials,
                coverage: if trials > 0 { covered as f64 / trials as f64 } else { 0.0 },
                mean_width: hits.iter().map(|h| h.1).sum::<f64>() / trials.max(1) as f64,
                mean_se: hits.iter().map(|h| h.2).sum::<f64>() / trials.max(1) as f64,
            });
        }
    }
    RungSummary {
        scales: rung.scales.clone(),
        volume: rung.volume(),
        n: rung.n,
        j: sel.total,
        per_dim: sel.per_dim.clone(),
        penalty,
        replications: reps.len(),
        mean_sup_error,
        se_sup_error,
        mean_l2_error,
        se_l2_error,
        coverage,
        clamped: reps.iter().map(|r| r.clamped).sum(),
    }
}

/// Errors below this are treated as exact reproduction and get no slope.
const EXACT_ERROR: f64 = 1e-8;

fn slope_of(rungs: &[RungSummary], err: impl Fn(&RungSummary) -> f64) -> Option<SlopeFit> {
    if rungs.iter().all(|r| err(r) < EXACT_ERROR) || rungs.iter().any(|r| err(r) <= 0.0) {
        return None;
    }
    let x: Vec<f64> = rungs.iter().map(|r| r.volume.ln()).collect();
    let y: Vec<f64> = rungs.iter().map(|r| err(r).ln()).collect();
    fit_line(&x, &y)
}

/// Mean sup and L2 errors per rung, and their log-log slopes.
pub fn run_rate_study(config: &RateStudyConfig) -> Result<StudyResult> {
    let mut result = run_trend(config, None)?;
    result.provenance.config = serde_json::to_value(config)?;
    Ok(result)
}

/// Rate study plus pointwise HAC intervals at the target points.
pub fn run_coverage_study(config: &CoverageStudyConfig) -> Result<StudyResult> {
    let d = config.study.dim();
    if config.targets.is_empty() {
        return Err(invalid("coverage study needs at least one target point"));
    }
    if config.targets.iter().any(|t| t.len() != d || t.iter().any(|v| !(v.abs() <= 0.5))) {
        return Err(invalid("coverage targets must be points of the unit cube"));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(invalid("confidence level must lie in (0, 1)"));
    }
    if !(config.bandwidth_fraction > 0.0 && config.bandwidth_fraction.is_finite()) {
        return Err(invalid("bandwidth fraction must be positive"));
    }
    let targets = Points::from_rows(&config.targets)?;
    let truths: Vec<f64> = targets.rows().map(|z| config.study.truth.eval(z)).collect();
    let inference =
        Inference { targets: &targets, truths: &truths, level: config.level, fraction: config.bandwidth_fraction };
    let mut result = run_trend(&config.study, Some(inference))?;
    result.provenance.config = serde_json::to_value(config)?;
    Ok(result)
}

/// One design point of a covariate-model study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateRung {
    pub scales: Vec<f64>,
    pub n: usize,
    /// Interior knots per dimension, site dimensions first.
    pub knots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateStudyConfig {
    #[serde(default = "default_degree")]
    pub degree: usize,
    pub ladder: Vec<CovariateRung>,
    pub replications: usize,
    pub truth: CovariateTruth,
    /// Constant conditional standard deviation of the errors.
    pub noise_sd: f64,
    /// One field model per covariate.
    pub covariates: Vec<FieldModel>,
    #[serde(default)]
    pub penalty: PenaltyRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_region: Option<WeightRegion>,
    /// Points `(z, x)` with `x` in raw covariate units.
    #[serde(default)]
    pub targets: Vec<Vec<f64>>,
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: u64,
}

fn default_level() -> f64 {
    0.95
}

/// Covariate-model study: in-sample empirical L2 error of the fit and, at
/// the target points, coverage of the sandwich intervals. The sup-error
/// fields of the summaries hold the in-sample maximum error.
pub fn run_covariate_study(config: &CovariateStudyConfig) -> Result<StudyResult> {
    let p = config.covariates.len();
    let d = config.ladder.first().map_or(0, |r| r.scales.len());
    if p == 0 || d == 0 {
        return Err(invalid("covariate study needs sites and at least one covariate"));
    }
    if config.ladder.iter().any(|r| r.scales.len() != d || r.knots.len() != d + p) {
        return Err(invalid("every rung needs d scales and d + p knot counts"));
    }
    if config.replications == 0 || !(config.noise_sd > 0.0) {
        return Err(invalid("need replications and a positive noise level"));
    }
    if config.targets.iter().any(|t| t.len() != d + p) {
        return Err(invalid("targets must have d + p coordinates"));
    }
    let mut warnings = Vec::new();
    if config.replications < MIN_RECOMMENDED_REPLICATIONS && !config.targets.is_empty() {
        let w = format!(
            "{} replications (< {MIN_RECOMMENDED_REPLICATIONS}) give a wide binomial band",
            config.replications
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let sims = config.covariates.iter().map(|m| FieldSimulator::new(m, d)).collect::<Result<Vec<_>>>()?;
    let m0 = |z: &[f64], x: &[f64]| config.truth.eval(z, x);
    let h = |_: &[f64], _: &[f64]| config.noise_sd;
    let truths: Vec<f64> = config.targets.iter().map(|t| config.truth.eval(&t[..d], &t[d..])).collect();

    let mut rungs = Vec::new();
    for (ri, rung) in config.ladder.iter().enumerate() {
        let basis = TensorBasis::uniform(config.degree, &rung.knots)?;
        let penalty = config.penalty.value(rung.n);
        let design = SamplingDesign::uniform(rung.scales.clone())?;
        let reps: Vec<Result<Replicate>> = (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let wrap = |e: Error| Error::Study { rung: ri, replication: rep, source: Box::new(e) };
                let streams = Streams::study(config.seed, ri, rep);
                let sites = design.draw_sites(rung.n, streams).map_err(wrap)?;
                let (y, x) = simulate_covariate_data_with(&sims, &m0, &h, &sites, streams).map_err(wrap)?;
                let fit = fit_covariate(&sites, &x, &y, &basis, config.weight_region.clone(), penalty).map_err(wrap)?;
                let map = fit.predictor().covariate_map().expect("covariate fit").clone();
                let region = fit.predictor().weight_region().expect("covariate fit").clone();
                let mut sq = 0.0;
                let mut sup: f64 = 0.0;
                let mut kept = 0usize;
                for (i, row) in fit.design_rows().iter().enumerate() {
                    if row.indices.is_empty() {
                        continue;
                    }
                    let e = fit.fitted_values()[i] - m0(sites.scaled().row(i), x.row(i));
                    sq += e * e;
                    sup = sup.max(e.abs());
                    kept += 1;
                }
                let mut coverage = Vec::new();
                if !config.targets.is_empty() {
                    let var = covariate_variance(&fit, &y).map_err(wrap)?;
                    for (t, target) in config.targets.iter().enumerate() {
                        let s = map.standardize(&target[d..]);
                        if !(region.contains(&s) && s.iter().all(|v| v.abs() <= 0.5)) {
                            continue;
                        }
                        let mut point = target[..d].to_vec();
                        point.extend(s);
                        let band =
                            confidence_band(&fit, &var, &Points::from_rows(&[point]).map_err(wrap)?, config.level)
                                .map_err(wrap)?;
                        coverage.push((
                            covers(band.lower[0], band.upper[0], truths[t]),
                            band.upper[0] - band.lower[0],
                            band.se[0],
                        ));
                    }
                    if coverage.len() != config.targets.len() {
                        // keep target alignment: mark replications where a target left the covariate range
                        return Err(wrap(invalid("a target covariate value fell outside the observed range")));
                    }
                }
                Ok(Replicate { sup, l2: (sq / kept as f64).sqrt(), coverage, clamped: 0 })
            })
            .collect();
        let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
        let total: usize = rung.knots.iter().map(|k| k + config.degree + 1).product();
        let sel = JSelection {
            target: total as f64,
            total,
            per_dim: rung.knots.iter().map(|k| k + config.degree + 1).collect(),
            clamped: false,
        };
        let as_rung = Rung { scales: rung.scales.clone(), n: rung.n, j: Some(total) };
        let targets = Points::from_rows(&config.targets)?;
        let coverage_targets = (!config.targets.is_empty()).then_some((&targets, truths.as_slice()));
        rungs.push(summarize(&as_rung, &sel, penalty, &reps, coverage_targets));
    }
    let x: Vec<f64> = rungs.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rungs.iter().map(|r| r.mean_l2_error.ln()).collect();
    Ok(StudyResult {
        l2_slope: fit_line(&x, &y),
        sup_slope: None,
        rungs,
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            generator: GENERATOR_NAME.into(),
            seed: config.seed,
            config: serde_json::to_value(config)?,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_j_examples() {
        let rule = JRule { mode: JMode::L2, scale: 1.0 };
        let s = select_j(1024.0, 1024, 2.0, 1, 3, rule).unwrap();
        assert_eq!(s.total, 4);
        assert!(!s.clamped);
        let s = select_j(200.0, 200, 2.0, 1, 3, rule).unwrap();
        assert_eq!(s.total, 4);
        assert!(s.clamped);
        // 1e4^(2/6) = 21.54 -> 22 -> 5 x 4
        let s = select_j(1e4, 1e4 as usize, 2.0, 2, 3, rule).unwrap();
        assert_eq!(s.per_dim, vec![5, 4]);
    }

    #[test]
    fn select_j_is_monotone() {
        for mode in [JMode::L2, JMode::Sup] {
            let rule = JRule { mode, scale: 2.5 };
            let mut last = 0;
            for k in 1..200 {
                let a = 10.0 * k as f64;
                let j = select_j(a, 500, 2.0, 1, 3, rule).unwrap().total;
                assert!(j >= last);
                last = j;
            }
        }
    }

    #[test]
    fn line_fit() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 0.6, 0.2];
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.4).abs() < 1e-12);
        assert!(f.std_error.unwrap() < 1e-12);
    }

    #[test]
    fn default_truth() {
        assert!((Truth::Default.eval(&[0.25, 0.5]) - 1.25).abs() < 1e-15);
        assert!((Truth::Default.eval(&[0.25]) - 1.125).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_weights_integrate_density() {
        let density = SiteDensity::Uniform;
        let g = ErrorGrid::new(2, 11, &density).unwrap();
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
