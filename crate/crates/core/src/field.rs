//! Stationary moving-average random fields driven by Levy noise.
//!
//! A field is `e(x) = int theta(x - u) L(du)` with an isotropic kernel
//! `theta` truncated at radius `R`. Simulation discretizes the driving
//! measure on a grid (Gaussian driver) or draws its atoms exactly (compound
//! Poisson driver) over the sampling region enlarged by `R` on every side.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::points::Points;
use crate::quadrature::{integrate_with_breaks, DEFAULT_MAX_INTERVALS};
use crate::rng::{Purpose, Streams};
use crate::sampling::SiteSet;

/// Kernel e-folding lengths covered by the default truncation radius
/// (`max(5, ln 1e8)`): the kernel has decayed by 1e-8 at the cut.
pub const DEFAULT_TRUNCATION_FOLDS: f64 = 18.420_680_743_952_367;
/// Minimum truncation radius in e-folding lengths.
pub const MIN_TRUNCATION_FOLDS: f64 = 5.0;
/// Default grid cells per e-folding length.
pub const DEFAULT_CELLS_PER_FOLD: f64 = 8.0;
pub const DEFAULT_MAX_CELLS: usize = 1 << 26;
/// Absolute tolerance of covariance quadrature for a unit-scale kernel.
pub const COVARIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `theta(x) = r0 * exp(-r1 |x|)`.
    Exponential { r0: f64, r1: f64 },
    /// Isotropic CARMA kernel with autoregressive roots `lambda` (distinct,
    /// negative) and moving-average zeros `xi`, that is
    /// `b(z) = prod (z^2 - xi_j^2)` and `a(z) = prod (z^2 - lambda_i^2)`.
    CarmaIsotropic { lambda: Vec<f64>, xi: Vec<f64> },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Exponential { r0, r1 } => {
                if !(r0.is_finite() && *r0 != 0.0) {
                    return Err(invalid("exponential kernel needs a finite nonzero r0"));
                }
                if !(r1.is_finite() && *r1 > 0.0) {
                    return Err(invalid("exponential kernel needs r1 > 0"));
                }
            }
            KernelSpec::CarmaIsotropic { lambda, xi } => {
                if lambda.is_empty() {
                    return Err(invalid("CARMA kernel needs at least one autoregressive root"));
                }
                if lambda.iter().any(|l| !(l.is_finite() && *l < 0.0)) {
                    return Err(invalid("CARMA autoregressive roots must be negative and finite"));
                }
                for (i, a) in lambda.iter().enumerate() {
                    if lambda[i + 1..].contains(a) {
                        return Err(invalid("CARMA autoregressive roots must be distinct"));
                    }
                }
                if xi.len() >= lambda.len() {
                    return Err(invalid("CARMA moving-average order must be below the autoregressive order"));
                }
                if xi.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("CARMA moving-average zeros must be finite"));
                }
                if lambda.iter().any(|l| xi.iter().any(|x| x * x == l * l)) {
                    return Err(invalid("CARMA roots must satisfy lambda_i^2 != xi_j^2"));
                }
            }
        }
        Ok(())
    }

    /// Kernel as a sum of exponentials `(c_i, lambda_i)`, `theta(r) = sum c_i exp(lambda_i r)`.
    pub fn terms(&self) -> Vec<(f64, f64)> {
        match self {
            KernelSpec::Exponential { r0, r1 } => vec![(*r0, -*r1)],
            KernelSpec::CarmaIsotropic { lambda, xi } => lambda
                .iter()
                .enumerate()
                .map(|(i, &li)| {
                    let b: f64 = xi.iter().map(|x| li * li - x * x).product();
                    let others: f64 =
                        lambda.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, lk)| li * li - lk * lk).product();
                    (b / (2.0 * li * others), li)
                })
                .collect(),
        }
    }

    /// Slowest exponential decay rate.
    pub fn decay_rate(&self) -> f64 {
        match self {
            KernelSpec::Exponential { r1, .. } => *r1,
            KernelSpec::CarmaIsotropic { lambda, .. } => lambda.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn eval_radius(&self, r: f64) -> f64 {
        self.terms().iter().map(|(c, l)| c * (l * r).exp()).sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_radius(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpDistribution {
    Normal {
        variance: f64,
    },
    /// Symmetric jumps of size `+magnitude` or `-magnitude`.
    TwoPoint {
        magnitude: f64,
    },
}

impl JumpDistribution {
    pub fn second_moment(&self) -> f64 {
        match self {
            JumpDistribution::Normal { variance } => *variance,
            JumpDistribution::TwoPoint { magnitude } => magnitude * magnitude,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            JumpDistribution::Normal { variance } => variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
            JumpDistribution::TwoPoint { magnitude } => {
                if rng.random::<bool>() {
                    *magnitude
                } else {
                    -*magnitude
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyDriver {
    /// Gaussian white noise with variance `sigma0` per unit volume.
    Gaussian { sigma0: f64 },
    /// Poisson atoms of intensity `rate` carrying i.i.d. zero-mean jumps.
    CompoundPoisson { rate: f64, jumps: JumpDistribution },
}

impl LevyDriver {
    pub fn validate(&self) -> Result<()> {
        match self {
            LevyDriver::Gaussian { sigma0 } => {
                if !(sigma0.is_finite() && *sigma0 > 0.0) {
                    return Err(invalid("Gaussian driver needs sigma0 > 0"));
                }
            }
            LevyDriver::CompoundPoisson { rate, jumps } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(invalid("compound Poisson driver needs a positive rate"));
                }
                let v = jumps.second_moment();
                if !(v.is_finite() && v > 0.0) {
                    return Err(invalid("compound Poisson jumps must have positive finite variance"));
                }
            }
        }
        Ok(())
    }

    /// Variance of `L(B)` per unit volume of `B`.
    pub fn variance_rate(&self) -> f64 {
        match self {
            LevyDriver::Gaussian { sigma0 } => *sigma0,
            LevyDriver::CompoundPoisson { rate, jumps } => rate * jumps.second_moment(),
        }
    }
}

fn default_normalize() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub kernel: KernelSpec,
    pub driver: LevyDriver,
    /// Grid step of the Gaussian discretization, default 1/8 of the kernel's
    /// e-folding length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    /// Kernel truncation radius, default `ln(1e8)` e-folding lengths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_radius: Option<f64>,
    /// Rescale to unit marginal variance.
    #[serde(default = "default_normalize")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cells: Option<usize>,
}

impl FieldModel {
    pub fn new(kernel: KernelSpec, driver: LevyDriver, normalize: bool) -> Result<Self> {
        let m = FieldModel { kernel, driver, grid_step: None, truncation_radius: None, normalize, max_cells: None };
        m.validate()?;
        Ok(m)
    }

    /// Exponential kernel with unit parameters and a unit Gaussian driver.
    pub fn standard_exponential(r1: f64) -> Result<Self> {
        Self::new(KernelSpec::Exponential { r0: 1.0, r1 }, LevyDriver::Gaussian { sigma0: 1.0 }, true)
    }

    pub fn with_grid_step(mut self, h: f64) -> Result<Self> {
        self.grid_step = Some(h);
        self.validate()?;
        Ok(self)
    }

    pub fn with_truncation_radius(mut self, r: f64) -> Result<Self> {
        self.truncation_radius = Some(r);
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_cells(mut self, cells: usize) -> Self {
        self.max_cells = Some(cells);
        self
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step.unwrap_or(1.0 / (DEFAULT_CELLS_PER_FOLD * self.kernel.decay_rate()))
    }

    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius.unwrap_or(DEFAULT_TRUNCATION_FOLDS / self.kernel.decay_rate())
    }

    pub fn max_cells(&self) -> usize {
        self.max_cells.unwrap_or(DEFAULT_MAX_CELLS)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.driver.validate()?;
        let rate = self.kernel.decay_rate();
        let r = self.truncation_radius();
        if !(r.is_finite() && r * rate >= MIN_TRUNCATION_FOLDS * (1.0 - 1e-12)) {
            return Err(invalid(format!(
                "truncation radius {r} is below {MIN_TRUNCATION_FOLDS} e-folding lengths of the kernel"
            )));
        }
        let h = self.grid_step();
        if !(h.is_finite() && h > 0.0 && h < r) {
            return Err(invalid("grid step must be positive and below the truncation radius"));
        }
        Ok(())
    }
}

fn theta(terms: &[(f64, f64)], r: f64) -> f64 {
    terms.iter().map(|(c, l)| c * (l * r).exp()).sum()
}

/// Surface area of the unit sphere in R^k (`k >= 1`).
fn sphere_area(k: usize) -> f64 {
    match k {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 2.0) * sphere_area(k - 2),
    }
}

/// `int theta(u) theta(u + x) du` over `R^d` for the truncated kernel, at
/// lag length `x`.
fn kernel_autocorrelation(terms: &[(f64, f64)], radius: f64, d: usize, x: f64, tol: f64) -> Result<f64> {
    let x = x.abs();
    if x >= 2.0 * radius {
        return Ok(0.0);
    }
    let r2 = radius * radius;
    let th = |r: f64| if r <= radius { theta(terms, r) } else { 0.0 };
    let breaks = [-radius, -x, -0.5 * x, 0.0, radius - x];
    if d == 1 {
        let f = |u: f64| th(u.abs()) * th((u + x).abs());
        return Ok(integrate_with_breaks(f, &breaks, tol, DEFAULT_MAX_INTERVALS)?.value);
    }
    // coordinates along the lag (t) and perpendicular to it (rho)
    let area = sphere_area(d - 1);
    let outer_len = 2.0 * radius - x;
    let inner_tol = 0.5 * tol / outer_len;
    let mut failure = None;
    let outer = |t: f64| {
        let cap = r2 - t.max(-t).max((t + x).abs()).powi(2);
        if cap <= 0.0 {
            return 0.0;
        }
        let top = cap.sqrt();
        let g = |rho: f64| {
            let rr = rho * rho;
            rho.powi(d as i32 - 2) * th((t * t + rr).sqrt()) * th(((t + x) * (t + x) + rr).sqrt())
        };
        match integrate_with_breaks(g, &[0.0, top], inner_tol, DEFAULT_MAX_INTERVALS) {
            Ok(e) => area * e.value,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let value = integrate_with_breaks(outer, &breaks, 0.5 * tol, DEFAULT_MAX_INTERVALS)?.value;
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Quadrature tolerance scaled to the kernel's magnitude.
fn tolerance(terms: &[(f64, f64)], rate: f64, d: usize) -> f64 {
    let peak = terms.iter().map(|(c, _)| c.abs()).sum::<f64>();
    COVARIANCE_TOLERANCE * (peak * peak / rate.powi(d as i32)).max(1.0)
}

/// Covariance `E[e(0) e(lag)]`; the dimension is `lag.len()`.
pub fn covariance(model: &FieldModel, lag: &[f64]) -> Result<f64> {
    model.validate()?;
    let d = lag.len();
    if d == 0 {
        return Err(invalid("lag must have at least one coordinate"));
    }
    let terms = model.kernel.terms();
    let radius = model.truncation_radius();
    let tol = tolerance(&terms, model.kernel.decay_rate(), d);
    let norm = lag.iter().map(|v| v * v).sum::<f64>().sqrt();
    let value = kernel_autocorrelation(&terms, radius, d, norm, tol)?;
    if model.normalize {
        let zero = kernel_autocorrelation(&terms, radius, d, 0.0, tol)?;
        Ok(value / zero)
    } else {
        Ok(model.driver.variance_rate() * value)
    }
}

/// A field model prepared for repeated simulation in a fixed dimension.
#[derive(Debug, Clone)]
pub struct FieldSimulator {
    model: FieldModel,
    terms: Vec<(f64, f64)>,
    dim: usize,
    /// Multiplier applied to raw simulated values.
    scale: f64,
}

impl FieldSimulator {
    pub fn new(model: &FieldModel, dim: usize) -> Result<Self> {
        model.validate()?;
        if dim == 0 {
            return Err(invalid("field dimension must be positive"));
        }
        let terms = model.kernel.terms();
        let scale = if model.normalize {
            let tol = tolerance(&terms, model.kernel.decay_rate(), dim);
            let var0 = model.driver.variance_rate()
                * kernel_autocorrelation(&terms, model.truncation_radius(), dim, 0.0, tol)?;
            1.0 / var0.sqrt()
        } else {
            1.0
        };
        Ok(FieldSimulator { model: model.clone(), terms, dim, scale })
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    /// Field values at the raw site coordinates.
    pub fn simulate<R: Rng + ?Sized>(&self, sites: &SiteSet, rng: &mut R) -> Result<Vec<f64>> {
        if sites.n() == 0 {
            return Err(invalid("no sites to simulate at"));
        }
        if sites.dim() != self.dim {
            return Err(invalid(format!("simulator is {}-dimensional, sites are {}", self.dim, sites.dim())));
        }
        let radius = self.model.truncation_radius();
        let lower: Vec<f64> = sites.scales().iter().zip(sites.offset()).map(|(a, o)| o - 0.5 * a - radius).collect();
        let extent: Vec<f64> = sites.scales().iter().map(|a| a + 2.0 * radius).collect();
        let mut values = match &self.model.driver {
            LevyDriver::Gaussian { sigma0 } => self.gaussian(sites, &lower, &extent, *sigma0, rng)?,
            LevyDriver::CompoundPoisson { rate, jumps } => self.poisson(sites, &lower, &extent, *rate, jumps, rng)?,
        };
        for v in &mut values {
            *v *= self.scale;
        }
        Ok(values)
    }

    fn gaussian<R: Rng + ?Sized>(
        &self,
        sites: &SiteSet,
        lower: &[f64],
        extent: &[f64],
        sigma0: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let d = self.dim;
        let h = self.model.grid_step();
        let radius = self.model.truncation_radius();
        let counts: Vec<usize> = extent.iter().map(|e| (e / h).ceil() as usize).collect();
        let cells: u128 = counts.iter().map(|&c| c as u128).product();
        if cells > self.model.max_cells() as u128 {
            return Err(Error::CellBudget { cells, budget: self.model.max_cells() });
        }
        let sd = (sigma0 * h.powi(d as i32)).sqrt();
        let noise: Vec<f64> = (0..cells as usize).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let r2 = radius * radius;
        let terms = &self.terms;
        let out = sites
            .raw()
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|x| {
                // cell k of dimension j has center lower_j + (k + 1/2) h
                let lo: Vec<usize> =
                    (0..d).map(|j| ((x[j] - radius - lower[j]) / h - 0.5).ceil().max(0.0) as usize).collect();
                let hi: Vec<usize> = (0..d)
                    .map(|j| (((x[j] + radius - lower[j]) / h - 0.5).floor() as usize).min(counts[j] - 1))
                    .collect();
                let mut idx = lo.clone();
                let mut total = 0.0;
                'cells: loop {
                    let mut dist2 = 0.0;
                    let mut flat = 0;
                    for j in 0..d {
                        let c = lower[j] + (idx[j] as f64 + 0.5) * h;
                        dist2 += (x[j] - c) * (x[j] - c);
                        flat += idx[j] * strides[j];
                    }
                    if dist2 <= r2 {
                        total += theta(terms, dist2.sqrt()) * noise[flat];
                    }
                    for j in (0..d).rev() {
                        if idx[j] < hi[j] {
                            idx[j] += 1;
                            continue 'cells;
                        }
                        idx[j] = lo[j];
                    }
                    break;
                }
                total
            })
            .collect();
        Ok(out)
    }

    fn poisson<R: Rng + ?Sized>(
        &self,
        sites: &SiteSet,
        lower: &[f64],
        extent: &[f64],
        rate: f64,
        jumps: &JumpDistribution,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let d = self.dim;
        let radius = self.model.truncation_radius();
        let volume: f64 = extent.iter().product();
        let mean = rate * volume;
        let count = if mean > 0.0 {
            Poisson::new(mean).map_err(|e| invalid(format!("Poisson mean {mean}: {e}")))?.sample(rng) as u128
        } else {
            0
        };
        if count > self.model.max_cells() as u128 {
            return Err(Error::CellBudget { cells: count, budget: self.model.max_cells() });
        }
        let count = count as usize;
        let mut atoms = Vec::with_capacity(count * d);
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            for j in 0..d {
                atoms.push(lower[j] + extent[j] * rng.random::<f64>());
            }
            weights.push(jumps.sample(rng));
        }
        // bucket atoms into cells of edge `radius`
        let counts: Vec<usize> = extent.iter().map(|e| ((e / radius).ceil() as usize).max(1)).collect();
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        let cell_of = |p: &[f64]| -> Vec<usize> {
            (0..d).map(|j| (((p[j] - lower[j]) / radius).floor() as usize).min(counts[j] - 1)).collect()
        };
        let total_cells: usize = counts.iter().product();
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); total_cells];
        for a in 0..count {
            let c = cell_of(&atoms[a * d..(a + 1) * d]);
            let flat: usize = c.iter().zip(&strides).map(|(c, s)| c * s).sum();
            buckets[flat].push(a);
        }
        let r2 = radius * radius;
        let terms = &self.terms;
        let out = sites
            .raw()
            .rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|x| {
                let home = cell_of(x);
                let lo: Vec<usize> = home.iter().map(|&c| c.saturating_sub(1)).collect();
                let hi: Vec<usize> = home.iter().zip(&counts).map(|(&c, &n)| (c + 1).min(n - 1)).collect();
                let mut idx = lo.clone();
                let mut total = 0.0;
                'cells: loop {
                    let flat: usize = idx.iter().zip(&strides).map(|(c, s)| c * s).sum();
                    for &a in &buckets[flat] {
                        let p = &atoms[a * d..(a + 1) * d];
                        let dist2: f64 = (0..d).map(|j| (x[j] - p[j]) * (x[j] - p[j])).sum();
                        if dist2 <= r2 {
                            total += theta(terms, dist2.sqrt()) * weights[a];
                        }
                    }
                    for j in (0..d).rev() {
                        if idx[j] < hi[j] {
                            idx[j] += 1;
                            continue 'cells;
                        }
                        idx[j] = lo[j];
                    }
                    break;
                }
                total
            })
            .collect();
        Ok(out)
    }
}

/// Field values at the sites, from the field stream of `streams`.
pub fn simulate_field(model: &FieldModel, sites: &SiteSet, streams: impl Into<Streams>) -> Result<Vec<f64>> {
    let sim = FieldSimulator::new(model, sites.dim())?;
    sim.simulate(sites, &mut streams.into().rng(Purpose::Field))
}

/// Scalar function on the unit cube (or cube times covariate space).
pub type SurfaceFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

fn check_positive(f: SurfaceFn<'_>, sites: &SiteSet, name: &str) -> Result<Vec<f64>> {
    sites
        .scaled()
        .rows()
        .enumerate()
        .map(|(i, z)| {
            let v = f(z);
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(invalid(format!("{name} must be positive; got {v} at site {i}")))
            }
        })
        .collect()
}

/// `Y_i = m0(z_i) + eta(z_i) e(S_i) + sigma_eps(z_i) eps_i` with
/// `z_i = S_i / A`.
pub fn simulate_trend_data_with(
    sim: &FieldSimulator,
    m0: SurfaceFn<'_>,
    eta: SurfaceFn<'_>,
    sigma_eps: SurfaceFn<'_>,
    sites: &SiteSet,
    streams: Streams,
) -> Result<Vec<f64>> {
    let eta_v = check_positive(eta, sites, "eta")?;
    let sig_v = check_positive(sigma_eps, sites, "sigma_eps")?;
    let field = sim.simulate(sites, &mut streams.rng(Purpose::Field))?;
    let mut noise = streams.rng(Purpose::Noise);
    Ok(sites
        .scaled()
        .rows()
        .enumerate()
        .map(|(i, z)| m0(z) + eta_v[i] * field[i] + sig_v[i] * noise.sample::<f64, _>(StandardNormal))
        .collect())
}

pub fn simulate_trend_data(
    m0: SurfaceFn<'_>,
    eta: SurfaceFn<'_>,
    sigma_eps: SurfaceFn<'_>,
    model: &FieldModel,
    sites: &SiteSet,
    streams: impl Into<Streams>,
) -> Result<Vec<f64>> {
    let sim = FieldSimulator::new(model, sites.dim())?;
    simulate_trend_data_with(&sim, m0, eta, sigma_eps, sites, streams.into())
}

/// Regression function of the covariate model, called as `f(z, x)`.
pub type CovariateFn<'a> = &'a (dyn Fn(&[f64], &[f64]) -> f64 + Sync);

/// Covariates `X_j` are independent fields; `Y_i = m0(z_i, X_i) + h(z_i, X_i) eps_i`.
pub fn simulate_covariate_data_with(
    sims: &[FieldSimulator],
    m0: CovariateFn<'_>,
    h_var: CovariateFn<'_>,
    sites: &SiteSet,
    streams: Streams,
) -> Result<(Vec<f64>, Points)> {
    let p = sims.len();
    if p == 0 {
        return Err(invalid("covariate model needs at least one covariate"));
    }
    let columns = sims
        .iter()
        .enumerate()
        .map(|(j, s)| s.simulate(sites, &mut streams.rng_offset(Purpose::Covariate, j as u64)))
        .collect::<Result<Vec<_>>>()?;
    let n = sites.n();
    let mut x = Vec::with_capacity(n * p);
    for i in 0..n {
        x.extend(columns.iter().map(|c| c[i]));
    }
    let x = Points::new(p, x)?;
    let mut noise = streams.rng(Purpose::Noise);
    let mut y = Vec::with_capacity(n);
    for (i, z) in sites.scaled().rows().enumerate() {
        let xi = x.row(i);
        let h = h_var(z, xi);
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid(format!("h_var must be positive; got {h} at site {i}")));
        }
        y.push(m0(z, xi) + h * noise.sample::<f64, _>(StandardNormal));
    }
    Ok((y, x))
}

pub fn simulate_covariate_data(
    m0: CovariateFn<'_>,
    h_var: CovariateFn<'_>,
    x_models: &[FieldModel],
    sites: &SiteSet,
    streams: impl Into<Streams>,
) -> Result<(Vec<f64>, Points)> {
    let sims = x_models.iter().map(|m| FieldSimulator::new(m, sites.dim())).collect::<Result<Vec<_>>>()?;
    simulate_covariate_data_with(&sims, m0, h_var, sites, streams.into())
}
