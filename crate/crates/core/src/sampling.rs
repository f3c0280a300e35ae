//! Random sampling sites on rectangular regions and their rescaling into
//! the centered unit cube.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::points::Points;
use crate::rng::{Purpose, Streams};

/// Relative slack allowed when checking that sites lie inside the region.
const REGION_SLACK: f64 = 1e-12;

/// Polynomial in ascending powers on [-1/2, 1/2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub coefficients: Vec<f64>,
}

impl Polynomial {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Polynomial { coefficients }
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * z + c)
    }

    /// Exact integral over [-1/2, 1/2].
    pub fn integral(&self) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(k, _)| k % 2 == 0)
            .map(|(k, &c)| c * 2.0 * 0.5f64.powi(k as i32 + 1) / (k as f64 + 1.0))
            .sum()
    }

    /// Bound on |p'| over [-1/2, 1/2].
    fn lipschitz(&self) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| (k as f64 * c).abs() * 0.5f64.powi(k as i32 - 1))
            .sum()
    }

    /// Rigorous lower and upper bounds of p on the interval, from a fine grid
    /// widened by the Lipschitz bound.
    fn bounds(&self) -> (f64, f64) {
        const STEPS: usize = 4096;
        let h = 1.0 / STEPS as f64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=STEPS {
            let v = self.eval(-0.5 + k as f64 * h);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let pad = self.lipschitz() * h / 2.0;
        (lo - pad, hi + pad)
    }
}

/// Density of the rescaled sites on the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SiteDensity {
    Uniform,
    /// Product of one polynomial marginal per dimension (unnormalized).
    PolynomialProduct {
        marginals: Vec<Polynomial>,
    },
}

impl SiteDensity {
    fn validate(&self, d: usize) -> Result<()> {
        if let SiteDensity::PolynomialProduct { marginals } = self {
            if marginals.len() != d {
                return Err(invalid(format!("density has {} marginals, design has {d} dimensions", marginals.len())));
            }
            for (j, m) in marginals.iter().enumerate() {
                if m.coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(invalid(format!("marginal {j} has non-finite coefficients")));
                }
                let (lo, _) = m.bounds();
                if lo <= 0.0 {
                    return Err(invalid(format!("marginal {j} is not bounded away from zero on [-1/2, 1/2]")));
                }
            }
        }
        Ok(())
    }

    /// Normalized density at a cube point.
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            SiteDensity::Uniform => 1.0,
            SiteDensity::PolynomialProduct { marginals } => {
                marginals.iter().zip(z).map(|(m, &t)| m.eval(t) / m.integral()).product()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDesign {
    scales: Vec<f64>,
    density: SiteDensity,
}

impl SamplingDesign {
    pub fn new(scales: Vec<f64>, density: SiteDensity) -> Result<Self> {
        if scales.is_empty() {
            return Err(invalid("sampling design needs at least one dimension"));
        }
        if scales.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid("region scales must be positive and finite"));
        }
        density.validate(scales.len())?;
        Ok(SamplingDesign { scales, density })
    }

    pub fn uniform(scales: Vec<f64>) -> Result<Self> {
        Self::new(scales, SiteDensity::Uniform)
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn density(&self) -> &SiteDensity {
        &self.density
    }

    /// `n` i.i.d. sites. Uses the sites stream of `streams`.
    pub fn draw_sites(&self, n: usize, streams: impl Into<Streams>) -> Result<SiteSet> {
        if n == 0 {
            return Err(invalid("need at least one site"));
        }
        let mut rng = streams.into().rng(Purpose::Sites);
        let d = self.dim();
        let envelopes: Vec<(f64, &Polynomial)> = match &self.density {
            SiteDensity::Uniform => Vec::new(),
            SiteDensity::PolynomialProduct { marginals } => marginals.iter().map(|m| (m.bounds().1, m)).collect(),
        };
        let mut scaled = Vec::with_capacity(n * d);
        for _ in 0..n {
            for j in 0..d {
                let z = match envelopes.get(j) {
                    None => rng.random::<f64>() - 0.5,
                    Some(&(sup, m)) => loop {
                        let z = rng.random::<f64>() - 0.5;
                        if rng.random::<f64>() * sup <= m.eval(z) {
                            break z;
                        }
                    },
                };
                scaled.push(z);
            }
        }
        let raw: Vec<f64> = scaled.iter().enumerate().map(|(k, z)| z * self.scales[k % d]).collect();
        Ok(SiteSet {
            raw: Points::new(d, raw)?,
            scaled: Points::new(d, scaled)?,
            scales: self.scales.clone(),
            offset: vec![0.0; d],
        })
    }
}

/// Sites in user coordinates together with their unit-cube images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    raw: Points,
    scaled: Points,
    scales: Vec<f64>,
    offset: Vec<f64>,
}

impl SiteSet {
    pub fn n(&self) -> usize {
        self.raw.len()
    }

    pub fn dim(&self) -> usize {
        self.raw.dim()
    }

    pub fn raw(&self) -> &Points {
        &self.raw
    }

    pub fn scaled(&self) -> &Points {
        &self.scaled
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Region volume `A_n`.
    pub fn volume(&self) -> f64 {
        self.scales.iter().product()
    }

    /// User coordinates of a cube point.
    pub fn to_raw(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.scales).zip(&self.offset).map(|((z, a), o)| z * a + o).collect()
    }
}

/// Rescales sites lying in the region centered at the origin.
pub fn rescale_sites(raw: Points, scales: &[f64]) -> Result<SiteSet> {
    let offset = vec![0.0; scales.len()];
    rescale_sites_with_offset(raw, scales, &offset)
}

/// Rescales sites lying in the region `offset + prod [-A_j/2, A_j/2]`.
pub fn rescale_sites_with_offset(raw: Points, scales: &[f64], offset: &[f64]) -> Result<SiteSet> {
    let d = raw.dim();
    if raw.is_empty() {
        return Err(Error::EmptyInput("no sites".into()));
    }
    if scales.len() != d || offset.len() != d {
        return Err(invalid(format!("sites have {d} dimensions, region has {}", scales.len())));
    }
    if scales.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(invalid("region scales must be positive and finite"));
    }
    let mut bad = Vec::new();
    let mut scaled = Vec::with_capacity(raw.len() * d);
    for (i, row) in raw.rows().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("site {i} has a non-finite coordinate")));
        }
        let mut inside = true;
        for j in 0..d {
            let z = (row[j] - offset[j]) / scales[j];
            if z.abs() > 0.5 * (1.0 + REGION_SLACK) {
                inside = false;
            }
            scaled.push(z.clamp(-0.5, 0.5));
        }
        if !inside {
            bad.push(i);
        }
    }
    if !bad.is_empty() {
        return Err(Error::OutOfRegion { rows: bad });
    }
    Ok(SiteSet { scaled: Points::new(d, scaled)?, raw, scales: scales.to_vec(), offset: offset.to_vec() })
}

/// Region scales and centering offset inferred from the sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredRegion {
    pub scales: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Centers the sites at their componentwise midrange and takes
/// `A_j = (1 + margin) * 2 * max |centered|`.
pub fn infer_region(raw: &Points, margin_fraction: f64) -> Result<InferredRegion> {
    if raw.len() < 2 {
        return Err(invalid("region inference needs at least two sites"));
    }
    if !(margin_fraction.is_finite() && margin_fraction >= 0.0) {
        return Err(invalid("margin fraction must be nonnegative"));
    }
    let d = raw.dim();
    let mut scales = Vec::with_capacity(d);
    let mut offset = Vec::with_capacity(d);
    for j in 0..d {
        let col = raw.column(j);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite coordinate in dimension {}", j + 1)));
        }
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Err(invalid(format!("all sites share the same coordinate in dimension {}", j + 1)));
        }
        let center = 0.5 * (lo + hi);
        let half = (hi - center).max(center - lo);
        offset.push(center);
        scales.push((1.0 + margin_fraction) * 2.0 * half);
    }
    Ok(InferredRegion { scales, offset })
}
