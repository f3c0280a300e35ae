//! HAC and sandwich variance estimates, standard errors and pointwise
//! confidence bands.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SparseRow;
use crate::error::{invalid, Error, ModelKind, Result};
use crate::estimator::RidgeFit;
use crate::linalg::symmetrize;
use crate::neighbors::CellGrid;
use crate::points::Points;

/// Negative variances down to `-NEGATIVE_VARIANCE_TOLERANCE * scale` are
/// clamped to zero; `scale` is the diagonal part of the quadratic form.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-8;

/// Default bandwidth as a fraction of each region side.
pub const DEFAULT_BANDWIDTH_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HacKernel {
    Bartlett,
}

impl HacKernel {
    pub fn name(&self) -> &'static str {
        match self {
            HacKernel::Bartlett => "bartlett",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HacConfig {
    pub bandwidths: Vec<f64>,
    pub kernel: HacKernel,
}

impl HacConfig {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(invalid("bandwidths must be positive and finite"));
        }
        Ok(HacConfig { bandwidths, kernel: HacKernel::Bartlett })
    }

    /// `b_j = fraction * A_j`.
    pub fn from_fraction(scales: &[f64], fraction: f64) -> Result<Self> {
        Self::new(scales.iter().map(|a| a * fraction).collect())
    }
}

/// `max(0, 1 - |(w_j / b_j)_j|)`.
pub fn bartlett_kernel(w: &[f64], bandwidths: &[f64]) -> f64 {
    let u2: f64 = w.iter().zip(bandwidths).map(|(w, b)| (w / b) * (w / b)).sum();
    (1.0 - u2.sqrt()).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    /// `G_hat` for trend fits, the sandwich core for covariate fits.
    pub matrix: DMatrix<f64>,
    pub kind: ModelKind,
    pub hac: Option<HacConfig>,
    /// Divisor turning the quadratic form into a squared standard error:
    /// `A_n` for trend fits, `n` for covariate fits.
    pub scale: f64,
    /// True when no pair of distinct sites fell inside the kernel support.
    pub diagonal_only: bool,
    /// Distinct site pairs with positive kernel weight.
    pub pairs: usize,
}

/// Adds `w * (a b' + b a')` (or `w * a a'` when `same`) to the dense matrix.
fn add_outer(data: &mut [f64], j: usize, a: &SparseRow, b: &SparseRow, w: f64, same: bool) {
    for (&ia, &va) in a.indices.iter().zip(&a.values) {
        let wa = w * va;
        for (&ib, &vb) in b.indices.iter().zip(&b.values) {
            let v = wa * vb;
            data[ia + ib * j] += v;
            if !same {
                data[ib + ia * j] += v;
            }
        }
    }
}

/// `M S M` with `M = (G + s I)^{-1}`, exactly symmetric.
fn sandwich(fit: &RidgeFit, s: &DMatrix<f64>) -> DMatrix<f64> {
    let ms = fit.factor().solve_matrix(s);
    let mut msm = fit.factor().solve_matrix(&ms.transpose());
    symmetrize(&mut msm);
    msm
}

fn partial_chunks(n: usize) -> usize {
    n.div_ceil(8).max(256)
}

/// Kernel-weighted residual cross-product sum
/// `S = sum_{i,j} K(S_i - S_j) r_i r_j psi_i psi_j'` over pairs inside the
/// kernel support, found by bucketing the sites on a grid in bandwidth units.
fn hac_sum(rows: &[SparseRow], resid: &[f64], raw: &Points, bandwidths: &[f64], j: usize) -> (DMatrix<f64>, usize) {
    let n = rows.len();
    let d = raw.dim();
    let mut scaled = Vec::with_capacity(n * d);
    for p in raw.rows() {
        scaled.extend(p.iter().zip(bandwidths).map(|(x, b)| x / b));
    }
    let scaled = Points::new(d, scaled).expect("same shape");
    let grid = CellGrid::new(&scaled);
    let indices: Vec<usize> = (0..n).collect();
    let partials: Vec<(DMatrix<f64>, usize)> = indices
        .par_chunks(partial_chunks(n))
        .map(|chunk| {
            let mut s = DMatrix::<f64>::zeros(j, j);
            let data = s.as_mut_slice();
            let mut pairs = 0usize;
            for &i in chunk {
                if resid[i] == 0.0 {
                    continue;
                }
                add_outer(data, j, &rows[i], &rows[i], resid[i] * resid[i], true);
                let ui = scaled.row(i);
                grid.for_each_candidate(i, |k| {
                    if k <= i || resid[k] == 0.0 {
                        return;
                    }
                    let uk = scaled.row(k);
                    let dist2: f64 = ui.iter().zip(uk).map(|(a, b)| (a - b) * (a - b)).sum();
                    if dist2 < 1.0 {
                        let w = 1.0 - dist2.sqrt();
                        pairs += 1;
                        add_outer(data, j, &rows[i], &rows[k], w * resid[i] * resid[k], false);
                    }
                });
            }
            (s, pairs)
        })
        .collect();
    let mut total = DMatrix::<f64>::zeros(j, j);
    let mut pairs = 0;
    for (s, p) in partials {
        total += s;
        pairs += p;
    }
    (total, pairs)
}

/// Spatial HAC estimate `G_hat` for a trend fit.
pub fn hac_long_run_matrix(fit: &RidgeFit, y: &[f64], config: &HacConfig) -> Result<VarianceEstimate> {
    if fit.kind() != ModelKind::Trend {
        return Err(Error::ModelKind { expected: ModelKind::Trend, found: fit.kind() });
    }
    let sites = fit.sites();
    if config.bandwidths.len() != sites.dim() {
        return Err(invalid(format!("{} bandwidths for {}-dimensional sites", config.bandwidths.len(), sites.dim())));
    }
    HacConfig::new(config.bandwidths.clone())?;
    let resid = fit.residuals(y)?;
    let j = fit.basis().total_dimension();
    let (s, pairs) = hac_sum(fit.design_rows(), &resid, sites.raw(), &config.bandwidths, j);
    let diagonal_only = pairs == 0;
    if diagonal_only && fit.n() > 1 {
        log::warn!("no site pairs inside the HAC kernel support; using the diagonal terms only");
    }
    let n = fit.n() as f64;
    let volume = sites.volume();
    let g = sandwich(fit, &s) * (volume / (n * n));
    Ok(VarianceEstimate {
        matrix: g,
        kind: ModelKind::Trend,
        hac: Some(config.clone()),
        scale: volume,
        diagonal_only,
        pairs,
    })
}

/// Heteroskedasticity-robust sandwich core `(1/n) sum M b_i b_i' M r_i^2`
/// for a covariate fit.
pub fn covariate_variance(fit: &RidgeFit, y: &[f64]) -> Result<VarianceEstimate> {
    if fit.kind() != ModelKind::Covariate {
        return Err(Error::ModelKind { expected: ModelKind::Covariate, found: fit.kind() });
    }
    let resid = fit.residuals(y)?;
    let j = fit.basis().total_dimension();
    let rows = fit.design_rows();
    let n = rows.len();
    let partials: Vec<DMatrix<f64>> = rows
        .par_chunks(partial_chunks(n))
        .zip(resid.par_chunks(partial_chunks(n)))
        .map(|(rows, r)| {
            let mut s = DMatrix::<f64>::zeros(j, j);
            let data = s.as_mut_slice();
            for (row, &ri) in rows.iter().zip(r) {
                add_outer(data, j, row, row, ri * ri, true);
            }
            s
        })
        .collect();
    let mut s = DMatrix::<f64>::zeros(j, j);
    for p in partials {
        s += p;
    }
    let core = sandwich(fit, &s) / n as f64;
    Ok(VarianceEstimate {
        matrix: core,
        kind: ModelKind::Covariate,
        hac: None,
        scale: n as f64,
        diagonal_only: true,
        pairs: 0,
    })
}

fn bilinear(m: &DMatrix<f64>, a: &SparseRow, b: &SparseRow) -> f64 {
    let mut total = 0.0;
    for (&ia, &va) in a.indices.iter().zip(&a.values) {
        for (&ib, &vb) in b.indices.iter().zip(&b.values) {
            total += va * m[(ia, ib)] * vb;
        }
    }
    total
}

fn check_kinds(fit: &RidgeFit, var: &VarianceEstimate) -> Result<()> {
    if fit.kind() != var.kind {
        return Err(Error::ModelKind { expected: fit.kind(), found: var.kind });
    }
    if var.matrix.nrows() != fit.basis().total_dimension() {
        return Err(invalid("variance estimate does not match the fit's basis"));
    }
    Ok(())
}

/// `psi(z1)' G_hat psi(z2)` for trend fits.
pub fn omega_hat(fit: &RidgeFit, var: &VarianceEstimate, z1: &[f64], z2: &[f64]) -> Result<f64> {
    if fit.kind() != ModelKind::Trend {
        return Err(Error::ModelKind { expected: ModelKind::Trend, found: fit.kind() });
    }
    check_kinds(fit, var)?;
    let (mut a, mut b) = (SparseRow::default(), SparseRow::default());
    fit.basis().eval_sparse(z1, &mut a)?;
    fit.basis().eval_sparse(z2, &mut b)?;
    Ok(bilinear(&var.matrix, &a, &b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub points: Points,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub quantile: f64,
    /// Grid indices whose slightly negative variance was clamped to zero.
    pub clamped: Vec<usize>,
}

/// Pointwise intervals `estimate +- q se`. Points are cube points for trend
/// fits and (cube point, standardized covariates) for covariate fits.
pub fn confidence_band(fit: &RidgeFit, var: &VarianceEstimate, grid: &Points, level: f64) -> Result<ConfidenceBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("confidence level must lie in (0, 1)"));
    }
    check_kinds(fit, var)?;
    let q = normal_quantile(0.5 + 0.5 * level);
    let beta = fit.beta().as_slice();
    let mut row = SparseRow::default();
    let m = grid.len();
    let mut band = ConfidenceBand {
        points: grid.clone(),
        estimate: Vec::with_capacity(m),
        se: Vec::with_capacity(m),
        lower: Vec::with_capacity(m),
        upper: Vec::with_capacity(m),
        level,
        quantile: q,
        clamped: Vec::new(),
    };
    for (i, p) in grid.rows().enumerate() {
        fit.predictor().basis_row(p, &mut row)?;
        let est = row.dot(beta);
        let mut v = bilinear(&var.matrix, &row, &row);
        let diag: f64 = row.indices.iter().zip(&row.values).map(|(&k, &x)| x * x * var.matrix[(k, k)].abs()).sum();
        let tolerance = NEGATIVE_VARIANCE_TOLERANCE * diag.max(1.0);
        if v < 0.0 {
            if v < -tolerance {
                return Err(Error::NegativeVariance { value: v, index: i, tolerance });
            }
            band.clamped.push(i);
            v = 0.0;
        }
        let se = (v / var.scale).sqrt();
        band.estimate.push(est);
        band.se.push(se);
        band.lower.push(est - q * se);
        band.upper.push(est + q * se);
    }
    if !band.clamped.is_empty() {
        log::warn!("clamped {} slightly negative variance estimate(s) to zero", band.clamped.len());
    }
    Ok(band)
}

/// Standard normal quantile by Wichura's AS 241 (PPND16) rational
/// approximations, relative accuracy about 1e-16.
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return match p {
            0.0 => f64::NEG_INFINITY,
            1.0 => f64::INFINITY,
            _ => f64::NAN,
        };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}
