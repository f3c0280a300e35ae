//! Series ridge estimator for the trend and covariate models.
//!
//! Both models solve `(B'B/n + s I) beta = B'Y/n` for a tensor B-spline
//! design `B`. The covariate model appends standardized covariates to the
//! rescaled site coordinates and zeroes the rows whose covariates fall
//! outside the weight region.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, SparseRow, TensorBasis};
use crate::error::{invalid, Error, ModelKind, Result};
use crate::linalg::{eigen_extremes, Cholesky};
use crate::points::Points;
use crate::sampling::{rescale_sites_with_offset, SiteSet};

pub const SCHEMA_VERSION: u32 = 1;

/// Affine map sending the observed `[lower_j, upper_j]` of each covariate
/// onto [-1/2, 1/2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMap {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CovariateMap {
    pub fn from_data(x: &Points) -> Result<Self> {
        let mut lower = Vec::with_capacity(x.dim());
        let mut upper = Vec::with_capacity(x.dim());
        for j in 0..x.dim() {
            let col = x.column(j);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("covariate {} has non-finite values", j + 1)));
            }
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(invalid(format!("covariate {} is constant", j + 1)));
            }
            lower.push(lo);
            upper.push(hi);
        }
        Ok(CovariateMap { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (lo, hi))| (v - lo) / (hi - lo) - 0.5).collect()
    }

    pub fn unstandardize(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (lo, hi))| lo + (v + 0.5) * (hi - lo)).collect()
    }
}

/// Hyper-rectangle of standardized covariate values receiving weight one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl WeightRegion {
    /// The whole standardized range [-1/2, 1/2]^p.
    pub fn full(p: usize) -> Self {
        WeightRegion { lower: vec![-0.5; p], upper: vec![0.5; p] }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(invalid("weight region bounds differ in length"));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi && *lo >= -0.5 && *hi <= 0.5) {
                return Err(invalid("weight region must be a nonempty box inside [-1/2, 1/2]^p"));
            }
        }
        Ok(WeightRegion { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }
}

/// Everything needed to evaluate a fitted surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    kind: ModelKind,
    basis: TensorBasis,
    beta: DVector<f64>,
    scales: Vec<f64>,
    offset: Vec<f64>,
    covariate_map: Option<CovariateMap>,
    weight_region: Option<WeightRegion>,
}

impl Predictor {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn covariate_map(&self) -> Option<&CovariateMap> {
        self.covariate_map.as_ref()
    }

    pub fn weight_region(&self) -> Option<&WeightRegion> {
        self.weight_region.as_ref()
    }

    /// Number of site coordinates (excluding covariates).
    pub fn site_dim(&self) -> usize {
        self.scales.len()
    }

    /// Basis row at a model point: a cube point for trend fits, a cube point
    /// followed by standardized covariates for covariate fits. Points whose
    /// covariates leave the weight region are rejected.
    pub fn basis_row(&self, point: &[f64], row: &mut SparseRow) -> Result<()> {
        if let Some(w) = &self.weight_region {
            let d = self.site_dim();
            if point.len() == d + w.dim() && !w.contains(&point[d..]) {
                return Err(Error::Domain { point: point.to_vec(), domain: "cube x weight region".into() });
            }
        }
        self.basis.eval_sparse(point, row)
    }

    pub fn predict(&self, points: &Points) -> Result<Vec<f64>> {
        let beta = self.beta.as_slice();
        let mut row = SparseRow::default();
        points
            .rows()
            .map(|p| {
                self.basis_row(p, &mut row)?;
                Ok(row.dot(beta))
            })
            .collect()
    }

    /// Cube point of raw site coordinates.
    pub fn scale_site(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.scales).zip(&self.offset).map(|((r, a), o)| (r - o) / a).collect()
    }

    /// Raw coordinates of a model point (sites unscaled, covariates unstandardized).
    pub fn to_raw(&self, point: &[f64]) -> Vec<f64> {
        let d = self.site_dim();
        let mut out: Vec<f64> =
            point[..d].iter().zip(&self.scales).zip(&self.offset).map(|((z, a), o)| z * a + o).collect();
        if let Some(map) = &self.covariate_map {
            out.extend(map.unstandardize(&point[d..]));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    predictor: Predictor,
    gram: DMatrix<f64>,
    moment: DVector<f64>,
    penalty: f64,
    sites: SiteSet,
    rows: Vec<SparseRow>,
    factor: Cholesky,
    fitted: Vec<f64>,
}

/// Rows per partial Gram in the parallel assembly; at most 8 partials so the
/// memory stays bounded for large `J`. Fixed by `n` alone, so the reduction
/// order and the result do not depend on the thread count.
fn chunk_size(n: usize) -> usize {
    n.div_ceil(8).max(512)
}

fn assemble(rows: &[SparseRow], y: &[f64], j: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = rows.len();
    let partials: Vec<(DMatrix<f64>, DVector<f64>)> = rows
        .par_chunks(chunk_size(n))
        .zip(y.par_chunks(chunk_size(n)))
        .map(|(rows, ys)| {
            let mut g = DMatrix::<f64>::zeros(j, j);
            let mut m = DVector::<f64>::zeros(j);
            let data = g.as_mut_slice();
            for (row, &yi) in rows.iter().zip(ys) {
                for (a, (&ia, &va)) in row.indices.iter().zip(&row.values).enumerate() {
                    m[ia] += va * yi;
                    for (&ib, &vb) in row.indices[a..].iter().zip(&row.values[a..]) {
                        data[ia + ib * j] += va * vb;
                    }
                }
            }
            (g, m)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(j, j);
    let mut moment = DVector::<f64>::zeros(j);
    for (g, m) in partials {
        gram += g;
        moment += m;
    }
    let inv_n = 1.0 / n as f64;
    for c in 0..j {
        for r in 0..c {
            gram[(r, c)] *= inv_n;
            gram[(c, r)] = gram[(r, c)];
        }
        gram[(c, c)] *= inv_n;
    }
    moment *= inv_n;
    (gram, moment)
}

fn check_response(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(invalid(format!("response has {} values for {n} sites", y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("response value at row {i} is not finite")));
    }
    Ok(())
}

fn solve(
    predictor_parts: (ModelKind, TensorBasis, Vec<f64>, Vec<f64>, Option<CovariateMap>, Option<WeightRegion>),
    sites: &SiteSet,
    rows: Vec<SparseRow>,
    y: &[f64],
    penalty: f64,
) -> Result<RidgeFit> {
    let (kind, basis, scales, offset, covariate_map, weight_region) = predictor_parts;
    if !(penalty.is_finite() && penalty >= 0.0) {
        return Err(invalid("ridge penalty must be nonnegative"));
    }
    let j = basis.total_dimension();
    let (gram, moment) = assemble(&rows, y, j);
    let mut system = gram.clone();
    for k in 0..j {
        system[(k, k)] += penalty;
    }
    let factor = Cholesky::new(&system)?;
    let beta = factor.solve(&moment);
    let fitted = rows.iter().map(|r| r.dot(beta.as_slice())).collect();
    Ok(RidgeFit {
        predictor: Predictor { kind, basis, beta, scales, offset, covariate_map, weight_region },
        gram,
        moment,
        penalty,
        sites: sites.clone(),
        rows,
        factor,
        fitted,
    })
}

/// Fits the trend model on the rescaled sites.
pub fn fit_trend(sites: &SiteSet, y: &[f64], basis: &TensorBasis, penalty: f64) -> Result<RidgeFit> {
    check_response(y, sites.n())?;
    if basis.dim() != sites.dim() {
        return Err(invalid(format!("basis has {} dimensions, sites have {}", basis.dim(), sites.dim())));
    }
    let rows = sites
        .scaled()
        .rows()
        .map(|z| {
            let mut row = SparseRow::default();
            basis.eval_sparse(z, &mut row).map(|_| row)
        })
        .collect::<Result<Vec<_>>>()?;
    let parts = (ModelKind::Trend, basis.clone(), sites.scales().to_vec(), sites.offset().to_vec(), None, None);
    solve(parts, sites, rows, y, penalty)
}

/// Fits the covariate model, standardizing `x` by its observed range.
pub fn fit_covariate(
    sites: &SiteSet,
    x: &Points,
    y: &[f64],
    basis: &TensorBasis,
    weight_region: Option<WeightRegion>,
    penalty: f64,
) -> Result<RidgeFit> {
    let map = CovariateMap::from_data(x)?;
    fit_covariate_with_map(sites, x, y, basis, weight_region, map, penalty)
}

/// As [`fit_covariate`] with a given standardization map.
pub fn fit_covariate_with_map(
    sites: &SiteSet,
    x: &Points,
    y: &[f64],
    basis: &TensorBasis,
    weight_region: Option<WeightRegion>,
    map: CovariateMap,
    penalty: f64,
) -> Result<RidgeFit> {
    check_response(y, sites.n())?;
    let p = x.dim();
    if x.len() != sites.n() {
        return Err(invalid(format!("{} covariate rows for {} sites", x.len(), sites.n())));
    }
    if map.dim() != p {
        return Err(invalid("covariate map dimension differs from the covariates"));
    }
    if basis.dim() != sites.dim() + p {
        return Err(invalid(format!("covariate basis needs {} dimensions, has {}", sites.dim() + p, basis.dim())));
    }
    let region = weight_region.unwrap_or_else(|| WeightRegion::full(p));
    if region.dim() != p {
        return Err(invalid("weight region dimension differs from the covariates"));
    }
    let mut rows = Vec::with_capacity(sites.n());
    let mut kept = 0usize;
    let mut point = Vec::with_capacity(basis.dim());
    for (i, z) in sites.scaled().rows().enumerate() {
        let xi = x.row(i);
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("covariates at row {i} are not finite")));
        }
        let s: Vec<f64> = map.standardize(xi).into_iter().map(|v| v.clamp(-0.5, 0.5)).collect();
        let mut row = SparseRow::default();
        if region.contains(&s) {
            point.clear();
            point.extend_from_slice(z);
            point.extend_from_slice(&s);
            basis.eval_sparse(&point, &mut row)?;
            kept += 1;
        }
        rows.push(row);
    }
    if kept == 0 {
        return Err(Error::EmptyWeightRegion);
    }
    let parts = (
        ModelKind::Covariate,
        basis.clone(),
        sites.scales().to_vec(),
        sites.offset().to_vec(),
        Some(map),
        Some(region),
    );
    solve(parts, sites, rows, y, penalty)
}

impl RidgeFit {
    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn kind(&self) -> ModelKind {
        self.predictor.kind
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.predictor.basis
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.predictor.beta
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn moment(&self) -> &DVector<f64> {
        &self.moment
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    /// Basis rows at the sites; zero rows for weighted-out observations.
    pub fn design_rows(&self) -> &[SparseRow] {
        &self.rows
    }

    /// Factor of `gram + penalty * I`.
    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn fitted_values(&self) -> &[f64] {
        &self.fitted
    }

    pub fn predict(&self, points: &Points) -> Result<Vec<f64>> {
        self.predictor.predict(points)
    }

    pub fn residuals(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n() {
            return Err(invalid(format!("response has {} values, fit has {}", y.len(), self.n())));
        }
        Ok(y.iter().zip(&self.fitted).map(|(y, f)| y - f).collect())
    }

    /// `||(G + s I) beta - moment||`.
    pub fn normal_equation_residual(&self) -> f64 {
        let beta = self.beta();
        (&self.gram * beta + beta * self.penalty - &self.moment).norm()
    }

    pub fn artifact(&self) -> FitArtifact {
        let p = &self.predictor;
        FitArtifact {
            schema_version: SCHEMA_VERSION,
            model_kind: p.kind,
            basis: p.basis.spec(),
            penalty: self.penalty,
            scales: p.scales.clone(),
            offset: p.offset.clone(),
            beta: p.beta.as_slice().to_vec(),
            n: self.n(),
            covariate_map: p.covariate_map.clone(),
            weight_region: p.weight_region.clone(),
            rng: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramDiagnostics {
    pub min_eig: f64,
    pub max_eig: f64,
    /// `max_eig / min_eig`, infinite when `min_eig <= 0`.
    pub condition: f64,
    /// Largest basis-vector norm over the probe grid.
    pub zeta_hat: f64,
    /// `min_eig^(-1/2)`, infinite when `min_eig <= 0`.
    pub lambda_hat: f64,
    /// Condition number of the penalized system `gram + penalty * I`.
    pub penalized_condition: f64,
}

pub fn gram_diagnostics(fit: &RidgeFit, probe: &Points) -> Result<GramDiagnostics> {
    if probe.is_empty() {
        return Err(invalid("probe grid is empty"));
    }
    let (min_eig, max_eig) = eigen_extremes(fit.gram());
    let mut row = SparseRow::default();
    let mut zeta: f64 = 0.0;
    for p in probe.rows() {
        fit.predictor.basis_row(p, &mut row)?;
        zeta = zeta.max(row.norm_squared().sqrt());
    }
    let positive = min_eig > 0.0;
    Ok(GramDiagnostics {
        min_eig,
        max_eig,
        condition: if positive { max_eig / min_eig } else { f64::INFINITY },
        zeta_hat: zeta,
        lambda_hat: if positive { min_eig.powf(-0.5) } else { f64::INFINITY },
        penalized_condition: if min_eig + fit.penalty > 0.0 {
            (max_eig + fit.penalty) / (min_eig + fit.penalty)
        } else {
            f64::INFINITY
        },
    })
}

/// Generator and seed of simulated inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngMetadata {
    pub generator: String,
    pub seed: u64,
}

/// Serialized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub basis: BasisSpec,
    pub penalty: f64,
    pub scales: Vec<f64>,
    pub offset: Vec<f64>,
    pub beta: Vec<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_map: Option<CovariateMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_region: Option<WeightRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<RngMetadata>,
}

impl FitArtifact {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Artifact(format!("schema version {v}, this build reads {SCHEMA_VERSION}")));
            }
            None => return Err(Error::Artifact("missing schema_version".into())),
        }
        let artifact: FitArtifact = serde_json::from_value(value)?;
        artifact.predictor()?;
        Ok(artifact)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn predictor(&self) -> Result<Predictor> {
        let basis = self.basis.build()?;
        if self.beta.len() != basis.total_dimension() {
            return Err(Error::Artifact(format!(
                "{} coefficients for a basis of dimension {}",
                self.beta.len(),
                basis.total_dimension()
            )));
        }
        let p = self.covariate_map.as_ref().map_or(0, CovariateMap::dim);
        if self.scales.len() != self.offset.len() || self.scales.len() + p != basis.dim() {
            return Err(Error::Artifact("region and basis dimensions disagree".into()));
        }
        if (self.model_kind == ModelKind::Covariate) != self.covariate_map.is_some() {
            return Err(Error::Artifact("covariate map present only for covariate fits".into()));
        }
        Ok(Predictor {
            kind: self.model_kind,
            basis,
            beta: DVector::from_vec(self.beta.clone()),
            scales: self.scales.clone(),
            offset: self.offset.clone(),
            covariate_map: self.covariate_map.clone(),
            weight_region: self.weight_region.clone(),
        })
    }

    /// Refits on the original data, checking that it reproduces this
    /// artifact. `x` must have zero columns for trend fits.
    pub fn refit(&self, raw_sites: Points, y: &[f64], x: &Points) -> Result<RidgeFit> {
        let predictor = self.predictor()?;
        if raw_sites.len() != self.n {
            return Err(Error::Artifact(format!("artifact was fit on {} rows, data has {}", self.n, raw_sites.len())));
        }
        let sites = rescale_sites_with_offset(raw_sites, &self.scales, &self.offset)?;
        let fit = match self.model_kind {
            ModelKind::Trend => fit_trend(&sites, y, predictor.basis(), self.penalty)?,
            ModelKind::Covariate => fit_covariate_with_map(
                &sites,
                x,
                y,
                predictor.basis(),
                self.weight_region.clone(),
                self.covariate_map.clone().expect("checked by predictor"),
                self.penalty,
            )?,
        };
        let scale = 1.0 + self.beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
        let drift = fit.beta().iter().zip(&self.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if drift > 1e-9 * scale {
            return Err(Error::Artifact(format!("data does not reproduce the fitted coefficients (drift {drift:e})")));
        }
        Ok(fit)
    }
}
