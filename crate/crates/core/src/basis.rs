//! Clamped B-spline bases on an interval and their tensor products.
//!
//! A basis of degree `p` with `n0` equally spaced interior knots has
//! `n0 + p + 1` functions. Tensor products index their functions with the
//! first dimension varying slowest.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest supported spline degree. Local evaluation works on stack buffers
/// of this size.
pub const MAX_DEGREE: usize = 10;

/// Points within this fraction of the interval width outside it are clamped
/// onto the boundary instead of being rejected.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// The centered unit interval [-1/2, 1/2].
    pub const UNIT: Interval = Interval { lower: -0.5, upper: 0.5 };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(invalid(format!("degenerate interval [{lower}, {upper}]")));
        }
        Ok(Interval { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Clamp `t` into the interval, or `None` when it lies clearly outside.
    fn admit(&self, t: f64) -> Option<f64> {
        let slack = DOMAIN_SLACK * self.width();
        if t >= self.lower - slack && t <= self.upper + slack {
            Some(t.clamp(self.lower, self.upper))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateSplineBasis {
    degree: usize,
    interval: Interval,
    interior: Vec<f64>,
    knots: Vec<f64>,
}

impl UnivariateSplineBasis {
    /// Basis with `interior_knot_count` equally spaced interior knots.
    pub fn uniform(degree: usize, interior_knot_count: usize, interval: Interval) -> Result<Self> {
        let step = interval.width() / (interior_knot_count + 1) as f64;
        let interior = (1..=interior_knot_count).map(|k| interval.lower + k as f64 * step).collect();
        Self::with_interior_knots(degree, interval, interior)
    }

    pub fn with_interior_knots(degree: usize, interval: Interval, interior: Vec<f64>) -> Result<Self> {
        if degree == 0 {
            return Err(invalid("spline degree must be at least 1"));
        }
        if degree > MAX_DEGREE {
            return Err(invalid(format!("spline degree {degree} exceeds the maximum {MAX_DEGREE}")));
        }
        let interval = Interval::new(interval.lower, interval.upper)?;
        let mut prev = interval.lower;
        for &k in &interior {
            if !(k > prev && k < interval.upper) {
                return Err(invalid("interior knots must be strictly increasing and inside the interval"));
            }
            prev = k;
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * (degree + 1));
        knots.extend(std::iter::repeat_n(interval.lower, degree + 1));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(interval.upper, degree + 1));
        Ok(UnivariateSplineBasis { degree, interval, interior, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    pub fn dimension(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    fn admit(&self, t: f64) -> Result<f64> {
        self.interval.admit(t).ok_or_else(|| Error::Domain {
            point: vec![t],
            domain: format!("[{}, {}]", self.interval.lower, self.interval.upper),
        })
    }

    /// Knot span containing `t`; the right endpoint belongs to the last span.
    fn span(&self, t: f64) -> usize {
        let p = self.degree;
        let last = self.dimension() - 1;
        let k = self.knots.partition_point(|&x| x <= t).saturating_sub(1);
        k.clamp(p, last)
    }

    /// Triangular table of nonzero basis values of every degree up to `p`:
    /// `table[q][r]` is the value of function `span - q + r` of degree `q`.
    fn table(&self, span: usize, t: f64) -> [[f64; MAX_DEGREE + 1]; MAX_DEGREE + 1] {
        let p = self.degree;
        let mut table = [[0.0; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        table[0][0] = 1.0;
        for q in 1..=p {
            left[q] = t - self.knots[span + 1 - q];
            right[q] = self.knots[span + q] - t;
            let mut saved = 0.0;
            for r in 0..q {
                let temp = table[q - 1][r] / (right[r + 1] + left[q - r]);
                table[q][r] = saved + right[r + 1] * temp;
                saved = left[q - r] * temp;
            }
            table[q][q] = saved;
        }
        table
    }

    /// Writes the `degree + 1` possibly nonzero values at `t` into `values`
    /// and returns the index of the first one.
    pub fn eval_local(&self, t: f64, values: &mut [f64]) -> Result<usize> {
        let t = self.admit(t)?;
        let p = self.degree;
        let span = self.span(t);
        let table = self.table(span, t);
        values[..=p].copy_from_slice(&table[p][..=p]);
        Ok(span - p)
    }

    /// As [`eval_local`](Self::eval_local), also writing first derivatives.
    pub fn eval_local_with_derivative(&self, t: f64, values: &mut [f64], derivs: &mut [f64]) -> Result<usize> {
        let t = self.admit(t)?;
        let p = self.degree;
        let span = self.span(t);
        let table = self.table(span, t);
        values[..=p].copy_from_slice(&table[p][..=p]);
        let first = span - p;
        let pf = p as f64;
        for j in 0..=p {
            let i = first + j;
            let mut d = 0.0;
            if j >= 1 {
                let den = self.knots[i + p] - self.knots[i];
                if den > 0.0 {
                    d += table[p - 1][j - 1] / den;
                }
            }
            if j < p {
                let den = self.knots[i + p + 1] - self.knots[i + 1];
                if den > 0.0 {
                    d -= table[p - 1][j] / den;
                }
            }
            derivs[j] = pf * d;
        }
        Ok(first)
    }

    /// All basis values at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut local = [0.0; MAX_DEGREE + 1];
        let first = self.eval_local(t, &mut local)?;
        let mut out = vec![0.0; self.dimension()];
        out[first..=first + self.degree].copy_from_slice(&local[..=self.degree]);
        Ok(out)
    }

    /// All basis first derivatives at `t`.
    pub fn eval_derivative(&self, t: f64) -> Result<Vec<f64>> {
        let mut local = [0.0; MAX_DEGREE + 1];
        let mut der = [0.0; MAX_DEGREE + 1];
        let first = self.eval_local_with_derivative(t, &mut local, &mut der)?;
        let mut out = vec![0.0; self.dimension()];
        out[first..=first + self.degree].copy_from_slice(&der[..=self.degree]);
        Ok(out)
    }
}

/// Nonzero entries of a basis vector, indices ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn clear(&mut self) {
        self.indices.clear();
        self.values.clear();
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * dense[i]).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis {
    per_dim: Vec<UnivariateSplineBasis>,
    strides: Vec<usize>,
    total: usize,
}

impl TensorBasis {
    pub fn new(per_dim: Vec<UnivariateSplineBasis>) -> Result<Self> {
        if per_dim.is_empty() {
            return Err(invalid("tensor basis needs at least one dimension"));
        }
        let mut strides = vec![1; per_dim.len()];
        for k in (0..per_dim.len() - 1).rev() {
            strides[k] = strides[k + 1] * per_dim[k + 1].dimension();
        }
        let total = strides[0] * per_dim[0].dimension();
        Ok(TensorBasis { per_dim, strides, total })
    }

    /// Same degree in every dimension over the unit cube.
    pub fn uniform(degree: usize, interior_knots: &[usize]) -> Result<Self> {
        let per_dim = interior_knots
            .iter()
            .map(|&k| UnivariateSplineBasis::uniform(degree, k, Interval::UNIT))
            .collect::<Result<Vec<_>>>()?;
        Self::new(per_dim)
    }

    /// Basis over the unit cube whose per-dimension sizes multiply to at most
    /// `requested` (see [`factor_dimension`]).
    pub fn with_total_dimension(degree: usize, d: usize, requested: usize) -> Result<Self> {
        let minimum = vec![degree + 1; d];
        let (sizes, _) = factor_dimension(requested, &minimum)?;
        let knots: Vec<usize> = sizes.iter().map(|&s| s - degree - 1).collect();
        Self::uniform(degree, &knots)
    }

    pub fn dim(&self) -> usize {
        self.per_dim.len()
    }

    pub fn total_dimension(&self) -> usize {
        self.total
    }

    pub fn per_dim(&self) -> &[UnivariateSplineBasis] {
        &self.per_dim
    }

    pub fn max_nonzeros(&self) -> usize {
        self.per_dim.iter().map(|b| b.degree() + 1).product()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(m, s)| m * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let m = flat / s;
                flat -= m * s;
                m
            })
            .collect()
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(invalid(format!("point has {} coordinates, basis has {} dimensions", z.len(), self.dim())));
        }
        Ok(())
    }

    fn domain_error(&self, z: &[f64]) -> Error {
        let parts: Vec<String> =
            self.per_dim.iter().map(|b| format!("[{}, {}]", b.interval().lower, b.interval().upper)).collect();
        Error::Domain { point: z.to_vec(), domain: parts.join(" x ") }
    }

    /// Nonzero entries of the basis vector at `z`, written into `row`.
    pub fn eval_sparse(&self, z: &[f64], row: &mut SparseRow) -> Result<()> {
        self.check_point(z)?;
        let d = self.dim();
        let mut firsts = vec![0usize; d];
        let mut locals: Vec<[f64; MAX_DEGREE + 1]> = Vec::with_capacity(d);
        for (k, b) in self.per_dim.iter().enumerate() {
            let mut vals = [0.0; MAX_DEGREE + 1];
            firsts[k] = b.eval_local(z[k], &mut vals).map_err(|_| self.domain_error(z))?;
            locals.push(vals);
        }
        row.clear();
        let mut offsets = vec![0usize; d];
        loop {
            let mut index = 0;
            let mut value = 1.0;
            for k in 0..d {
                index += (firsts[k] + offsets[k]) * self.strides[k];
                value *= locals[k][offsets[k]];
            }
            row.indices.push(index);
            row.values.push(value);
            // odometer, last dimension fastest so indices ascend
            let mut k = d;
            loop {
                if k == 0 {
                    return Ok(());
                }
                k -= 1;
                offsets[k] += 1;
                if offsets[k] <= self.per_dim[k].degree() {
                    break;
                }
                offsets[k] = 0;
            }
        }
    }

    /// Dense basis vector at `z`.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut row = SparseRow::default();
        self.eval_sparse(z, &mut row)?;
        Ok(row.to_dense(self.total))
    }

    /// `J x d` matrix of partial derivatives at `z`.
    pub fn eval_gradient(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(z)?;
        let d = self.dim();
        let mut vals = Vec::with_capacity(d);
        let mut ders = Vec::with_capacity(d);
        for (k, b) in self.per_dim.iter().enumerate() {
            vals.push(b.eval(z[k]).map_err(|_| self.domain_error(z))?);
            ders.push(b.eval_derivative(z[k]).map_err(|_| self.domain_error(z))?);
        }
        let mut grad = DMatrix::zeros(self.total, d);
        for j in 0..self.total {
            let multi = self.multi_index(j);
            for col in 0..d {
                let mut prod = 1.0;
                for k in 0..d {
                    prod *= if k == col { ders[k][multi[k]] } else { vals[k][multi[k]] };
                    if prod == 0.0 {
                        break;
                    }
                }
                grad[(j, col)] = prod;
            }
        }
        Ok(grad)
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            degrees: self.per_dim.iter().map(|b| b.degree()).collect(),
            interior_knots: self.per_dim.iter().map(|b| b.interior_knots().len()).collect(),
            intervals: self.per_dim.iter().map(|b| b.interval()).collect(),
        }
    }
}

/// Serializable description of a uniform-knot tensor basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degrees: Vec<usize>,
    pub interior_knots: Vec<usize>,
    pub intervals: Vec<Interval>,
}

impl BasisSpec {
    pub fn build(&self) -> Result<TensorBasis> {
        let d = self.degrees.len();
        if self.interior_knots.len() != d || self.intervals.len() != d {
            return Err(invalid("basis spec fields have inconsistent lengths"));
        }
        let per_dim = (0..d)
            .map(|k| UnivariateSplineBasis::uniform(self.degrees[k], self.interior_knots[k], self.intervals[k]))
            .collect::<Result<Vec<_>>>()?;
        TensorBasis::new(per_dim)
    }
}

/// Splits `requested` into near-equal per-dimension sizes whose product does
/// not exceed it. Sizes below `minimum[k]` are raised to it; the flag reports
/// whether that happened.
pub fn factor_dimension(requested: usize, minimum: &[usize]) -> Result<(Vec<usize>, bool)> {
    let d = minimum.len();
    if d == 0 {
        return Err(invalid("need at least one dimension"));
    }
    if requested == 0 {
        return Err(invalid("requested basis dimension must be positive"));
    }
    let mut base = (requested as f64).powf(1.0 / d as f64).round() as usize;
    while base > 1 && base.checked_pow(d as u32).is_none_or(|v| v > requested) {
        base -= 1;
    }
    while (base + 1).checked_pow(d as u32).is_some_and(|v| v <= requested) {
        base += 1;
    }
    let mut sizes = vec![base.max(1); d];
    for k in 0..d {
        let product: usize = sizes.iter().product();
        if product / sizes[k] * (sizes[k] + 1) <= requested {
            sizes[k] += 1;
        }
    }
    let mut clamped = false;
    for (s, &m) in sizes.iter_mut().zip(minimum) {
        if *s < m {
            *s = m;
            clamped = true;
        }
    }
    Ok((sizes, clamped))
}
