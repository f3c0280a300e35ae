//! Dense symmetric positive-definite solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold: factorization fails when a pivot drops below
/// this fraction of the largest eigenvalue.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// Upper-triangular factor `U` with `A = U'U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    u: DMatrix<f64>,
}

impl Cholesky {
    /// Factorizes the symmetric matrix `a`, reading its upper triangle.
    /// Fails when a pivot is at or below `PIVOT_THRESHOLD * lambda_max(a)`.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let threshold = PIVOT_THRESHOLD * largest_eigenvalue(a).max(0.0);
        let mut u = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let (ci, cj) = (i * n, j * n);
                let data = u.as_slice();
                let mut s = a[(i, j)];
                for k in 0..i {
                    s -= data[ci + k] * data[cj + k];
                }
                if i < j {
                    let d = data[ci + i];
                    u[(i, j)] = s / d;
                } else {
                    if !(s > threshold) {
                        return Err(Error::SingularGram { pivot: s, threshold });
                    }
                    u[(j, j)] = s.sqrt();
                }
            }
        }
        Ok(Cholesky { u })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let data = self.u.as_slice();
        let mut x = b.clone();
        // U' y = b
        for i in 0..n {
            let col = &data[i * n..i * n + i];
            let s: f64 = col.iter().zip(x.iter()).map(|(u, y)| u * y).sum();
            x[i] = (x[i] - s) / data[i * n + i];
        }
        // U x = y
        for i in (0..n).rev() {
            x[i] /= data[i * n + i];
            let xi = x[i];
            let col = &data[i * n..i * n + i];
            for (k, u) in col.iter().enumerate() {
                x[k] -= u * xi;
            }
        }
        x
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            out.set_column(c, &self.solve(&b.column(c).into_owned()));
        }
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.solve_matrix(&DMatrix::identity(self.dim(), self.dim()));
        symmetrize(&mut inv);
        inv
    }
}

/// Replaces `m` by `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Power-iteration estimate of the largest eigenvalue of a symmetric PSD
/// matrix. Deterministic; accurate to a few digits, which is all the pivot
/// threshold needs.
pub fn largest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = a.clone().symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
