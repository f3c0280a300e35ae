use serde::{Deserialize, Serialize};

use crate::basis::Interval;
use crate::error::{invalid, Result};

/// Row-major collection of points of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    len: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(invalid("zero-dimensional points cannot carry coordinates"));
            }
            return Ok(Points { dim, len: 0, data });
        }
        if !data.len().is_multiple_of(dim) {
            return Err(invalid(format!("{} coordinates do not split into rows of {dim}", data.len())));
        }
        Ok(Points { dim, len: data.len() / dim, data })
    }

    /// `len` points with no coordinates (covariate matrices with `p = 0`).
    pub fn empty_rows(len: usize) -> Self {
        Points { dim: 0, len, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(invalid("rows have differing lengths"));
            }
            data.extend_from_slice(r);
        }
        if dim == 0 {
            return Ok(Self::empty_rows(rows.len()));
        }
        Points::new(dim, data)
    }

    /// Tensor grid with `resolution[k]` equally spaced points spanning
    /// `intervals[k]`, endpoints included. The first dimension varies slowest.
    pub fn grid(resolution: &[usize], intervals: &[Interval]) -> Result<Self> {
        if resolution.len() != intervals.len() || resolution.is_empty() {
            return Err(invalid("grid resolution and intervals must have the same nonzero length"));
        }
        if resolution.iter().any(|&r| r < 2) {
            return Err(invalid("grid resolution must be at least 2 per dimension"));
        }
        let axes: Vec<Vec<f64>> = resolution
            .iter()
            .zip(intervals)
            .map(|(&r, iv)| {
                (0..r)
                    .map(|k| if k == r - 1 { iv.upper } else { iv.lower + iv.width() * k as f64 / (r - 1) as f64 })
                    .collect()
            })
            .collect();
        Ok(Self::tensor(&axes))
    }

    /// Cartesian product of coordinate axes, first axis slowest.
    pub fn tensor(axes: &[Vec<f64>]) -> Self {
        let dim = axes.len();
        let len: usize = axes.iter().map(Vec::len).product();
        let mut data = Vec::with_capacity(len * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..len {
            for k in 0..dim {
                data.push(axes[k][idx[k]]);
            }
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        Points { dim, len, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows of `self` followed by the columns of `other`, point by point.
    pub fn hstack(&self, other: &Points) -> Result<Points> {
        if self.len != other.len {
            return Err(invalid("cannot join point sets of different lengths"));
        }
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(dim * self.len);
        for i in 0..self.len {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        if dim == 0 {
            return Ok(Self::empty_rows(self.len));
        }
        Points::new(dim, data)
    }
}
