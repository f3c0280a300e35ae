//! Uniform-grid bucketing for fixed-radius neighbor queries.

use std::collections::HashMap;

use crate::points::Points;

/// Buckets points into cubic cells of edge 1. Any two points closer than 1
/// lie in the same or adjacent cells.
#[derive(Debug, Clone)]
pub struct CellGrid {
    dim: usize,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    keys: Vec<Vec<i64>>,
}

impl CellGrid {
    pub fn new(points: &Points) -> Self {
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut keys = Vec::with_capacity(points.len());
        for (i, p) in points.rows().enumerate() {
            let key: Vec<i64> = p.iter().map(|v| v.floor() as i64).collect();
            cells.entry(key.clone()).or_default().push(i);
            keys.push(key);
        }
        CellGrid { dim: points.dim(), cells, keys }
    }

    /// Calls `visit` for every point in the cells adjacent to (or equal to)
    /// the cell of point `i`, in a fixed order.
    pub fn for_each_candidate(&self, i: usize, mut visit: impl FnMut(usize)) {
        let home = &self.keys[i];
        let mut offset = vec![-1i64; self.dim];
        let mut key = vec![0i64; self.dim];
        loop {
            for k in 0..self.dim {
                key[k] = home[k] + offset[k];
            }
            if let Some(members) = self.cells.get(&key) {
                for &j in members {
                    visit(j);
                }
            }
            let mut k = self.dim;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                offset[k] += 1;
                if offset[k] <= 1 {
                    break;
                }
                offset[k] = -1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_all_close_pairs() {
        let pts = Points::from_rows(&[[0.1, 0.1], [0.9, 1.2], [3.0, 3.0], [-0.5, 0.2]]).unwrap();
        let grid = CellGrid::new(&pts);
        let mut seen = Vec::new();
        grid.for_each_candidate(0, |j| seen.push(j));
        seen.sort();
        assert_eq!(seen, vec![0, 1, 3]);
    }
}
