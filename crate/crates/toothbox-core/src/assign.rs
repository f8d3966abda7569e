//! Rectangular minimum-cost assignment with forbidden pairs.
//!
//! The solver returns a matching that never uses a forbidden entry and,
//! among all matchings of maximum cardinality over the allowed entries,
//! minimizes total cost. Rectangularity is handled by padding to a square
//! matrix with zero-cost dummies; forbidden entries become dummies as well,
//! shifted so that using one can never beat any allowed pair. Each allowed
//! entry receives a constant bonus larger than the sum of all finite costs,
//! which makes cardinality dominate cost in the minimization.

use alloc::vec;
use alloc::vec::Vec;

/// Sentinel for a pair that must not be matched.
pub const FORBIDDEN: f64 = f64::INFINITY;

/// Rows are the existing tracks, columns the new candidates. Finite entries
/// are nonnegative costs; `FORBIDDEN` marks disallowed pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    /// A matrix with every pair forbidden.
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![FORBIDDEN; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::forbidden(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from row slices; rows must all have the same length.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cost: f64) {
        debug_assert!(cost >= 0.0, "costs must be nonnegative or FORBIDDEN");
        self.entries[row * self.cols + col] = cost;
    }

    fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.get(row, col).is_finite()
    }
}

/// Solves the assignment problem. Returns matched `(row, col)` pairs sorted
/// by row; rows and columns absent from the result are unmatched.
pub fn solve_assignment(costs: &CostMatrix) -> Vec<(usize, usize)> {
    let (r, c) = (costs.rows, costs.cols);
    if r == 0 || c == 0 {
        return Vec::new();
    }
    let n = r.max(c);

    // Bonus per allowed pair: larger than the sum of all finite costs, so
    // maximum cardinality always wins before cost is compared.
    let sum: f64 = costs.entries.iter().filter(|e| e.is_finite()).sum();
    let bonus = sum + 1.0;

    let mut square = vec![0.0f64; n * n];
    for i in 0..r {
        for j in 0..c {
            let e = costs.get(i, j);
            if e.is_finite() {
                square[i * n + j] = e - bonus;
            }
        }
    }

    let row_of_col = hungarian_square(&square, n);

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (j, &i) in row_of_col.iter().enumerate() {
        if i < r && j < c && costs.is_allowed(i, j) {
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    normalize_ties(costs, &mut pairs);
    pairs
}

/// O(n^3) Hungarian algorithm on a dense square matrix (may hold negative
/// entries). Returns, per column, the row assigned to it.
fn hungarian_square(a: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays; column 0 is virtual.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row (1-based) matched to col j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_of_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_of_col[j - 1] = p[j] - 1;
    }
    row_of_col
}

/// Swaps columns between pairs when doing so keeps the total cost identical
/// and lowers the `(row, col)` sequence lexicographically. Makes the choice
/// among equal-cost optima deterministic and canonical.
fn normalize_ties(costs: &CostMatrix, pairs: &mut [(usize, usize)]) {
    loop {
        let mut changed = false;
        for a in 0..pairs.len() {
            for b in (a + 1)..pairs.len() {
                let (i, j) = pairs[a];
                let (k, l) = pairs[b];
                if j > l
                    && costs.is_allowed(i, l)
                    && costs.is_allowed(k, j)
                    && costs.get(i, l) + costs.get(k, j) == costs.get(i, j) + costs.get(k, l)
                {
                    pairs[a] = (i, l);
                    pairs[b] = (k, j);
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
}
