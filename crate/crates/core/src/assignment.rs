//! Optimal bipartite matching.
//!
//! [`solve_max`] maximizes the total score with a Kuhn-Munkres solver
//! (shortest augmenting paths with row/column potentials) run on the
//! negated, square-padded matrix. [`brute_force_max`] enumerates all
//! matchings and exists as a test oracle.

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};

/// Default floor below which a solved pair is discarded.
pub const DEFAULT_MIN_AFFINITY: f64 = 0.2;

/// Largest `min(rows, cols)` accepted by [`brute_force_max`].
pub const BRUTE_FORCE_CAP: usize = 9;

/// Result of a matching: accepted pairs plus the leftovers on each side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unassigned_rows: Vec<usize>,
    pub unassigned_cols: Vec<usize>,
}

impl Assignment {
    /// Sum of the matrix entries at the accepted pairs, in row order.
    pub fn total(&self, matrix: &AffinityMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| matrix.get(r, c)).sum()
    }

    /// Column matched to `row`, if any.
    pub fn col_for(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    fn from_row_map(row_to_col: &[Option<usize>], cols: usize) -> Self {
        let mut out = Assignment::default();
        let mut col_used = vec![false; cols];
        for (r, c) in row_to_col.iter().enumerate() {
            match c {
                Some(c) => {
                    out.pairs.push((r, *c));
                    col_used[*c] = true;
                }
                None => out.unassigned_rows.push(r),
            }
        }
        out.unassigned_cols = (0..cols).filter(|&c| !col_used[c]).collect();
        out
    }
}

/// Minimum-cost perfect matching on an `n x n` row-major cost matrix.
///
/// Returns `row_to_col`. Rows are inserted in index order and each
/// augmenting search scans columns in index order, so the result is fully
/// deterministic.
fn minimize_square(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays with a virtual column 0, following the classic
    // potentials formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            row_to_col[col_owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum-total matching of `matrix`, keeping only pairs scoring at least
/// `min_affinity`.
///
/// Before filtering exactly `min(rows, cols)` pairs are selected.
pub fn solve_max(matrix: &AffinityMatrix, min_affinity: f64) -> Assignment {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    if matrix.is_empty() {
        return Assignment {
            pairs: Vec::new(),
            unassigned_rows: (0..rows).collect(),
            unassigned_cols: (0..cols).collect(),
        };
    }

    let n = rows.max(cols);
    let max_entry = matrix
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let min_entry = matrix
        .values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    // Costs are shifted so the best real entry costs 0; padding costs more
    // than every real entry.
    let pad_cost = (max_entry - min_entry) + 1.0;
    let mut cost = vec![pad_cost; n * n];
    for r in 0..rows {
        for c in 0..cols {
            cost[r * n + c] = max_entry - matrix.get(r, c);
        }
    }

    let solved = minimize_square(&cost, n);
    let row_to_col: Vec<Option<usize>> = (0..rows)
        .map(|r| {
            let c = solved[r];
            (c < cols && matrix.get(r, c) >= min_affinity).then_some(c)
        })
        .collect();
    Assignment::from_row_map(&row_to_col, cols)
}

/// Exact maximum over all matchings of size `min(rows, cols)`, by enumeration.
pub fn brute_force_max(matrix: &AffinityMatrix) -> Result<f64> {
    if matrix.is_empty() {
        return Ok(0.0);
    }
    let transposed = matrix.rows() > matrix.cols();
    let m = if transposed {
        matrix.transposed()
    } else {
        matrix.clone()
    };
    if m.rows() > BRUTE_FORCE_CAP {
        return Err(Error::BruteForceTooLarge(m.rows()));
    }

    struct Walk<'a> {
        m: &'a AffinityMatrix,
        original: &'a AffinityMatrix,
        transposed: bool,
        used: Vec<bool>,
        chosen: Vec<usize>,
        best: f64,
    }

    impl Walk<'_> {
        // Totals are summed in the original matrix's row order so they
        // compare bit-for-bit with `Assignment::total`.
        fn total(&self) -> f64 {
            if !self.transposed {
                return self
                    .chosen
                    .iter()
                    .enumerate()
                    .map(|(r, &c)| self.m.get(r, c))
                    .sum();
            }
            let mut pairs: Vec<(usize, usize)> = self
                .chosen
                .iter()
                .enumerate()
                .map(|(c, &r)| (r, c))
                .collect();
            pairs.sort_unstable();
            pairs.iter().map(|&(r, c)| self.original.get(r, c)).sum()
        }

        fn go(&mut self, row: usize) {
            if row == self.m.rows() {
                let t = self.total();
                if t > self.best {
                    self.best = t;
                }
                return;
            }
            for c in 0..self.m.cols() {
                if !self.used[c] {
                    self.used[c] = true;
                    self.chosen.push(c);
                    self.go(row + 1);
                    self.chosen.pop();
                    self.used[c] = false;
                }
            }
        }
    }

    let mut w = Walk {
        m: &m,
        original: matrix,
        transposed,
        used: vec![false; m.cols()],
        chosen: Vec::with_capacity(m.rows()),
        best: f64::NEG_INFINITY,
    };
    w.go(0);
    Ok(w.best)
}
