//! Dense minimum-cost perfect matching (Hungarian method with potentials).

use crate::error::{Error, Result};

/// Square cost matrix stored row-major. `None` marks a missing edge.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    cells: Vec<Option<f64>>,
}

impl CostMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, cells: vec![None; n * n] }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::new(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            for (j, &c) in row.iter().enumerate() {
                m.set(i, j, c);
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize, cost: f64) {
        self.cells[i * self.n + j] = Some(cost);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.n + j]
    }
}

/// Minimum-cost perfect matching. Returns `row -> column` and the total cost.
///
/// Missing entries are replaced by a sentinel larger than twice the sum of
/// all finite magnitudes; a solution that needs one means no perfect matching
/// exists.
pub fn solve(m: &CostMatrix) -> Result<(Vec<usize>, f64)> {
    let n = m.n;
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let finite: f64 = m.cells.iter().flatten().map(|c| c.abs()).sum();
    let big = 2.0 * finite + 1.0;
    let cost: Vec<f64> = m.cells.iter().map(|c| c.unwrap_or(big)).collect();

    // 1-based potentials; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
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

    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    let mut total = 0.0;
    for (i, &j) in row_to_col.iter().enumerate() {
        total += m.get(i, j).ok_or(Error::NoPerfectMatching)?;
    }
    Ok((row_to_col, total))
}

/// Exhaustive minimum over all permutations; for tests on tiny matrices.
pub fn brute_force(m: &CostMatrix) -> Option<f64> {
    fn rec(m: &CostMatrix, i: usize, used: &mut Vec<bool>, acc: f64, best: &mut Option<f64>) {
        if i == m.n {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        for j in 0..m.n {
            if used[j] {
                continue;
            }
            if let Some(c) = m.get(i, j) {
                used[j] = true;
                rec(m, i + 1, used, acc + c, best);
                used[j] = false;
            }
        }
    }
    let mut best = None;
    rec(m, 0, &mut vec![false; m.n], 0.0, &mut best);
    best
}
