//! Data-noise alignment: pair every clip in a batch with a candidate noise so
//! that the summed squared distance is minimal.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::videoops::VideoTensor;

/// Dense row-major cost matrix, always held in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} cost matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged cost matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    /// `sum_i cost[i][perm[i]]`, accumulated in row order.
    pub fn assignment_cost(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// Column assigned to each row.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// `cost[i][j] = |xs[i] - es[j]|^2` over the flattened tensors.
pub fn pairwise_sq_dist<T: Scalar>(xs: &[VideoTensor<T>], es: &[VideoTensor<T>]) -> Result<CostMatrix> {
    if xs.len() != es.len() {
        return Err(Error::Shape(format!(
            "batch sizes {} and {} differ",
            xs.len(),
            es.len()
        )));
    }
    let n = xs.len();
    if let Some(first) = xs.first() {
        let len = first.data().len();
        if xs.iter().chain(es).any(|t| t.data().len() != len) {
            return Err(Error::Shape("flattened lengths differ".into()));
        }
    }
    let mut data = Vec::with_capacity(n * n);
    for x in xs {
        for e in es {
            let d: f64 = x
                .data()
                .iter()
                .zip(e.data())
                .map(|(&a, &b)| {
                    let d = a.as_f64() - b.as_f64();
                    d * d
                })
                .sum();
            data.push(d);
        }
    }
    CostMatrix::new(n, n, data)
}

/// Exact minimum-cost perfect matching on a square matrix (shortest augmenting
/// path Hungarian method with potentials, `O(n^3)`).
///
/// Ties resolve toward the lowest column index.
pub fn linear_sum_assignment(cost: &CostMatrix) -> Result<AssignmentResult> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::Input(format!(
            "cost matrix must be square, got {}x{}",
            n,
            cost.cols()
        )));
    }
    if cost.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(AssignmentResult {
            permutation: Vec::new(),
            total_cost: 0.0,
        });
    }

    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut permutation = vec![0usize; n];
    for j in 1..=n {
        permutation[row_of[j] - 1] = j - 1;
    }
    let total_cost = cost.assignment_cost(&permutation);
    Ok(AssignmentResult {
        permutation,
        total_cost,
    })
}

/// Exhaustive minimum over all `n!` permutations. Only sensible for small `n`.
pub fn brute_force_assignment(cost: &CostMatrix) -> AssignmentResult {
    fn recurse(
        cost: &CostMatrix,
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let n = cost.rows();
        if row == n {
            let c = cost.assignment_cost(cur);
            if best.as_ref().map_or(true, |(b, _)| c < *b) {
                *best = Some((c, cur.clone()));
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                recurse(cost, row + 1, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = None;
    recurse(
        cost,
        0,
        &mut vec![false; cost.rows()],
        &mut Vec::new(),
        &mut best,
    );
    let (total_cost, permutation) = best.unwrap_or((0.0, Vec::new()));
    AssignmentResult {
        permutation,
        total_cost,
    }
}

/// Returns the noise batch reordered so that `out[i] = eps[perm[i]]` for the
/// optimal assignment, together with the assignment itself.
pub fn align_noise_with_assignment<T: Scalar>(
    x_batch: &[VideoTensor<T>],
    eps_batch: &[VideoTensor<T>],
) -> Result<(Vec<VideoTensor<T>>, AssignmentResult)> {
    if let (Some(x), Some(e)) = (x_batch.first(), eps_batch.first()) {
        if x_batch.iter().chain(eps_batch).any(|t| t.shape() != x.shape()) || e.shape() != x.shape() {
            return Err(Error::Shape("all clips and noises must share one shape".into()));
        }
    }
    let cost = pairwise_sq_dist(x_batch, eps_batch)?;
    let assignment = linear_sum_assignment(&cost)?;
    let aligned = assignment
        .permutation
        .iter()
        .map(|&j| eps_batch[j].clone())
        .collect();
    Ok((aligned, assignment))
}

pub fn align_noise<T: Scalar>(
    x_batch: &[VideoTensor<T>],
    eps_batch: &[VideoTensor<T>],
) -> Result<Vec<VideoTensor<T>>> {
    align_noise_with_assignment(x_batch, eps_batch).map(|(a, _)| a)
}
