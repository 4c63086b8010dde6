//! Exact linear assignment (Hungarian method with potentials).

use super::FlowError;
use crate::diff::{Scalar, Tensor};

/// Largest batch `ot_pair` will solve exactly.
pub const OT_MAX_BATCH: usize = 512;

/// Minimum-cost assignment for a square `n x n` cost matrix given row-major.
/// Returns `assign[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials formulation; p[j] is the row matched to column j.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
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
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Permutation `pi` minimising `sum_i ||heads[i] - tails[pi[i]]||^2`.
pub fn ot_pair<T: Scalar>(heads: &Tensor<T>, tails: &Tensor<T>) -> Result<Vec<usize>, FlowError> {
    let n = heads.rows();
    if tails.rows() != n || heads.cols() != tails.cols() {
        return Err(FlowError::Shape(format!(
            "ot_pair: heads {:?} vs tails {:?}",
            heads.shape(),
            tails.shape()
        )));
    }
    if n > OT_MAX_BATCH {
        return Err(FlowError::OtBudget { n, max: OT_MAX_BATCH });
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = pair_cost(heads.row_slice(i), tails.row_slice(j));
        }
    }
    Ok(hungarian(&cost, n))
}

pub fn pair_cost<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum()
}

/// Total cost of pairing row `i` of `heads` with row `pi[i]` of `tails`.
pub fn assignment_cost<T: Scalar>(heads: &Tensor<T>, tails: &Tensor<T>, pi: &[usize]) -> f64 {
    pi.iter()
        .enumerate()
        .map(|(i, &j)| pair_cost(heads.row_slice(i), tails.row_slice(j)))
        .sum()
}
