use crate::diff::{DiffError, Scalar, Tape, Tensor, Var};

/// `exp(-||g(s_c) - g(s_n)||^2 / tau)` with `g(x) = x * w`.
pub fn energy_score(s_c: &[f64], s_n: &[f64], g: &Tensor<f64>, tau: f64) -> f64 {
    (log_energy(&project(s_c, g), &project(s_n, g), tau)).exp()
}

/// Logarithm of the energy score on already projected states. Ranking by
/// this value is the same as ranking by the score but never underflows.
pub fn log_energy<T: Scalar>(gc: &[T], gn: &[T], tau: f64) -> f64 {
    let d2: f64 = gc
        .iter()
        .zip(gn)
        .map(|(&a, &b)| {
            let x = (a - b).as_f64();
            x * x
        })
        .sum();
    -d2 / tau
}

fn project(x: &[f64], g: &Tensor<f64>) -> Vec<f64> {
    let d = g.cols();
    let mut out = vec![0.0; d];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(g.row_slice(i)) {
            *o += xi * w;
        }
    }
    out
}

/// Energy scores recorded on the tape for `n` center/neighbour row pairs,
/// returning an `n x 1` column. Used where the score itself must carry a
/// gradient into `g`.
pub fn energy_score_tape<T: Scalar>(
    tape: &mut Tape<T>,
    centers: Var,
    neighbors: Var,
    g: Var,
    tau: f64,
) -> Result<Var, DiffError> {
    let gc = tape.matmul(centers, g)?;
    let gn = tape.matmul(neighbors, g)?;
    let diff = tape.sub(gc, gn)?;
    let sq = tape.mul(diff, diff)?;
    let d2 = tape.row_sum(sq)?;
    let scaled = tape.scale(d2, -1.0 / tau);
    Ok(tape.exp(scaled))
}

/// Positions (into `scores`) of the `k` highest scores, ties going to the
/// lower position. Returned in ascending position order.
pub fn select_topk(scores: &[f64], k: usize) -> Vec<usize> {
    if scores.len() <= k {
        return (0..scores.len()).collect();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    order.select_nth_unstable_by(k - 1, cmp);
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    top
}

/// Arithmetic mean of `states`; the empty set maps to the zero vector.
pub fn mean_aggregate(states: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if states.is_empty() {
        return out;
    }
    for s in states {
        for (o, &x) in out.iter_mut().zip(s) {
            *o += x;
        }
    }
    let n = states.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}
