//! Objective traces, the normalized-change stopping statistic, and
//! permutation-matched clustering accuracy.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-round record emitted by every solver.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: u32,
    pub objective: f64,
    /// Normalized objective change vs the previous round; `+inf` on the
    /// first round, where no predecessor exists.
    pub epsilon: f64,
    /// Cumulative count of real values uploaded to the server so far.
    pub uplink_cumulative: u64,
    pub active_count: usize,
    pub wall_time_s: f64,
    pub accuracy: Option<f64>,
}

/// Normalized absolute objective change `|F_cur − F_prev| / F_prev`.
pub fn epsilon(f_prev: f64, f_cur: f64) -> Result<f64> {
    if f_prev <= 0.0 {
        return Err(Error::UndefinedStatistic(format!(
            "normalized change needs a positive previous objective, got {f_prev}"
        )));
    }
    Ok((f_cur - f_prev).abs() / f_prev)
}

/// Hard labels from a relaxed assignment matrix: per-column argmax,
/// ties broken toward the lowest cluster index.
pub fn assign_labels(h: &Matrix) -> Vec<usize> {
    let mut labels = Vec::with_capacity(h.cols());
    for j in 0..h.cols() {
        let col = h.col(j);
        let mut best = 0usize;
        for (i, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = i;
            }
        }
        labels.push(best);
    }
    labels
}

/// Minimum-cost perfect assignment on an `n x n` cost matrix (row-major),
/// via the O(n³) potentials method. Returns the column matched to each row.
fn hungarian_min(cost: &[i64], n: usize) -> Vec<usize> {
    let inf = i64::MAX / 2;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
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
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched[j] > 0 {
            assignment[matched[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Best-permutation clustering accuracy in `[0, 1]`: the maximum over label
/// permutations of the fraction of agreeing samples, computed by a Hungarian
/// assignment on the confusion matrix.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimMismatch(format!(
            "{} predictions vs {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    let mut counts = vec![0i64; k * k];
    for (&a, &b) in pred.iter().zip(truth.iter()) {
        if a >= k {
            return Err(Error::LabelOutOfRange { label: a, k });
        }
        if b >= k {
            return Err(Error::LabelOutOfRange { label: b, k });
        }
        counts[a * k + b] += 1;
    }
    let max_count = *counts.iter().max().unwrap();
    let cost: Vec<i64> = counts.iter().map(|&c| max_count - c).collect();
    let assignment = hungarian_min(&cost, k);
    let matched: i64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| counts[i * k + j])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}
