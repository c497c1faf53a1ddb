//! K-means with distance-weighted seeding and Lloyd iterations.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone)]
pub struct KmeansOutput {
    /// One centroid per column.
    pub centroids: Matrix,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squared distances.
    pub cost: f64,
    pub iterations: u32,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Clusters the columns of `x` into `k` groups.
///
/// Seeding picks the first centroid uniformly and each further centroid with
/// probability proportional to the squared distance from the chosen set.
/// Lloyd iterations run until the assignment stops changing or `max_iters`
/// is hit; an emptied cluster keeps its previous centroid.
pub fn run_kmeanspp(x: &Matrix, k: usize, rng: &mut Rng, max_iters: usize) -> Result<KmeansOutput> {
    let n = x.cols();
    let m = x.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} out of range for {n} samples"
        )));
    }

    // Distance-weighted seeding.
    let mut chosen = vec![rng.index(n)];
    let mut d2: Vec<f64> = (0..n).map(|j| dist_sq(x.col(j), x.col(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.unit() * total;
            let mut pick = n - 1;
            for (j, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = j;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining mass is zero (duplicate points); fall back to uniform.
            rng.index(n)
        };
        chosen.push(next);
        for j in 0..n {
            let d = dist_sq(x.col(j), x.col(next));
            if d < d2[j] {
                d2[j] = d;
            }
        }
    }
    let mut centroids = Matrix::zeros(m, k);
    for (c, &j) in chosen.iter().enumerate() {
        centroids.col_mut(c).copy_from_slice(x.col(j));
    }

    // Lloyd iterations.
    let mut labels = vec![usize::MAX; n];
    let mut prev_cost = f64::INFINITY;
    let mut iterations = 0u32;
    let mut cost = 0.0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut changed = false;
        cost = 0.0;
        for j in 0..n {
            let mut best = 0usize;
            let mut best_d = dist_sq(x.col(j), centroids.col(0));
            for c in 1..k {
                let d = dist_sq(x.col(j), centroids.col(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            cost += best_d;
            if labels[j] != best {
                labels[j] = best;
                changed = true;
            }
        }
        assert!(
            cost <= prev_cost * (1.0 + 1e-12) + 1e-12,
            "within-cluster cost must not increase: {prev_cost} -> {cost}"
        );
        prev_cost = cost;
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(m, k);
        let mut counts = vec![0usize; k];
        for j in 0..n {
            counts[labels[j]] += 1;
            let col = x.col(j);
            let acc = sums.col_mut(labels[j]);
            for (a, &v) in acc.iter_mut().zip(col.iter()) {
                *a += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let src: Vec<f64> = sums.col(c).iter().map(|v| v * inv).collect();
                centroids.col_mut(c).copy_from_slice(&src);
            }
        }
    }

    Ok(KmeansOutput {
        centroids,
        labels,
        cost,
        iterations,
    })
}
