//! Dense matrix kernels shared by every other module: norms, Gram products,
//! spectral-norm estimation, feasible-set projections, and seeded sampling.

mod matrix;
mod rng;

pub use matrix::{frob_dist_sq, Matrix};
pub use rng::{Rng, StreamTag};

use crate::error::{Error, Result};

/// Default relative tolerance for [`lambda_max_psd`]. Tight enough that the
/// spectral step sizes agree with a dense eigensolver to ~1e-8 relative;
/// the matrices involved are only K x K, so the extra iterations are cheap.
pub const LAMBDA_TOL: f64 = 1e-10;
/// Default iteration cap for [`lambda_max_psd`].
pub const LAMBDA_MAX_ITER: usize = 5000;

/// `‖a‖_F²`, the sum of squared entries.
pub fn frob_norm_sq(a: &Matrix) -> f64 {
    a.data().iter().map(|v| v * v).sum()
}

pub fn frob_norm(a: &Matrix) -> f64 {
    frob_norm_sq(a).sqrt()
}

fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    let n = a.rows();
    let mut out = vec![0.0; n];
    for (j, &vj) in v.iter().enumerate() {
        let col = a.col(j);
        for i in 0..n {
            out[i] += col[i] * vj;
        }
    }
    out
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
///
/// Starts from the normalized all-ones vector; if the iterate collapses into
/// the null space it restarts from successive basis vectors, and returns 0
/// once every basis direction has collapsed. Stops when the Rayleigh
/// quotient changes by at most `tol` relative, or after `max_iter` steps.
pub fn lambda_max_psd(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::DimMismatch(format!(
            "lambda_max_psd needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = f64::NAN;
    let mut restarts = 0usize;
    for _ in 0..max_iter {
        let av = mat_vec(a, &v);
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < f64::MIN_POSITIVE * n as f64 {
            // Numerically in the null space; restart from the next basis vector.
            if restarts >= n {
                return Ok(0.0);
            }
            v = vec![0.0; n];
            v[restarts] = 1.0;
            restarts += 1;
            lambda = f64::NAN;
            continue;
        }
        let rayleigh: f64 = v.iter().zip(av.iter()).map(|(x, y)| x * y).sum();
        if lambda.is_finite() && (rayleigh - lambda).abs() <= tol * rayleigh.abs().max(1e-300) {
            return Ok(rayleigh.max(0.0));
        }
        lambda = rayleigh;
        for (x, y) in v.iter_mut().zip(av.iter()) {
            *x = *y / norm;
        }
    }
    Ok(lambda.max(0.0))
}

/// Elementwise clamp of every entry into `[lo, hi]`.
pub fn project_box(w: &Matrix, lo: f64, hi: f64) -> Result<Matrix> {
    let mut out = w.clone();
    project_box_in_place(&mut out, lo, hi)?;
    Ok(out)
}

pub fn project_box_in_place(w: &mut Matrix, lo: f64, hi: f64) -> Result<()> {
    if lo > hi {
        return Err(Error::EmptyBox { lo, hi });
    }
    for x in w.data_mut() {
        *x = x.clamp(lo, hi);
    }
    Ok(())
}

/// Elementwise `max(0, h)`.
pub fn project_nonneg(h: &Matrix) -> Matrix {
    let mut out = h.clone();
    project_nonneg_in_place(&mut out);
    out
}

pub fn project_nonneg_in_place(h: &mut Matrix) {
    for x in h.data_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Euclidean projection of every column onto the probability simplex
/// (columns sum to 1, entries nonnegative), via the sorting construction.
pub fn project_simplex_columns(h: &Matrix) -> Matrix {
    let mut out = h.clone();
    project_simplex_columns_in_place(&mut out);
    out
}

pub fn project_simplex_columns_in_place(h: &mut Matrix) {
    let mut sorted: Vec<f64> = Vec::with_capacity(h.rows());
    for j in 0..h.cols() {
        let col = h.col_mut(j);
        sorted.clear();
        sorted.extend_from_slice(col);
        sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite entries"));
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (i, &z) in sorted.iter().enumerate() {
            cum += z;
            let t = (cum - 1.0) / (i as f64 + 1.0);
            if z - t > 0.0 {
                theta = t;
            }
        }
        for x in col.iter_mut() {
            *x = (*x - theta).max(0.0);
        }
    }
}

/// `m` distinct indices drawn uniformly from `0..p` (partial Fisher-Yates),
/// returned sorted ascending.
pub fn sample_without_replacement(p: usize, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if m == 0 || m > p {
        return Err(Error::BadSampleSize { m, p });
    }
    let mut idx: Vec<usize> = (0..p).collect();
    for i in 0..m {
        let j = i + rng.index(p - i);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx.sort_unstable();
    Ok(idx)
}
