use crate::error::{Error, Result};

/// Dense column-major matrix of `f64`.
///
/// Column-major layout keeps per-sample columns contiguous, which is the
/// access pattern of every kernel in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from a column-major slice, checking length and finiteness.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "matrix dimensions must be positive".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix entry by entry; `f(i, j)` fills row `i`, column `j`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Row-major convenience constructor, mostly for tests and file I/O.
    pub fn from_rows(rows: usize, cols: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                row_major.len()
            )));
        }
        Ok(Self::from_fn(rows, cols, |i, j| row_major[i * cols + j]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[c * self.rows + r] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self * rhs`
    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            let out_col = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for l in 0..self.cols {
                let b = rhs.get(l, j);
                let a_col = self.col(l);
                for i in 0..self.rows {
                    out_col[i] += a_col[i] * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * rhs`
    pub fn transpose_mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, rhs.rows, "row counts must agree");
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for j in 0..rhs.cols {
            let b_col = rhs.col(j);
            for i in 0..self.cols {
                let a_col = self.col(i);
                let mut acc = 0.0;
                for r in 0..self.rows {
                    acc += a_col[r] * b_col[r];
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// `self * rhsᵀ`
    pub fn mul_transpose(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.cols, "column counts must agree");
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..rhs.rows {
            let out_col = &mut out.data[i * self.rows..(i + 1) * self.rows];
            for j in 0..self.cols {
                let b = rhs.get(i, j);
                let a_col = &self.data[j * self.rows..(j + 1) * self.rows];
                for r in 0..self.rows {
                    out_col[r] += a_col[r] * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * self`, the Gram matrix of the columns.
    pub fn gram(&self) -> Matrix {
        self.transpose_mul(self)
    }

    /// `self * selfᵀ`, the Gram matrix of the rows.
    pub fn outer_gram(&self) -> Matrix {
        self.mul_transpose(self)
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &Matrix) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (x, y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += a * *y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.data {
            *x *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Matrix {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(other.data.iter()) {
            *x -= *y;
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Column-stacks `parts` left to right; all parts must share the row count.
    pub fn hstack(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("hstack of zero matrices".into()))?
            .rows;
        let total: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut at = 0;
        for m in parts {
            if m.rows != rows {
                return Err(Error::DimMismatch(format!(
                    "hstack rows {} vs {rows}",
                    m.rows
                )));
            }
            out.data[at * rows..(at + m.cols) * rows].copy_from_slice(&m.data);
            at += m.cols;
        }
        Ok(out)
    }
}

/// Squared Frobenius distance `‖a - b‖_F²` without allocating the difference.
pub fn frob_dist_sq(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.cols, b.cols);
    a.data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}
