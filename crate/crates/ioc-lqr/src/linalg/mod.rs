//! Dense linear algebra for small real matrices (dim ≲ 16): a row-major
//! [`Matrix`], an exactly-symmetric [`SymMatrix`] with Jacobi
//! eigendecomposition, Cholesky, PSD-cone projection, one-sided Jacobi SVD
//! and a Padé matrix exponential.
//!
//! Everything here is an immutable value; operations are pure functions.

mod expm;
mod sym;

pub use expm::expm;
pub use sym::{EigenDecomposition, SymMatrix};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative threshold under which a singular value counts as zero.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Dense real matrix, row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data. Rejects empty shapes, length mismatches
    /// and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Input("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "expected {} entries for a {}x{} matrix, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Input("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("rows have inconsistent lengths".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Result<Self> {
        Self::new(v.len(), 1, v.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.get(i, j);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Input(format!(
                "matmul dimension mismatch: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += aik * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Input(format!(
                "matvec dimension mismatch: {}x{} times len {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self.get(i, j) * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Input(format!(
                "{op} dimension mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn neg(&self) -> Matrix {
        self.scale(-1.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Horizontal concatenation.
    pub fn hstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let rows = blocks.first().map(|b| b.rows).ok_or_else(|| {
            Error::Input("hstack needs at least one block".into())
        })?;
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Input("hstack blocks have differing row counts".into()));
        }
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for i in 0..rows {
                for j in 0..b.cols {
                    out.set(i, off + j, b.get(i, j));
                }
            }
            off += b.cols;
        }
        Ok(out)
    }

    /// Vertical concatenation.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map(|b| b.cols).ok_or_else(|| {
            Error::Input("vstack needs at least one block".into())
        })?;
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Input("vstack blocks have differing column counts".into()));
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..cols {
                    out.set(off + i, j, b.get(i, j));
                }
            }
            off += b.rows;
        }
        Ok(out)
    }

    /// 2x2 block composition [[a, b], [c, d]].
    pub fn block2x2(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Result<Matrix> {
        let top = Matrix::hstack(&[a, b])?;
        let bottom = Matrix::hstack(&[c, d])?;
        Matrix::vstack(&[&top, &bottom])
    }

    pub fn submatrix(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<Matrix> {
        if row0 + rows > self.rows || col0 + cols > self.cols {
            return Err(Error::Input("submatrix out of bounds".into()));
        }
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.set(i, j, self.get(row0 + i, col0 + j));
            }
        }
        Ok(out)
    }

    /// Solve `self * X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::Input("solve requires a square matrix".into()));
        }
        if rhs.rows != self.rows {
            return Err(Error::Input(format!(
                "solve dimension mismatch: {}x{} vs rhs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let n = self.rows;
        let mut lu = self.data.clone();
        let mut x = rhs.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for col in 0..n {
            // pivot selection
            let mut pivot_row = col;
            let mut pivot_val = lu[perm[col] * n + col].abs();
            for r in (col + 1)..n {
                let v = lu[perm[r] * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = r;
                }
            }
            if pivot_val == 0.0 {
                return Err(Error::Numerical("singular matrix in solve".into()));
            }
            perm.swap(col, pivot_row);
            let prow = perm[col];
            let pinv = 1.0 / lu[prow * n + col];
            for r in (col + 1)..n {
                let row = perm[r];
                let factor = lu[row * n + col] * pinv;
                if factor == 0.0 {
                    continue;
                }
                lu[row * n + col] = 0.0;
                for c in (col + 1)..n {
                    lu[row * n + c] -= factor * lu[prow * n + c];
                }
                for c in 0..x.cols {
                    let upd = factor * x.get(prow, c);
                    let cur = x.get(row, c);
                    x.set(row, c, cur - upd);
                }
            }
        }
        // back substitution
        let mut out = Matrix::zeros(n, rhs.cols);
        for c in 0..rhs.cols {
            for i in (0..n).rev() {
                let mut acc = x.get(perm[i], c);
                for j in (i + 1)..n {
                    acc -= lu[perm[i] * n + j] * out.get(j, c);
                }
                out.set(i, c, acc / lu[perm[i] * n + i]);
            }
        }
        if !out.data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("solve produced non-finite entries".into()));
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Result<Matrix> {
        self.solve(&Matrix::identity(self.rows))
    }

    /// Numerical rank: singular values above `RANK_REL_TOL` times the largest.
    pub fn rank(&self) -> usize {
        let sv = self.singular_values();
        let largest = sv.first().copied().unwrap_or(0.0);
        if largest == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > RANK_REL_TOL * largest).count()
    }

    /// Singular values in descending order, via one-sided Jacobi.
    pub fn singular_values(&self) -> Vec<f64> {
        self.svd().0
    }

    /// One-sided Jacobi SVD. Returns `(singular values desc, V)` with the
    /// columns of `V` the right singular vectors in matching order.
    pub fn svd(&self) -> (Vec<f64>, Matrix) {
        let m = self.rows;
        let n = self.cols;
        let mut a = self.clone(); // columns get orthogonalized in place
        let mut v = Matrix::identity(n);
        let tol = 1e-15;
        let max_sweeps = 60;

        for _ in 0..max_sweeps {
            let mut rotated = false;
            for p in 0..n.saturating_sub(1) {
                for q in (p + 1)..n {
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..m {
                        let cp = a.get(i, p);
                        let cq = a.get(i, q);
                        app += cp * cp;
                        aqq += cq * cq;
                        apq += cp * cq;
                    }
                    if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let cp = a.get(i, p);
                        let cq = a.get(i, q);
                        a.set(i, p, c * cp - s * cq);
                        a.set(i, q, s * cp + c * cq);
                    }
                    for i in 0..n {
                        let vp = v.get(i, p);
                        let vq = v.get(i, q);
                        v.set(i, p, c * vp - s * vq);
                        v.set(i, q, s * vp + c * vq);
                    }
                }
            }
            if !rotated {
                break;
            }
        }

        let mut sv: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let norm = (0..m).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt();
                (norm, j)
            })
            .collect();
        sv.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        let values: Vec<f64> = sv.iter().map(|&(s, _)| s).collect();
        let mut vs = Matrix::zeros(n, n);
        for (new_j, &(_, old_j)) in sv.iter().enumerate() {
            for i in 0..n {
                vs.set(i, new_j, v.get(i, old_j));
            }
        }
        (values, vs)
    }

    /// Orthonormal basis of the null space, as columns.
    /// Returns `None` when the matrix has full column rank.
    pub fn null_space(&self) -> Option<Matrix> {
        let (sv, v) = self.svd();
        let largest = sv.first().copied().unwrap_or(0.0);
        let rank = if largest == 0.0 {
            0
        } else {
            sv.iter().filter(|&&s| s > RANK_REL_TOL * largest).count()
        };
        let n = self.cols;
        if rank == n {
            return None;
        }
        Some(v.submatrix(0, rank, n, n - rank).expect("in-bounds"))
    }

    /// Orthonormal basis of the column space, as columns.
    pub fn range_space(&self) -> Option<Matrix> {
        let t = self.transpose();
        let (sv, v) = t.svd();
        let largest = sv.first().copied().unwrap_or(0.0);
        let rank = if largest == 0.0 {
            0
        } else {
            sv.iter().filter(|&&s| s > RANK_REL_TOL * largest).count()
        };
        if rank == 0 {
            return None;
        }
        Some(v.submatrix(0, 0, self.rows, rank).expect("in-bounds"))
    }

    /// Spectral radius by normalized repeated squaring:
    /// `rho(A) = lim ||A^(2^j)||^(1/2^j)`.
    pub fn spectral_radius(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::Input("spectral radius requires a square matrix".into()));
        }
        let mut x = self.clone();
        let mut log_rho = 0.0;
        let mut weight = 1.0;
        for _ in 0..64 {
            let norm = x.frobenius_norm();
            if norm == 0.0 {
                return Ok(0.0);
            }
            log_rho += weight * norm.ln();
            weight *= 0.5;
            let y = x.scale(1.0 / norm);
            x = y.matmul(&y)?;
        }
        Ok(log_rho.exp())
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        (0..m.rows)
            .map(|i| (0..m.cols).map(|j| m.get(i, j)).collect())
            .collect()
    }
}
