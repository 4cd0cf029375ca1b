//! Exactly-symmetric matrices and their spectral operations.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

/// Relative asymmetry above which construction refuses to symmetrize.
const ASYMMETRY_REL_TOL: f64 = 1e-8;

/// Dense real symmetric matrix. Construction symmetrizes to `(X + X^T)/2`,
/// so `get(i, j) == get(j, i)` holds exactly, bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    inner: Matrix,
}

impl SymMatrix {
    /// Build from a square matrix, symmetrizing nearly-symmetric input and
    /// rejecting anything with relative asymmetry above 1e-8.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Input(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let n = m.rows();
        let norm = m.frobenius_norm();
        let mut asym2 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = m.get(i, j) - m.get(j, i);
                asym2 += 2.0 * d * d;
            }
        }
        if asym2.sqrt() > ASYMMETRY_REL_TOL * norm.max(1.0) {
            return Err(Error::Input(format!(
                "matrix is not symmetric: asymmetry {:.3e} exceeds {:.1e} relative",
                asym2.sqrt(),
                ASYMMETRY_REL_TOL
            )));
        }
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            out.set(i, i, m.get(i, i));
            for j in (i + 1)..n {
                let v = 0.5 * (m.get(i, j) + m.get(j, i));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        Ok(Self { dim: n, inner: out })
    }

    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_matrix(&Matrix::new(dim, dim, data)?)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(&Matrix::from_rows(rows)?)
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, inner: Matrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, inner: Matrix::identity(dim) }
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Input("diagonal needs at least one entry".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("diagonal entries must be finite".into()));
        }
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        Ok(Self { dim: n, inner: m })
    }

    /// Rank-one matrix `v v^T`, scaled.
    pub fn outer(v: &[f64], scale: f64) -> Result<Self> {
        let n = v.len();
        if n == 0 {
            return Err(Error::Input("outer product needs a nonempty vector".into()));
        }
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = scale * v[i] * v[j];
                m.set(i, j, x);
                m.set(j, i, x);
            }
        }
        if !m.data().iter().all(|x| x.is_finite()) {
            return Err(Error::Input("outer product entries must be finite".into()));
        }
        Ok(Self { dim: n, inner: m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn to_matrix(&self) -> Matrix {
        self.inner.clone()
    }

    fn from_symmetric_parts(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Self { dim, inner: m }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim != other.dim {
            return Err(Error::Input("symmetric add dimension mismatch".into()));
        }
        Ok(Self::from_symmetric_parts(self.dim, |i, j| self.get(i, j) + other.get(i, j)))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim != other.dim {
            return Err(Error::Input("symmetric sub dimension mismatch".into()));
        }
        Ok(Self::from_symmetric_parts(self.dim, |i, j| self.get(i, j) - other.get(i, j)))
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        Self::from_symmetric_parts(self.dim, |i, j| s * self.get(i, j))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    /// Trace inner product `<S, T> = tr(S T)`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.inner
            .data()
            .iter()
            .zip(other.inner.data())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Quadratic form `v^T S v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += v[i] * self.get(i, j) * v[j];
            }
        }
        acc
    }

    /// Congruence transform `M^T S M`, symmetrized exactly.
    pub fn congruence(&self, m: &Matrix) -> Result<SymMatrix> {
        if m.rows() != self.dim {
            return Err(Error::Input(format!(
                "congruence dimension mismatch: {} vs {}",
                m.rows(),
                self.dim
            )));
        }
        let sm = self.inner.matmul(m)?;
        let full = m.transpose().matmul(&sm)?;
        let k = m.cols();
        Ok(Self::from_symmetric_parts(k, |i, j| {
            0.5 * (full.get(i, j) + full.get(j, i))
        }))
    }

    /// Eigendecomposition by cyclic Jacobi rotations. Eigenvalues are sorted
    /// descending, ties broken by original index.
    pub fn eigen(&self) -> EigenDecomposition {
        let n = self.dim;
        let mut a = self.inner.clone();
        let mut v = Matrix::identity(n);
        let scale = self.frobenius_norm().max(1.0);
        let tol = 1e-15 * scale;

        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a.get(p, q).abs();
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n.saturating_sub(1) {
                for q in (p + 1)..n {
                    let apq = a.get(p, q);
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (a.get(q, q) - a.get(p, p)) / apq;
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // rows/columns p and q of A
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            a.get(j, j)
                .partial_cmp(&a.get(i, i))
                .unwrap()
                .then(i.cmp(&j))
        });
        let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
        let mut vectors = Matrix::zeros(n, n);
        for (new_j, &old_j) in order.iter().enumerate() {
            for i in 0..n {
                vectors.set(i, new_j, v.get(i, old_j));
            }
        }
        EigenDecomposition { values, vectors }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self
            .eigen()
            .values
            .last()
            .expect("symmetric matrices have dim >= 1")
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen().values[0]
    }

    /// Whether the smallest eigenvalue is at least `-rel_tol * scale`, with
    /// `scale = max(1, |largest eigenvalue|)`.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        let eig = self.eigen();
        let scale = eig.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        *eig.values.last().unwrap() >= -rel_tol * scale
    }

    /// Nearest positive semidefinite matrix in the Frobenius norm:
    /// eigendecompose, clip negative eigenvalues to zero, reconstruct.
    pub fn psd_project(&self) -> SymMatrix {
        let eig = self.eigen();
        let clipped: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
        eig.reconstruct_with(&clipped)
    }

    /// Lower-triangular Cholesky factor of a strictly positive definite
    /// matrix: `L L^T = S`.
    pub fn cholesky(&self) -> Result<Matrix> {
        let n = self.dim;
        let max_diag = (0..n).map(|i| self.get(i, i)).fold(0.0f64, f64::max);
        if max_diag <= 0.0 {
            return Err(Error::Definiteness(
                "matrix has no positive diagonal entry".into(),
            ));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if d <= 1e-12 * max_diag {
                return Err(Error::Definiteness(format!(
                    "pivot {d:.3e} at index {j} is not strictly positive",
                )));
            }
            let dj = d.sqrt();
            l.set(j, j, dj);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / dj);
            }
        }
        Ok(l)
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.inner.into()
    }
}

/// Eigenpairs of a symmetric matrix: values sorted descending, orthonormal
/// eigenvectors as matching columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomposition {
    /// Rebuild `V diag(values) V^T`.
    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(&self.values)
    }

    /// Rebuild with substituted eigenvalues (same eigenvectors).
    pub fn reconstruct_with(&self, values: &[f64]) -> SymMatrix {
        let n = values.len();
        SymMatrix::from_symmetric_parts(n, |i, j| {
            (0..n)
                .map(|k| values[k] * self.vectors.get(i, k) * self.vectors.get(j, k))
                .sum()
        })
    }
}
