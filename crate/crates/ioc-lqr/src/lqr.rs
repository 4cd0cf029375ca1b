//! Forward problem: discretization, the stabilizing solution of the
//! discrete algebraic Riccati equation (DARE)
//!
//! ```text
//! P = A^T P A + Q - A^T P B (B^T P B + I)^{-1} B^T P A
//! ```
//!
//! with unit input weight, the optimal feedback gain
//! `K = -(B^T P B + I)^{-1} B^T P A`, and the structural checks
//! (controllability, actuation rank, observability) that make the
//! stabilizing solution exist and be strictly positive definite.

use crate::linalg::{expm, Matrix, SymMatrix, RANK_REL_TOL};
use crate::{Error, Result};

/// Continuous-time dynamics `xdot = A_hat x + B_hat u`.
#[derive(Debug, Clone)]
pub struct ContinuousDynamics {
    a_hat: Matrix,
    b_hat: Matrix,
}

impl ContinuousDynamics {
    pub fn new(a_hat: Matrix, b_hat: Matrix) -> Result<Self> {
        if !a_hat.is_square() {
            return Err(Error::Input("drift matrix must be square".into()));
        }
        if b_hat.rows() != a_hat.rows() {
            return Err(Error::Input(format!(
                "input matrix has {} rows, expected {}",
                b_hat.rows(),
                a_hat.rows()
            )));
        }
        Ok(Self { a_hat, b_hat })
    }

    pub fn a_hat(&self) -> &Matrix {
        &self.a_hat
    }

    pub fn b_hat(&self) -> &Matrix {
        &self.b_hat
    }
}

/// Discrete-time dynamics `x[t+1] = A x[t] + B u[t] (+ w[t])`.
///
/// Construction validates shapes only; the structural model assumptions are
/// checked separately by [`check_assumptions`], so that deliberately broken
/// pairs can still be constructed and diagnosed.
#[derive(Debug, Clone)]
pub struct SystemDynamics {
    a: Matrix,
    b: Matrix,
    n: usize,
    m: usize,
}

impl SystemDynamics {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Input("state matrix must be square".into()));
        }
        if b.rows() != a.rows() {
            return Err(Error::Input(format!(
                "input matrix has {} rows, expected {}",
                b.rows(),
                a.rows()
            )));
        }
        let n = a.rows();
        let m = b.cols();
        Ok(Self { a, b, n, m })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Controllability matrix `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_matrix(&self) -> Matrix {
        let mut blocks = Vec::with_capacity(self.n);
        let mut akb = self.b.clone();
        blocks.push(akb.clone());
        for _ in 1..self.n {
            akb = self.a.matmul(&akb).expect("shape checked at construction");
            blocks.push(akb.clone());
        }
        let refs: Vec<&Matrix> = blocks.iter().collect();
        Matrix::hstack(&refs).expect("blocks share row count")
    }
}

/// Solution of the forward problem.
#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub q: SymMatrix,
    pub p: SymMatrix,
    pub k: Matrix,
    /// Frobenius norm of the DARE residual at `(q, p)`.
    pub residual: f64,
    /// Spectral radius of the closed loop `A + B K`.
    pub spectral_radius: f64,
    pub warnings: Vec<String>,
}

/// Outcome of the structural checks backing the forward problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssumptionReport {
    pub controllable: bool,
    pub b_full_rank: bool,
    pub a_invertible: bool,
    pub observable: bool,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.controllable && self.b_full_rank && self.a_invertible && self.observable
    }
}

/// Closed-loop matrix together with its stability/invertibility diagnostics.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub matrix: Matrix,
    pub spectral_radius: f64,
    pub invertible: bool,
}

/// Zero-order-hold discretization with time step `dt`:
/// `A = exp(A_hat dt)`, `B = (integral of exp(A_hat tau) on [0, dt]) B_hat`,
/// both read off the exponential of the augmented matrix
/// `[[A_hat, B_hat], [0, 0]] dt`.
pub fn discretize(cd: &ContinuousDynamics, dt: f64) -> Result<SystemDynamics> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Input(format!("time step must be positive, got {dt}")));
    }
    let n = cd.a_hat.rows();
    let m = cd.b_hat.cols();
    let zero_lower = Matrix::zeros(m, n + m);
    let top = Matrix::hstack(&[&cd.a_hat, &cd.b_hat])?;
    let aug = Matrix::vstack(&[&top, &zero_lower])?.scale(dt);
    let e = expm(&aug)?;
    let a = e.submatrix(0, 0, n, n)?;
    let b = e.submatrix(0, n, n, m)?;
    SystemDynamics::new(a, b)
}

/// Extract a full-row-rank factor `C` with `Q = C^T C` from the
/// eigendecomposition of `Q` (rows `sqrt(lambda_i) v_i^T` for eigenvalues
/// above the relative rank threshold). Returns `None` for `Q = 0`.
pub fn psd_factor(q: &SymMatrix) -> Option<Matrix> {
    let eig = q.eigen();
    let largest = eig.values[0].max(0.0);
    if largest == 0.0 {
        return None;
    }
    let rows: Vec<Vec<f64>> = eig
        .values
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l > RANK_REL_TOL * largest)
        .map(|(k, &l)| {
            (0..q.dim())
                .map(|i| l.sqrt() * eig.vectors.get(i, k))
                .collect()
        })
        .collect();
    if rows.is_empty() {
        return None;
    }
    Some(Matrix::from_rows(&rows).expect("rows share the matrix dimension"))
}

/// Check controllability of `(A, B)`, full column rank of `B`,
/// invertibility of `A`, and observability of `(A, C)` for a factor
/// `Q = C^T C`.
pub fn check_assumptions(sd: &SystemDynamics, q: &SymMatrix) -> Result<AssumptionReport> {
    if q.dim() != sd.n {
        return Err(Error::Input(format!(
            "cost matrix dimension {} does not match state dimension {}",
            q.dim(),
            sd.n
        )));
    }
    if !q.is_psd(RANK_REL_TOL) {
        return Err(Error::Definiteness(format!(
            "cost matrix is not positive semidefinite (min eigenvalue {:.3e})",
            q.min_eigenvalue()
        )));
    }
    let controllable = sd.controllability_matrix().rank() == sd.n;
    let b_full_rank = sd.b.rank() == sd.m;
    let a_invertible = sd.a.rank() == sd.n;

    let observable = match psd_factor(q) {
        None => false, // Q = 0 observes nothing
        Some(c) => {
            let mut blocks = Vec::with_capacity(sd.n);
            let mut cak = c;
            blocks.push(cak.clone());
            for _ in 1..sd.n {
                cak = cak.matmul(&sd.a)?;
                blocks.push(cak.clone());
            }
            let refs: Vec<&Matrix> = blocks.iter().collect();
            Matrix::vstack(&refs)?.rank() == sd.n
        }
    };

    Ok(AssumptionReport { controllable, b_full_rank, a_invertible, observable })
}

/// Frobenius norm of the DARE residual
/// `A^T P A - P + Q - A^T P B (B^T P B + I)^{-1} B^T P A`.
pub fn dare_residual(sd: &SystemDynamics, q: &SymMatrix, p: &SymMatrix) -> Result<f64> {
    let atpa = p.congruence(&sd.a)?;
    let btpb = p.congruence(&sd.b)?;
    let gram = btpb
        .add(&SymMatrix::identity(sd.m))?
        .to_matrix();
    let btpa = sd.b.transpose().matmul(p.as_matrix())?.matmul(&sd.a)?;
    let correction = btpa.transpose().matmul(&gram.solve(&btpa)?)?;
    let residual = atpa
        .to_matrix()
        .sub(p.as_matrix())?
        .add(q.as_matrix())?
        .sub(&correction)?;
    Ok(residual.frobenius_norm())
}

/// One step of the plain Riccati fixed-point map `P <- rhs(P)`.
fn riccati_step(sd: &SystemDynamics, q: &SymMatrix, p: &SymMatrix) -> Result<SymMatrix> {
    let atpa = p.congruence(&sd.a)?;
    let btpb = p.congruence(&sd.b)?;
    let gram = btpb.add(&SymMatrix::identity(sd.m))?.to_matrix();
    let btpa = sd.b.transpose().matmul(p.as_matrix())?.matmul(&sd.a)?;
    let correction = btpa.transpose().matmul(&gram.solve(&btpa)?)?;
    let next = atpa
        .to_matrix()
        .add(q.as_matrix())?
        .sub(&correction)?;
    SymMatrix::from_matrix(&next)
}

/// Plain Riccati fixed-point iteration. Slow but independent of the doubling
/// algorithm; used as fallback and as a cross-checking oracle.
pub fn riccati_fixed_point(
    sd: &SystemDynamics,
    q: &SymMatrix,
    rel_tol: f64,
    max_iter: usize,
) -> Result<SymMatrix> {
    let mut p = q.clone();
    for _ in 0..max_iter {
        let next = riccati_step(sd, q, &p)?;
        let diff = next.sub(&p)?.frobenius_norm();
        p = next;
        if diff <= rel_tol * (1.0 + p.frobenius_norm())
            && dare_residual(sd, q, &p)? <= rel_tol * (1.0 + p.frobenius_norm())
        {
            return Ok(p);
        }
    }
    Err(Error::Numerical(format!(
        "Riccati fixed-point iteration did not converge in {max_iter} iterations"
    )))
}

/// Structure-preserving doubling iteration for the DARE.
fn dare_doubling(sd: &SystemDynamics, q: &SymMatrix, rel_tol: f64) -> Result<SymMatrix> {
    let n = sd.n;
    let eye = Matrix::identity(n);
    let mut a_k = sd.a.clone();
    // G = B B^T (unit input weight)
    let mut g_k = SymMatrix::from_matrix(&sd.b.matmul(&sd.b.transpose())?)?;
    let mut h_k = q.clone();

    for _ in 0..200 {
        let res = dare_residual(sd, q, &h_k)?;
        if res <= rel_tol * (1.0 + h_k.frobenius_norm()) {
            return Ok(h_k);
        }
        // W = I + G H; X = W^{-1} A; Y = W^{-1} G
        let w = eye.add(&g_k.to_matrix().matmul(h_k.as_matrix())?)?;
        let x = w.solve(&a_k)?;
        let y = w.solve(g_k.as_matrix())?;
        let a_next = a_k.matmul(&x)?;
        let g_next = g_k
            .to_matrix()
            .add(&a_k.matmul(&y)?.matmul(&a_k.transpose())?)?;
        let h_next = h_k
            .to_matrix()
            .add(&a_k.transpose().matmul(h_k.as_matrix())?.matmul(&x)?)?;
        a_k = a_next;
        g_k = SymMatrix::from_matrix(&g_next)?;
        h_k = SymMatrix::from_matrix(&h_next)?;
        if !h_k.frobenius_norm().is_finite() {
            return Err(Error::Numerical("doubling iteration diverged".into()));
        }
    }
    let res = dare_residual(sd, q, &h_k)?;
    if res <= rel_tol * (1.0 + h_k.frobenius_norm()) {
        Ok(h_k)
    } else {
        Err(Error::Numerical(format!(
            "doubling iteration stalled at residual {res:.3e}"
        )))
    }
}

/// Optimal feedback gain `K = -(B^T P B + I)^{-1} B^T P A`.
pub fn control_gain(p: &SymMatrix, sd: &SystemDynamics) -> Result<Matrix> {
    if p.dim() != sd.n {
        return Err(Error::Input(format!(
            "cost-to-go dimension {} does not match state dimension {}",
            p.dim(),
            sd.n
        )));
    }
    let gram = p
        .congruence(&sd.b)?
        .add(&SymMatrix::identity(sd.m))?
        .to_matrix();
    let btpa = sd.b.transpose().matmul(p.as_matrix())?.matmul(&sd.a)?;
    Ok(gram.solve(&btpa)?.neg())
}

/// Closed-loop matrix `A + B K` with its spectral radius and an
/// invertibility flag.
pub fn closed_loop(sd: &SystemDynamics, k: &Matrix) -> Result<ClosedLoop> {
    if k.rows() != sd.m || k.cols() != sd.n {
        return Err(Error::Input(format!(
            "gain must be {}x{}, got {}x{}",
            sd.m,
            sd.n,
            k.rows(),
            k.cols()
        )));
    }
    let matrix = sd.a.add(&sd.b.matmul(k)?)?;
    let spectral_radius = matrix.spectral_radius()?;
    let invertible = matrix.rank() == sd.n;
    Ok(ClosedLoop { matrix, spectral_radius, invertible })
}

/// Stopping tolerance for the Riccati iterations.
const DARE_REL_TOL: f64 = 1e-12;
/// Iteration cap for the fixed-point fallback.
const DARE_MAX_ITER: usize = 10_000;

/// Solve the forward problem: the unique stabilizing `P` (strictly positive
/// definite under the model assumptions) and the optimal gain.
///
/// Controllability, actuation rank and observability are hard requirements;
/// invertibility of `A` concerns only the data-generating model, so its
/// failure is reported as a warning instead of an error.
pub fn solve_dare(sd: &SystemDynamics, q: &SymMatrix) -> Result<LqrSolution> {
    let report = check_assumptions(sd, q)?;
    if !report.controllable {
        return Err(Error::Model("the pair (A, B) is not controllable".into()));
    }
    if !report.b_full_rank {
        return Err(Error::Model("B does not have full column rank".into()));
    }
    if !report.observable {
        return Err(Error::Model(
            "the pair (A, C) is not observable for any factor Q = C^T C".into(),
        ));
    }
    let mut warnings = Vec::new();
    if !report.a_invertible {
        warnings.push("A is numerically singular; the sampled-data model assumption fails".into());
    }

    let p = match dare_doubling(sd, q, DARE_REL_TOL) {
        Ok(p) => p,
        Err(_) => {
            warnings.push("doubling iteration failed; fell back to fixed-point".into());
            riccati_fixed_point(sd, q, DARE_REL_TOL, DARE_MAX_ITER)?
        }
    };

    let residual = dare_residual(sd, q, &p)?;
    if residual > 1e-8 * (1.0 + p.frobenius_norm()) {
        return Err(Error::Numerical(format!(
            "DARE residual {residual:.3e} exceeds tolerance"
        )));
    }
    let k = control_gain(&p, sd)?;
    let cl = closed_loop(sd, &k)?;
    if cl.spectral_radius >= 1.0 {
        return Err(Error::Numerical(format!(
            "closed loop is not stable: spectral radius {:.6}",
            cl.spectral_radius
        )));
    }
    if p.min_eigenvalue() <= 0.0 {
        return Err(Error::Numerical(
            "stabilizing solution is not strictly positive definite".into(),
        ));
    }

    Ok(LqrSolution {
        q: q.clone(),
        p,
        k,
        residual,
        spectral_radius: cl.spectral_radius,
        warnings,
    })
}
