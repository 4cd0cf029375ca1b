//! Dense conic solver for linear objectives over the feasible set
//!
//! ```text
//! D(phi) = { (Q, P) : Q >= 0, P >= 0, H(Q, P) >= 0,
//!            ||Q||_F <= phi, ||P||_F <= phi }
//! ```
//!
//! where
//!
//! ```text
//! H(Q, P) = [ B^T P B + I   B^T P A       ]
//!           [ A^T P B       A^T P A + Q - P ]
//! ```
//!
//! is the block form whose Schur complement with respect to the top-left
//! block is the Riccati expression, so `H >= 0` is exactly the relaxed
//! Riccati inequality. The solver is an operator-splitting (ADMM) iteration:
//! cone copies of `Q`, `P` and `H(Q, P)` are kept in consensus with a cached
//! least-squares solve, and each copy is projected onto its cone (and ball)
//! every sweep.

use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, SymMatrix};
use crate::lqr::SystemDynamics;
use crate::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Feasibility slack for reported solutions, relative to the iterate scale.
const FEAS_REL_TOL: f64 = 1e-6;

/// Linear SDP over `D(phi)`: minimize `<c_q, Q> + <c_p, P>`.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub c_q: SymMatrix,
    pub c_p: SymMatrix,
    pub dynamics: SystemDynamics,
    pub phi: f64,
}

impl ConicProblem {
    pub fn new(c_q: SymMatrix, c_p: SymMatrix, dynamics: SystemDynamics, phi: f64) -> Result<Self> {
        let n = dynamics.state_dim();
        if c_q.dim() != n || c_p.dim() != n {
            return Err(Error::Input(format!(
                "objective coefficients must be {n}x{n} to match the dynamics"
            )));
        }
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::Input(format!("domain bound must be positive, got {phi}")));
        }
        Ok(Self { c_q, c_p, dynamics, phi })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    /// Objective value at a point.
    pub fn objective(&self, q: &SymMatrix, p: &SymMatrix) -> f64 {
        self.c_q.dot(q) + self.c_p.dot(p)
    }
}

/// Solver settings: stopping tolerance, iteration cap, and the splitting
/// penalty (step) parameter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ConicSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
}

impl Default for ConicSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200_000, rho: 1.0 }
    }
}

impl ConicSettings {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.rho > 0.0) || self.max_iter == 0 {
            return Err(Error::Input("solver settings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConicStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub q: SymMatrix,
    pub p: SymMatrix,
    pub objective_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: ConicStatus,
    /// Best feasible objective recorded whenever it improved; non-increasing.
    pub best_objective_trace: Vec<f64>,
}

/// Per-constraint slack report from [`verify_feasibility`].
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub min_eig_q: f64,
    pub min_eig_p: f64,
    pub min_eig_h: f64,
    pub norm_q: f64,
    pub norm_p: f64,
    pub phi: f64,
    pub feasible: bool,
    pub violations: Vec<String>,
}

/// Symmetric vectorization with sqrt(2)-scaled off-diagonals, so the
/// Euclidean inner product of images equals the trace inner product.
fn svec(s: &SymMatrix) -> Vec<f64> {
    let n = s.dim();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        out.push(s.get(i, i));
        for j in (i + 1)..n {
            out.push(SQRT2 * s.get(i, j));
        }
    }
    out
}

fn smat(n: usize, v: &[f64]) -> SymMatrix {
    debug_assert_eq!(v.len(), n * (n + 1) / 2);
    let mut m = Matrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        m.set(i, i, v[idx]);
        idx += 1;
        for j in (i + 1)..n {
            let x = v[idx] / SQRT2;
            idx += 1;
            m.set(i, j, x);
            m.set(j, i, x);
        }
    }
    SymMatrix::from_matrix(&m).expect("constructed symmetric")
}

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// The Q-dependent part of `H`: `[[0, 0], [0, Q]]`.
fn h_embed_q(q: &SymMatrix, m: usize) -> SymMatrix {
    let n = q.dim();
    let dim = m + n;
    let mut out = Matrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            out.set(m + i, m + j, q.get(i, j));
        }
    }
    SymMatrix::from_matrix(&out).expect("embedding preserves symmetry")
}

/// The P-dependent part of `H`:
/// `[[B^T P B, B^T P A], [A^T P B, A^T P A - P]]`.
fn h_linear_p(p: &SymMatrix, sd: &SystemDynamics) -> Result<SymMatrix> {
    let (n, m) = (sd.state_dim(), sd.input_dim());
    let btpb = p.congruence(sd.b())?;
    let atpa = p.congruence(sd.a())?;
    let btpa = sd.b().transpose().matmul(p.as_matrix())?.matmul(sd.a())?;
    let mut out = Matrix::zeros(m + n, m + n);
    for i in 0..m {
        for j in 0..m {
            out.set(i, j, btpb.get(i, j));
        }
        for j in 0..n {
            out.set(i, m + j, btpa.get(i, j));
            out.set(m + j, i, btpa.get(i, j));
        }
    }
    for i in 0..n {
        for j in 0..n {
            out.set(m + i, m + j, atpa.get(i, j) - p.get(i, j));
        }
    }
    SymMatrix::from_matrix(&out)
}

/// Assemble `H(Q, P)`.
pub fn assemble_h(q: &SymMatrix, p: &SymMatrix, sd: &SystemDynamics) -> Result<SymMatrix> {
    let (n, m) = (sd.state_dim(), sd.input_dim());
    if q.dim() != n || p.dim() != n {
        return Err(Error::Input(format!(
            "H assembly needs {n}x{n} blocks, got {}x{} and {}x{}",
            q.dim(),
            q.dim(),
            p.dim(),
            p.dim()
        )));
    }
    let mut h0 = Matrix::zeros(m + n, m + n);
    for i in 0..m {
        h0.set(i, i, 1.0);
    }
    let base = SymMatrix::from_matrix(&h0)?;
    base.add(&h_linear_p(p, sd)?)?.add(&h_embed_q(q, m))
}

/// Projection onto `{X >= 0, ||X||_F <= radius}`. For a cone intersected
/// with a centered ball this is exactly cone projection followed by radial
/// scaling.
pub fn project_cone_ball(s: &SymMatrix, radius: f64) -> SymMatrix {
    let p = s.psd_project();
    let norm = p.frobenius_norm();
    if norm > radius {
        p.scale(radius / norm)
    } else {
        p
    }
}

/// Per-constraint slacks of `(q, p)` for the feasible set of `prob`, at
/// relative tolerance `tol`.
pub fn verify_feasibility(
    q: &SymMatrix,
    p: &SymMatrix,
    prob: &ConicProblem,
    tol: f64,
) -> Result<FeasibilityReport> {
    let h = assemble_h(q, p, &prob.dynamics)?;
    let min_eig_q = q.min_eigenvalue();
    let min_eig_p = p.min_eigenvalue();
    let min_eig_h = h.min_eigenvalue();
    let norm_q = q.frobenius_norm();
    let norm_p = p.frobenius_norm();

    let mut violations = Vec::new();
    if min_eig_q < -tol * (1.0 + norm_q) {
        violations.push(format!("Q is not positive semidefinite (min eigenvalue {min_eig_q:.3e})"));
    }
    if min_eig_p < -tol * (1.0 + norm_p) {
        violations.push(format!("P is not positive semidefinite (min eigenvalue {min_eig_p:.3e})"));
    }
    if min_eig_h < -tol * (1.0 + h.frobenius_norm()) {
        violations.push(format!(
            "H(Q, P) is not positive semidefinite (min eigenvalue {min_eig_h:.3e})"
        ));
    }
    if norm_q > prob.phi * (1.0 + tol) {
        violations.push(format!(
            "||Q||_F = {norm_q:.6e} exceeds the domain bound {:.6e}",
            prob.phi
        ));
    }
    if norm_p > prob.phi * (1.0 + tol) {
        violations.push(format!(
            "||P||_F = {norm_p:.6e} exceeds the domain bound {:.6e}",
            prob.phi
        ));
    }
    Ok(FeasibilityReport {
        min_eig_q,
        min_eig_p,
        min_eig_h,
        norm_q,
        norm_p,
        phi: prob.phi,
        feasible: violations.is_empty(),
        violations,
    })
}

/// Cached Cholesky factor for the repeated normal-equation solves.
struct CholFactor {
    l: Matrix,
}

impl CholFactor {
    fn new(s: &SymMatrix) -> Result<Self> {
        Ok(Self { l: s.cholesky()? })
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.l.get(i, j) * y[j];
            }
            y[i] = acc / self.l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in (i + 1)..n {
                acc -= self.l.get(j, i) * x[j];
            }
            x[i] = acc / self.l.get(i, i);
        }
        x
    }
}

/// The stacked consensus map `x = (Q, P) -> (Q, P, H(Q, P) - H0)` in svec
/// coordinates, with its cached normal-equation factorization.
struct ConsensusMap {
    mt: Matrix,
    factor: CholFactor,
    dq: usize,
    dh: usize,
    h_dim: usize,
}

impl ConsensusMap {
    fn new(sd: &SystemDynamics) -> Result<Self> {
        let n = sd.state_dim();
        let m_in = sd.input_dim();
        let h_dim = n + m_in;
        let dq = svec_len(n);
        let dh = svec_len(h_dim);
        let rows = 2 * dq + dh;
        let cols = 2 * dq;

        let mut map = Matrix::zeros(rows, cols);
        for alpha in 0..dq {
            let mut unit = vec![0.0; dq];
            unit[alpha] = 1.0;
            let e = smat(n, &unit);
            // Q column: identity block + embedding into H
            let hq = svec(&h_embed_q(&e, m_in));
            map.set(alpha, alpha, 1.0);
            for (r, v) in hq.iter().enumerate() {
                map.set(2 * dq + r, alpha, *v);
            }
            // P column: identity block + linear H part
            let hp = svec(&h_linear_p(&e, sd)?);
            map.set(dq + alpha, dq + alpha, 1.0);
            for (r, v) in hp.iter().enumerate() {
                map.set(2 * dq + r, dq + alpha, *v);
            }
        }
        let mt = map.transpose();
        let normal = SymMatrix::from_matrix(&mt.matmul(&map)?)?;
        let factor = CholFactor::new(&normal)?;
        Ok(Self { mt, factor, dq, dh, h_dim })
    }

    fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        self.mt.matvec(v).expect("length checked by construction")
    }
}

/// Minimize `<c_q, Q> + <c_p, P>` over `D(phi)` by ADMM.
///
/// Objective coefficients are normalized by `max(1, ||c_q||, ||c_p||)`
/// internally (the optimizer set of a linear objective is scale invariant)
/// and the reported objective uses the original coefficients.
pub fn solve(prob: &ConicProblem, settings: &ConicSettings) -> Result<ConicSolution> {
    settings.validate()?;
    let sd = &prob.dynamics;
    let n = sd.state_dim();
    let map = ConsensusMap::new(sd)?;
    let (dq, dh) = (map.dq, map.dh);
    let h_dim = map.h_dim;

    let kappa = prob
        .c_q
        .frobenius_norm()
        .max(prob.c_p.frobenius_norm())
        .max(1.0);
    let mut c_vec = svec(&prob.c_q.scale(1.0 / kappa));
    c_vec.extend(svec(&prob.c_p.scale(1.0 / kappa)));

    let h0 = {
        let mut id = Matrix::zeros(h_dim, h_dim);
        for i in 0..sd.input_dim() {
            id.set(i, i, 1.0);
        }
        SymMatrix::from_matrix(&id).expect("diagonal is symmetric")
    };
    let h0_vec = svec(&h0);

    let mut rho = settings.rho;
    // cone copies and scaled duals
    let mut z_q = SymMatrix::zeros(n);
    let mut z_p = SymMatrix::zeros(n);
    let mut s = h0.clone();
    let mut u_q = vec![0.0; dq];
    let mut u_p = vec![0.0; dq];
    let mut u_s = vec![0.0; dh];

    let mut q = SymMatrix::zeros(n);
    let mut p = SymMatrix::zeros(n);
    let mut best_obj = f64::INFINITY;
    let mut best_q = None;
    let mut trace = Vec::new();
    let mut primal_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut growth_run = 0usize;
    let mut prev_max_res = f64::INFINITY;
    let mut status = ConicStatus::MaxIter;
    let mut iterations = settings.max_iter;

    for iter in 0..settings.max_iter {
        // x-update: (M^T M) x = M^T v - c / rho
        let zq_v = svec(&z_q);
        let zp_v = svec(&z_p);
        let s_v = svec(&s);
        let mut v = Vec::with_capacity(2 * dq + dh);
        for i in 0..dq {
            v.push(zq_v[i] - u_q[i]);
        }
        for i in 0..dq {
            v.push(zp_v[i] - u_p[i]);
        }
        for i in 0..dh {
            v.push(s_v[i] - u_s[i] - h0_vec[i]);
        }
        let mut rhs = map.apply_t(&v);
        for (r, c) in rhs.iter_mut().zip(&c_vec) {
            *r -= c / rho;
        }
        let x = map.factor.solve_vec(&rhs);
        q = smat(n, &x[..dq]);
        p = smat(n, &x[dq..2 * dq]);
        let h_x = assemble_h(&q, &p, sd)?;
        let h_x_vec = svec(&h_x);

        // z-update: projections of x + u onto the cones
        let z_q_old = z_q.clone();
        let z_p_old = z_p.clone();
        let s_old = s.clone();
        let q_v = &x[..dq];
        let p_v = &x[dq..2 * dq];
        let zq_in: Vec<f64> = q_v.iter().zip(&u_q).map(|(a, b)| a + b).collect();
        let zp_in: Vec<f64> = p_v.iter().zip(&u_p).map(|(a, b)| a + b).collect();
        let s_in: Vec<f64> = h_x_vec.iter().zip(&u_s).map(|(a, b)| a + b).collect();
        z_q = project_cone_ball(&smat(n, &zq_in), prob.phi);
        z_p = project_cone_ball(&smat(n, &zp_in), prob.phi);
        s = smat(h_dim, &s_in).psd_project();

        // dual update and residuals
        let zq_new = svec(&z_q);
        let zp_new = svec(&z_p);
        let s_new = svec(&s);
        let mut r2 = 0.0;
        for i in 0..dq {
            let r = q_v[i] - zq_new[i];
            u_q[i] += r;
            r2 += r * r;
        }
        for i in 0..dq {
            let r = p_v[i] - zp_new[i];
            u_p[i] += r;
            r2 += r * r;
        }
        for i in 0..dh {
            let r = h_x_vec[i] - s_new[i];
            u_s[i] += r;
            r2 += r * r;
        }
        primal_res = r2.sqrt();

        let mut dz = Vec::with_capacity(2 * dq + dh);
        let zq_old_v = svec(&z_q_old);
        let zp_old_v = svec(&z_p_old);
        let s_old_v = svec(&s_old);
        for i in 0..dq {
            dz.push(zq_new[i] - zq_old_v[i]);
        }
        for i in 0..dq {
            dz.push(zp_new[i] - zp_old_v[i]);
        }
        for i in 0..dh {
            dz.push(s_new[i] - s_old_v[i]);
        }
        let mtdz = map.apply_t(&dz);
        dual_res = rho * mtdz.iter().map(|x| x * x).sum::<f64>().sqrt();

        // best feasible objective seen so far (cone copies are exactly
        // cone-and-ball feasible; only H needs checking)
        let h_z = assemble_h(&z_q, &z_p, sd)?;
        if h_z.min_eigenvalue() >= -FEAS_REL_TOL * (1.0 + h_z.frobenius_norm()) {
            let obj = prob.objective(&z_q, &z_p);
            if obj < best_obj {
                best_obj = obj;
                best_q = Some((z_q.clone(), z_p.clone()));
                trace.push(obj);
            }
        }

        let scale = q
            .frobenius_norm()
            .max(p.frobenius_norm())
            .max(h_x.frobenius_norm())
            .max(z_q.frobenius_norm())
            .max(z_p.frobenius_norm())
            .max(s.frobenius_norm());
        let stop = settings.tol * (1.0 + scale);
        if primal_res <= stop && dual_res <= stop {
            status = ConicStatus::Solved;
            iterations = iter + 1;
            break;
        }

        // divergence certificate: monotone residual growth over a long run
        let max_res = primal_res.max(dual_res);
        if max_res > prev_max_res {
            growth_run += 1;
            if growth_run >= 1000 {
                status = ConicStatus::Infeasible;
                iterations = iter + 1;
                break;
            }
        } else {
            growth_run = 0;
        }
        prev_max_res = max_res;

        // residual balancing, checked every 100 iterations
        if (iter + 1) % 100 == 0 {
            if primal_res > 10.0 * dual_res {
                rho *= 2.0;
                for u in u_q.iter_mut().chain(&mut u_p).chain(&mut u_s) {
                    *u *= 0.5;
                }
            } else if dual_res > 10.0 * primal_res {
                rho *= 0.5;
                for u in u_q.iter_mut().chain(&mut u_p).chain(&mut u_s) {
                    *u *= 2.0;
                }
            }
        }
    }

    // Prefer the consensus point; fall back to the best recorded feasible
    // pair if the final iterate drifted (MaxIter exits).
    let (q_out, p_out) = if status == ConicStatus::Solved {
        (q, p)
    } else if let Some((bq, bp)) = best_q {
        (bq, bp)
    } else {
        (q, p)
    };
    let objective_value = prob.objective(&q_out, &p_out);

    Ok(ConicSolution {
        q: q_out,
        p: p_out,
        objective_value,
        primal_residual: primal_res,
        dual_residual: dual_res,
        iterations,
        status,
        best_objective_trace: trace,
    })
}
