//! Identifiability of the quadratic state cost behind an observed closed
//! loop.
//!
//! The closed-loop map determines the cost matrix `Q` uniquely exactly when
//! no nonzero symmetric pair `(dP, dQ)` satisfies
//!
//! ```text
//! (a) B^T dP = 0
//! (b) A^T dP A - dP + dQ = 0
//! (c) P + dP >= 0
//! (d) Q + dQ >= 0
//! ```
//!
//! Any such pair is a counterexample: `(Q + dQ, P + dP)` solves the same
//! Riccati equation and produces the same feedback gain. This module
//! verifies candidate pairs, constructs them from the kernel of `B^T`, and
//! runs a probe search over the full admissible subspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{Matrix, SymMatrix};
use crate::lqr::{self, SystemDynamics};
use crate::{Error, Result};

/// Certificates below this Frobenius norm count as zero.
const NONZERO_TOL: f64 = 1e-10;
/// Relative bisection accuracy for the feasibility boundary.
const BISECT_REL_TOL: f64 = 1e-10;
/// Number of random probe directions beyond the basis probes.
const RANDOM_PROBES: usize = 64;
/// Fixed stream for the probe directions, so verdicts are reproducible.
const PROBE_SEED: u64 = 0x1d3a_55e5_0b5e_7a11;

/// A nonzero pair `(dP, dQ)` witnessing that the cost is not identifiable.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub delta_p: SymMatrix,
    pub delta_q: SymMatrix,
    /// Scale at which the feasibility conditions were anchored (half the
    /// distance to the semidefiniteness boundary along this direction).
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentifiabilityStatus {
    Identifiable,
    NonIdentifiable,
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct IdentifiabilityVerdict {
    pub status: IdentifiabilityStatus,
    pub certificate: Option<Certificate>,
    pub diagnostics: String,
}

/// Check the four certificate conditions at tolerance `tol`, plus the
/// nonzero requirement on both perturbations.
pub fn verify_certificate(
    cert: &Certificate,
    sd: &SystemDynamics,
    p_bar: &SymMatrix,
    q_bar: &SymMatrix,
    tol: f64,
) -> Result<bool> {
    let n = sd.state_dim();
    if cert.delta_p.dim() != n || cert.delta_q.dim() != n || p_bar.dim() != n || q_bar.dim() != n {
        return Err(Error::Input("certificate dimensions do not match the system".into()));
    }
    if cert.delta_p.frobenius_norm() <= NONZERO_TOL
        || cert.delta_q.frobenius_norm() <= NONZERO_TOL
    {
        return Ok(false);
    }
    let bt_dp = sd.b().transpose().matmul(cert.delta_p.as_matrix())?;
    if bt_dp.frobenius_norm() > tol {
        return Ok(false);
    }
    let lyap = cert
        .delta_p
        .congruence(sd.a())?
        .sub(&cert.delta_p)?
        .add(&cert.delta_q)?;
    if lyap.frobenius_norm() > tol {
        return Ok(false);
    }
    if p_bar.add(&cert.delta_p)?.min_eigenvalue() < -tol {
        return Ok(false);
    }
    if q_bar.add(&cert.delta_q)?.min_eigenvalue() < -tol {
        return Ok(false);
    }
    Ok(true)
}

/// Largest `t >= 0` keeping both `p + t dP` and `q + t dQ` positive
/// semidefinite, found by doubling then bisection. Returns 0 when even
/// infinitesimal steps are infeasible and `f64::INFINITY` when no finite
/// boundary exists along this ray.
fn feasibility_boundary(
    p_bar: &SymMatrix,
    q_bar: &SymMatrix,
    dp: &SymMatrix,
    dq: &SymMatrix,
) -> Result<f64> {
    let feasible = |t: f64| -> Result<bool> {
        let p = p_bar.add(&dp.scale(t))?;
        let q = q_bar.add(&dq.scale(t))?;
        let p_scale = p.frobenius_norm().max(1.0);
        let q_scale = q.frobenius_norm().max(1.0);
        Ok(p.min_eigenvalue() >= -1e-12 * p_scale && q.min_eigenvalue() >= -1e-12 * q_scale)
    };

    let mut hi = 1.0;
    let mut lo = 0.0;
    if feasible(hi)? {
        let cap = 2.0f64.powi(50);
        while feasible(hi)? {
            lo = hi;
            hi *= 2.0;
            if hi > cap {
                return Ok(f64::INFINITY);
            }
        }
    }
    // invariant: feasible(lo), infeasible(hi)
    while hi - lo > BISECT_REL_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Build a certificate candidate along a fixed symmetric direction `dp_dir`
/// (with `dq` induced by condition (b)), anchored at half the feasibility
/// boundary. Returns `None` when the direction admits no nonzero certificate.
fn certificate_along(
    sd: &SystemDynamics,
    p_bar: &SymMatrix,
    q_bar: &SymMatrix,
    dp_dir: &SymMatrix,
) -> Result<Option<Certificate>> {
    let dq_dir = dp_dir.sub(&dp_dir.congruence(sd.a())?)?;
    if dq_dir.frobenius_norm() <= NONZERO_TOL {
        return Ok(None);
    }
    let boundary = feasibility_boundary(p_bar, q_bar, dp_dir, &dq_dir)?;
    if boundary <= NONZERO_TOL {
        return Ok(None);
    }
    let alpha = if boundary.is_finite() { 0.5 * boundary } else { 1.0 };
    let cert = Certificate {
        delta_p: dp_dir.scale(alpha),
        delta_q: dq_dir.scale(alpha),
        alpha,
    };
    if verify_certificate(&cert, sd, p_bar, q_bar, 1e-8)? {
        Ok(Some(cert))
    } else {
        Ok(None)
    }
}

/// Construct a certificate from a kernel vector of `B^T`: `dP = t v v^T`,
/// `dQ = t (v v^T - A^T v v^T A)`, with `t` chosen at half the distance to
/// the semidefiniteness boundary. The positive direction is tried first;
/// when the cost sits on the cone boundary the negative direction may be
/// the only feasible one. Requires more states than inputs.
pub fn kernel_certificate(
    sd: &SystemDynamics,
    p_bar: &SymMatrix,
    q_bar: &SymMatrix,
) -> Result<Option<Certificate>> {
    let (n, m) = (sd.state_dim(), sd.input_dim());
    if n <= m {
        return Err(Error::NotApplicable(format!(
            "kernel certificates need more states than inputs (n = {n}, m = {m})"
        )));
    }
    if p_bar.dim() != n || q_bar.dim() != n {
        return Err(Error::Input("matrix dimensions do not match the system".into()));
    }
    let kernel = match sd.b().transpose().null_space() {
        Some(k) => k,
        None => return Ok(None), // full-column-rank B^T cannot happen for n > m
    };
    let v: Vec<f64> = (0..n).map(|i| kernel.get(i, 0)).collect();
    let vvt = SymMatrix::outer(&v, 1.0)?;
    for dir in [vvt.clone(), vvt.scale(-1.0)] {
        if let Some(cert) = certificate_along(sd, p_bar, q_bar, &dir)? {
            return Ok(Some(cert));
        }
    }
    Ok(None)
}

/// Orthonormal basis of the symmetric subspace `{S : B^T S = 0}`, built from
/// an orthonormal kernel basis `{v_k}` of `B^T` as `{v_k v_k^T}` together
/// with `{(v_k v_j^T + v_j v_k^T)/sqrt(2)}` for `k < j`.
fn admissible_basis(kernel: &Matrix) -> Result<Vec<SymMatrix>> {
    let n = kernel.rows();
    let r = kernel.cols();
    let col = |j: usize| -> Vec<f64> { (0..n).map(|i| kernel.get(i, j)).collect() };
    let mut basis = Vec::with_capacity(r * (r + 1) / 2);
    for k in 0..r {
        basis.push(SymMatrix::outer(&col(k), 1.0)?);
    }
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    for k in 0..r {
        for j in (k + 1)..r {
            let vk = col(k);
            let vj = col(j);
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                for l in 0..n {
                    m.set(i, l, inv_sqrt2 * (vk[i] * vj[l] + vj[i] * vk[l]));
                }
            }
            basis.push(SymMatrix::from_matrix(&m)?);
        }
    }
    Ok(basis)
}

/// Decide identifiability at `q_bar` by solving the forward problem and
/// searching certificate directions.
///
/// With as many inputs as states the only admissible perturbation is zero,
/// so the verdict is `Identifiable` outright. Otherwise directions are
/// probed over the admissible subspace (each basis direction with both
/// signs, then random unit combinations); the first direction admitting a
/// verified certificate settles the verdict as `NonIdentifiable`. The probe
/// search is sufficient only, so exhausting it returns `Undetermined`
/// rather than `Identifiable`.
pub fn check_identifiability(
    sd: &SystemDynamics,
    q_bar: &SymMatrix,
) -> Result<IdentifiabilityVerdict> {
    let sol = lqr::solve_dare(sd, q_bar)?;
    let (n, m) = (sd.state_dim(), sd.input_dim());
    if m == n {
        return Ok(IdentifiabilityVerdict {
            status: IdentifiabilityStatus::Identifiable,
            certificate: None,
            diagnostics: "B is square with full column rank, so B^T dP = 0 forces dP = 0".into(),
        });
    }
    let kernel = match sd.b().transpose().null_space() {
        Some(k) => k,
        None => {
            return Ok(IdentifiabilityVerdict {
                status: IdentifiabilityStatus::Identifiable,
                certificate: None,
                diagnostics: "B^T has a trivial kernel, so B^T dP = 0 forces dP = 0".into(),
            })
        }
    };
    let basis = admissible_basis(&kernel)?;

    let mut probes: Vec<SymMatrix> = Vec::with_capacity(2 * basis.len() + RANDOM_PROBES);
    for e in &basis {
        probes.push(e.clone());
        probes.push(e.scale(-1.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    for _ in 0..RANDOM_PROBES {
        let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            continue;
        }
        let mut dir = SymMatrix::zeros(n);
        for (c, e) in coeffs.iter().zip(&basis) {
            dir = dir.add(&e.scale(c / norm))?;
        }
        probes.push(dir);
    }

    for (idx, dir) in probes.iter().enumerate() {
        if let Some(cert) = certificate_along(sd, &sol.p, q_bar, dir)? {
            return Ok(IdentifiabilityVerdict {
                status: IdentifiabilityStatus::NonIdentifiable,
                certificate: Some(cert),
                diagnostics: format!(
                    "probe {idx} of {} admits a verified certificate (kernel dimension {})",
                    probes.len(),
                    kernel.cols()
                ),
            });
        }
    }
    Ok(IdentifiabilityVerdict {
        status: IdentifiabilityStatus::Undetermined,
        certificate: None,
        diagnostics: format!(
            "no certificate found among {} probe directions; the probe search is \
             sufficient only, so identifiability remains undetermined",
            probes.len()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrator_fixture() -> (SystemDynamics, SymMatrix) {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let b = Matrix::column(&[1.0, 0.0]).unwrap();
        let q = SymMatrix::diag(&[0.0, 1.0]).unwrap();
        (SystemDynamics::new(a, b).unwrap(), q)
    }

    fn crank_discrete() -> SystemDynamics {
        let cd = lqr::ContinuousDynamics::new(
            Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -4.0]]).unwrap(),
            Matrix::column(&[0.0, 3.0]).unwrap(),
        )
        .unwrap();
        lqr::discretize(&cd, 0.05).unwrap()
    }

    /// The hand construction dP = diag(0, -a), dQ = [[a, a], [a, 0]] for the
    /// integrator fixture.
    fn handmade_certificate(alpha: f64) -> Certificate {
        Certificate {
            delta_p: SymMatrix::diag(&[0.0, -alpha]).unwrap(),
            delta_q: SymMatrix::from_rows(&[vec![alpha, alpha], vec![alpha, 0.0]]).unwrap(),
            alpha,
        }
    }

    #[test]
    fn handmade_certificate_verifies() {
        let (sd, q) = integrator_fixture();
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        let cert = handmade_certificate(0.5);
        assert!(verify_certificate(&cert, &sd, &p, &q, 1e-8).unwrap());
    }

    #[test]
    fn zero_certificate_rejected() {
        let (sd, q) = integrator_fixture();
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        let cert = Certificate {
            delta_p: SymMatrix::zeros(2),
            delta_q: SymMatrix::zeros(2),
            alpha: 0.0,
        };
        assert!(!verify_certificate(&cert, &sd, &p, &q, 1e-8).unwrap());
    }

    #[test]
    fn identity_delta_p_violates_kernel_condition() {
        let (sd, q) = integrator_fixture();
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        let dp = SymMatrix::identity(2);
        let dq = dp.sub(&dp.congruence(sd.a()).unwrap()).unwrap();
        let cert = Certificate { delta_p: dp, delta_q: dq, alpha: 1.0 };
        assert!(!verify_certificate(&cert, &sd, &p, &q, 1e-8).unwrap());
    }

    #[test]
    fn kernel_certificate_on_strictly_pd_cost() {
        let sd = crank_discrete();
        let q = SymMatrix::identity(2);
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        let cert = kernel_certificate(&sd, &p, &q).unwrap().expect("certificate");
        assert!(verify_certificate(&cert, &sd, &p, &q, 1e-8).unwrap());
    }

    #[test]
    fn kernel_certificate_matches_hand_form_on_integrator() {
        // For B = e1 the kernel of B^T is spanned by e2, so the certificate
        // must be a scaling of dP = -a e2 e2^T, dQ = [[a, a], [a, 0]].
        let (sd, q) = integrator_fixture();
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        let cert = kernel_certificate(&sd, &p, &q).unwrap().expect("certificate");
        assert!(verify_certificate(&cert, &sd, &p, &q, 1e-8).unwrap());
        let alpha = -cert.delta_p.get(1, 1);
        assert!(alpha > 0.0, "integrator fixture needs the negative direction");
        assert!(cert.delta_p.get(0, 0).abs() <= 1e-12);
        assert!(cert.delta_p.get(0, 1).abs() <= 1e-12);
        assert!((cert.delta_q.get(0, 0) - alpha).abs() <= 1e-9 * alpha.max(1.0));
        assert!((cert.delta_q.get(0, 1) - alpha).abs() <= 1e-9 * alpha.max(1.0));
        assert!(cert.delta_q.get(1, 1).abs() <= 1e-9 * alpha.max(1.0));
    }

    #[test]
    fn kernel_certificate_not_applicable_square_input() {
        let sd = SystemDynamics::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            Matrix::identity(2),
        )
        .unwrap();
        let q = SymMatrix::identity(2);
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        assert!(matches!(
            kernel_certificate(&sd, &p, &q),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn verdict_non_identifiable_on_integrator() {
        let (sd, q) = integrator_fixture();
        let verdict = check_identifiability(&sd, &q).unwrap();
        assert_eq!(verdict.status, IdentifiabilityStatus::NonIdentifiable);
        let cert = verdict.certificate.expect("certificate required");
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        assert!(verify_certificate(&cert, &sd, &p, &q, 1e-8).unwrap());
    }

    #[test]
    fn verdict_identifiable_when_fully_actuated() {
        let sd = SystemDynamics::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            Matrix::identity(2),
        )
        .unwrap();
        let verdict = check_identifiability(&sd, &SymMatrix::identity(2)).unwrap();
        assert_eq!(verdict.status, IdentifiabilityStatus::Identifiable);
        assert!(verdict.certificate.is_none());
    }

    #[test]
    fn verdict_non_identifiable_on_crank() {
        let sd = crank_discrete();
        let verdict = check_identifiability(&sd, &SymMatrix::identity(2)).unwrap();
        assert_eq!(verdict.status, IdentifiabilityStatus::NonIdentifiable);
        assert!(verdict.certificate.is_some());
    }

    #[test]
    fn certificate_scaling_closure() {
        // If (dP, dQ) verifies, so does (s dP, s dQ) for s in (0, 1].
        let (sd, q) = integrator_fixture();
        let p = lqr::solve_dare(&sd, &q).unwrap().p;
        let cert = kernel_certificate(&sd, &p, &q).unwrap().expect("certificate");
        for s in [1.0, 0.7, 0.25, 1e-3] {
            let scaled = Certificate {
                delta_p: cert.delta_p.scale(s),
                delta_q: cert.delta_q.scale(s),
                alpha: cert.alpha * s,
            };
            assert!(
                verify_certificate(&scaled, &sd, &p, &q, 1e-8).unwrap(),
                "scaling {s} broke the certificate"
            );
        }
    }

    #[test]
    fn certificate_consequences_hold() {
        // The perturbed pair solves the Riccati equation and reproduces the
        // same gain.
        let (sd, q) = integrator_fixture();
        let sol = lqr::solve_dare(&sd, &q).unwrap();
        let verdict = check_identifiability(&sd, &q).unwrap();
        let cert = verdict.certificate.expect("certificate");
        let q_pert = q.add(&cert.delta_q).unwrap();
        let p_pert = sol.p.add(&cert.delta_p).unwrap();
        let res = lqr::dare_residual(&sd, &q_pert, &p_pert).unwrap();
        assert!(res <= 1e-8, "perturbed DARE residual {res}");
        let k0 = lqr::control_gain(&sol.p, &sd).unwrap();
        let k1 = lqr::control_gain(&p_pert, &sd).unwrap();
        assert!(k0.sub(&k1).unwrap().frobenius_norm() <= 1e-10);
    }
}
