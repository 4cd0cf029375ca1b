//! Gain estimation from observed trajectories.
//!
//! Given Gram statistics of `M` observed trajectories and the known noise
//! covariances, the empirical optimality-violation objective is linear in
//! `(Q, P)`:
//!
//! ```text
//! Psi(Q, P) = <c_q, Q> + <c_p, P>
//! c_p = (1/M)(S_last - S_first) - (N - 1) Sigma_w
//! c_q = (1/M) S_all - (N - 1) Sigma_v
//! ```
//!
//! Minimizing it over the feasible set `D(phi)` and reading the feedback
//! gain off the optimizer gives the estimate. The cost pair itself is not
//! unique (the inverse problem is ill-posed in general); only the gain is
//! treated as the estimate, and it converges to the truth as `M` grows.
//!
//! The objective value reported here is shifted against the "true"
//! violation by the mean squared control effort, a constant that cannot be
//! computed from output-only data.

use crate::conic::{self, ConicProblem, ConicSettings, ConicSolution, ConicStatus};
use crate::linalg::{Matrix, SymMatrix};
use crate::lqr::{self, SystemDynamics};
use crate::sim::{GramStatistics, NoiseModel};
use crate::{Error, Result};

/// One estimation problem: known dynamics and noise covariances plus the
/// reduced observations.
#[derive(Debug, Clone)]
pub struct IocInstance {
    pub dynamics: SystemDynamics,
    pub noise: NoiseModel,
    pub stats: GramStatistics,
    pub phi: f64,
}

impl IocInstance {
    pub fn new(
        dynamics: SystemDynamics,
        noise: NoiseModel,
        stats: GramStatistics,
        phi: f64,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        if noise.dim() != n || stats.state_dim() != n {
            return Err(Error::Input(
                "noise and statistics dimensions must match the dynamics".into(),
            ));
        }
        if stats.trajectory_count() == 0 {
            return Err(Error::Input("statistics must cover at least one trajectory".into()));
        }
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::Input(format!("domain bound must be positive, got {phi}")));
        }
        Ok(Self { dynamics, noise, stats, phi })
    }
}

/// Estimation output: an optimizer of the empirical objective and the gain
/// it induces.
#[derive(Debug, Clone)]
pub struct IocEstimate {
    pub q_star: SymMatrix,
    pub p_star: SymMatrix,
    pub k_star: Matrix,
    pub objective_value: f64,
    pub solver: ConicSolution,
    pub warnings: Vec<String>,
}

/// Assemble the linear objective coefficients `(c_q, c_p)` from the Gram
/// statistics and the known covariances.
pub fn build_objective(inst: &IocInstance) -> Result<(SymMatrix, SymMatrix)> {
    let m = inst.stats.trajectory_count() as f64;
    let horizon_minus_one = (inst.stats.horizon() - 1) as f64;
    let c_p = inst
        .stats
        .s_last()
        .sub(inst.stats.s_first())?
        .scale(1.0 / m)
        .sub(&inst.noise.sigma_w.scale(horizon_minus_one))?;
    let c_q = inst
        .stats
        .s_all()
        .scale(1.0 / m)
        .sub(&inst.noise.sigma_v.scale(horizon_minus_one))?;
    Ok((c_q, c_p))
}

/// Empirical optimality violation `Psi(q, p) = <c_q, q> + <c_p, p>`.
pub fn evaluate_violation(q: &SymMatrix, p: &SymMatrix, inst: &IocInstance) -> Result<f64> {
    let (c_q, c_p) = build_objective(inst)?;
    if q.dim() != c_q.dim() || p.dim() != c_p.dim() {
        return Err(Error::Input("matrix dimensions do not match the instance".into()));
    }
    Ok(c_q.dot(q) + c_p.dot(p))
}

/// Solve the estimation problem: minimize the empirical violation over
/// `D(phi)` and derive the gain from the optimizer.
pub fn estimate(inst: &IocInstance, settings: &ConicSettings) -> Result<IocEstimate> {
    let (c_q, c_p) = build_objective(inst)?;
    let prob = ConicProblem::new(c_q, c_p, inst.dynamics.clone(), inst.phi)?;
    let solution = conic::solve(&prob, settings)?;
    match solution.status {
        ConicStatus::Solved => {}
        ConicStatus::MaxIter => {
            return Err(Error::Numerical(format!(
                "conic solver hit the iteration cap ({} iterations, primal residual {:.3e}, \
                 dual residual {:.3e})",
                solution.iterations, solution.primal_residual, solution.dual_residual
            )));
        }
        ConicStatus::Infeasible => {
            return Err(Error::Numerical(
                "conic solver detected divergence; the instance is numerically infeasible".into(),
            ));
        }
    }

    let mut warnings = Vec::new();
    for (name, norm) in [
        ("Q", solution.q.frobenius_norm()),
        ("P", solution.p.frobenius_norm()),
    ] {
        if norm >= 0.99 * inst.phi {
            warnings.push(format!(
                "||{name}||_F = {norm:.3e} is within 1% of the domain bound {:.3e}; \
                 the bound may be too small",
                inst.phi
            ));
        }
    }

    let k_star = lqr::control_gain(&solution.p, &inst.dynamics)?;
    Ok(IocEstimate {
        q_star: solution.q.clone(),
        p_star: solution.p.clone(),
        k_star,
        objective_value: solution.objective_value,
        solver: solution,
        warnings,
    })
}
