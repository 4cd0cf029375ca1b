//! Closed-loop trajectory generation and streaming reduction to Gram
//! statistics.
//!
//! Trajectories follow `x[t+1] = (A + B K) x[t] + w[t]`, observed as
//! `y[t] = x[t] + v[t]` for `t = 1..=N`. The estimator never consumes raw
//! trajectories: batches are reduced on the fly to the three Gram sums
//! (first step, last step, all but the last step), whose size is independent
//! of the number of trajectories.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, SymMatrix};
use crate::lqr::SystemDynamics;
use crate::{Error, Result};

/// Process- and measurement-noise covariances. Both must be positive
/// semidefinite; zero covariances are legal and produce noiseless channels.
///
/// Covariances quoted to a few significant digits can be indefinite at the
/// 1e-9 level, so eigenvalues down to `-1e-8` are tolerated here; the
/// sampling square root clips them to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_w: SymMatrix,
    pub sigma_v: SymMatrix,
}

impl NoiseModel {
    pub fn new(sigma_w: SymMatrix, sigma_v: SymMatrix) -> Result<Self> {
        if sigma_w.dim() != sigma_v.dim() {
            return Err(Error::Input("noise covariance dimensions differ".into()));
        }
        for (name, s) in [("process", &sigma_w), ("measurement", &sigma_v)] {
            if !s.is_psd(1e-8) {
                return Err(Error::Definiteness(format!(
                    "{name}-noise covariance is not positive semidefinite"
                )));
            }
        }
        Ok(Self { sigma_w, sigma_v })
    }

    /// Noiseless model of the given dimension.
    pub fn zero(dim: usize) -> Self {
        Self { sigma_w: SymMatrix::zeros(dim), sigma_v: SymMatrix::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.sigma_w.dim()
    }
}

/// Distribution of the initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialStateDistribution {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, covariance: SymMatrix },
}

impl InitialStateDistribution {
    pub fn uniform_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = Self::UniformBox { lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn gaussian(mean: Vec<f64>, covariance: SymMatrix) -> Result<Self> {
        let d = Self::Gaussian { mean, covariance };
        d.validate()?;
        Ok(d)
    }

    /// Point mass at `x` (a Gaussian with zero covariance), for
    /// deterministic starts.
    pub fn fixed(x: &[f64]) -> Self {
        Self::Gaussian { mean: x.to_vec(), covariance: SymMatrix::zeros(x.len()) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::UniformBox { lower, .. } => lower.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Validity check: box bounds ordered strictly per coordinate, Gaussian
    /// covariance positive semidefinite. A singular (even zero) Gaussian
    /// covariance is accepted so deterministic starts stay expressible;
    /// persistent excitation requires a strictly positive definite one and
    /// is diagnosed where it matters, in the experiment harness.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::UniformBox { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Input("box bounds have inconsistent lengths".into()));
                }
                if !lower.iter().chain(upper.iter()).all(|x| x.is_finite()) {
                    return Err(Error::Input("box bounds must be finite".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| l >= u) {
                    return Err(Error::Input(
                        "box lower bound must be strictly below the upper bound".into(),
                    ));
                }
            }
            Self::Gaussian { mean, covariance } => {
                if mean.len() != covariance.dim() {
                    return Err(Error::Input("mean and covariance dimensions differ".into()));
                }
                if !mean.iter().all(|x| x.is_finite()) {
                    return Err(Error::Input("mean must be finite".into()));
                }
                if !covariance.is_psd(1e-10) {
                    return Err(Error::Definiteness(
                        "initial-state covariance is not positive semidefinite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Whether the distribution excites every direction (covariance
    /// strictly positive definite, or a full-dimensional box).
    pub fn is_persistently_exciting(&self) -> bool {
        match self {
            Self::UniformBox { .. } => true,
            Self::Gaussian { covariance, .. } => covariance.min_eigenvalue() > 0.0,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, root: Option<&Matrix>) -> Vec<f64> {
        match self {
            Self::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| rng.gen_range(l..u))
                .collect(),
            Self::Gaussian { mean, .. } => {
                let mut x = mean.clone();
                if let Some(root) = root {
                    add_noise(&mut x, root, rng);
                }
                x
            }
        }
    }
}

/// One observed trajectory: `y[1..=N]`, stored flat, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::Input("trajectory data length must be a multiple of the state dimension".into()));
        }
        if data.len() / n < 2 {
            return Err(Error::Input("trajectories need a horizon of at least 2".into()));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Input("trajectory entries must be finite".into()));
        }
        Ok(Self { n, data })
    }

    pub fn from_observations(obs: &[Vec<f64>]) -> Result<Self> {
        let n = obs.first().map(Vec::len).unwrap_or(0);
        if obs.iter().any(|y| y.len() != n) {
            return Err(Error::Input("observations have inconsistent dimensions".into()));
        }
        Self::new(n, obs.iter().flatten().copied().collect())
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.data.len() / self.n
    }

    /// Observation at step `t` (1-based, matching the model convention).
    pub fn observation(&self, t: usize) -> &[f64] {
        debug_assert!((1..=self.horizon()).contains(&t));
        &self.data[(t - 1) * self.n..t * self.n]
    }
}

/// Streaming sufficient statistics of a batch of trajectories:
/// sums of `y y^T` at the first step, the last step, and over all but the
/// last step, plus the trajectory count.
#[derive(Debug, Clone)]
pub struct GramStatistics {
    s_first: SymMatrix,
    s_last: SymMatrix,
    s_all: SymMatrix,
    m_count: usize,
    horizon: usize,
}

impl GramStatistics {
    pub fn new(n: usize, horizon: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("state dimension must be positive".into()));
        }
        if horizon < 2 {
            return Err(Error::Input("horizon must be at least 2".into()));
        }
        Ok(Self {
            s_first: SymMatrix::zeros(n),
            s_last: SymMatrix::zeros(n),
            s_all: SymMatrix::zeros(n),
            m_count: 0,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.s_first.dim()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn trajectory_count(&self) -> usize {
        self.m_count
    }

    pub fn s_first(&self) -> &SymMatrix {
        &self.s_first
    }

    pub fn s_last(&self) -> &SymMatrix {
        &self.s_last
    }

    pub fn s_all(&self) -> &SymMatrix {
        &self.s_all
    }

    /// Fold one trajectory into the running sums.
    pub fn accumulate(&mut self, traj: &Trajectory) -> Result<()> {
        let n = self.state_dim();
        if traj.state_dim() != n {
            return Err(Error::Input(format!(
                "trajectory dimension {} does not match statistics dimension {n}",
                traj.state_dim()
            )));
        }
        if traj.horizon() != self.horizon {
            return Err(Error::Input(format!(
                "trajectory horizon {} does not match statistics horizon {}",
                traj.horizon(),
                self.horizon
            )));
        }
        add_outer(&mut self.s_first, traj.observation(1));
        add_outer(&mut self.s_last, traj.observation(self.horizon));
        for t in 1..self.horizon {
            add_outer(&mut self.s_all, traj.observation(t));
        }
        self.m_count += 1;
        Ok(())
    }

    /// Merge another batch; sums are associative and commutative, so partial
    /// reductions combine exactly.
    pub fn merge(&mut self, other: &GramStatistics) -> Result<()> {
        if other.state_dim() != self.state_dim() || other.horizon != self.horizon {
            return Err(Error::Input("statistics shapes do not match for merge".into()));
        }
        self.s_first = self.s_first.add(&other.s_first)?;
        self.s_last = self.s_last.add(&other.s_last)?;
        self.s_all = self.s_all.add(&other.s_all)?;
        self.m_count += other.m_count;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = GramStatisticsFile::from(self);
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GramStatisticsFile = serde_json::from_str(&text)?;
        file.try_into()
    }
}

/// On-disk schema of [`GramStatistics`]; matrices as row-major nested arrays.
#[derive(Debug, Serialize, Deserialize)]
pub struct GramStatisticsFile {
    pub n: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "M")]
    pub m_count: usize,
    pub s_first: SymMatrix,
    pub s_last: SymMatrix,
    pub s_all: SymMatrix,
}

impl From<&GramStatistics> for GramStatisticsFile {
    fn from(g: &GramStatistics) -> Self {
        Self {
            n: g.state_dim(),
            horizon: g.horizon,
            m_count: g.m_count,
            s_first: g.s_first.clone(),
            s_last: g.s_last.clone(),
            s_all: g.s_all.clone(),
        }
    }
}

impl TryFrom<GramStatisticsFile> for GramStatistics {
    type Error = Error;
    fn try_from(f: GramStatisticsFile) -> Result<Self> {
        if f.s_first.dim() != f.n || f.s_last.dim() != f.n || f.s_all.dim() != f.n {
            return Err(Error::Input("statistics matrices do not match the declared dimension".into()));
        }
        if f.horizon < 2 {
            return Err(Error::Input("horizon must be at least 2".into()));
        }
        Ok(Self {
            s_first: f.s_first,
            s_last: f.s_last,
            s_all: f.s_all,
            m_count: f.m_count,
            horizon: f.horizon,
        })
    }
}

fn add_outer(s: &mut SymMatrix, y: &[f64]) {
    let updated = s
        .add(&SymMatrix::outer(y, 1.0).expect("observation is nonempty and finite"))
        .expect("dimensions match");
    *s = updated;
}

fn add_noise(x: &mut [f64], root: &Matrix, rng: &mut ChaCha8Rng) {
    let n = x.len();
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += root.get(i, j) * z[j];
        }
        x[i] += acc;
    }
}

/// Square root of a PSD covariance for sampling: Cholesky when strictly
/// positive definite, eigenvalue square root otherwise, `None` for zero.
fn covariance_root(s: &SymMatrix) -> Option<Matrix> {
    if s.frobenius_norm() == 0.0 {
        return None;
    }
    if let Ok(l) = s.cholesky() {
        return Some(l);
    }
    let eig = s.eigen();
    let roots: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let n = s.dim();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            m.set(i, k, eig.vectors.get(i, k) * roots[k]);
        }
    }
    Some(m)
}

/// Derive the per-trajectory random stream from `(seed, batch, trajectory)`.
/// Streams are independent of sampling order, so parallel batch generation
/// reproduces sequential output exactly.
pub fn trajectory_rng(seed: u64, batch: u64, traj: u64) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut acc = mix(seed ^ 0x243F_6A88_85A3_08D3);
    acc = mix(acc ^ batch.wrapping_add(0x1319_8A2E_0370_7344));
    acc = mix(acc ^ traj.wrapping_add(0xA409_3822_299F_31D0));
    let mut bytes = [0u8; 32];
    for chunk in 0..4 {
        acc = mix(acc.wrapping_add(0x9E37_79B9_7F4A_7C15));
        bytes[chunk * 8..(chunk + 1) * 8].copy_from_slice(&acc.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Reusable closed-loop sampler: the closed-loop matrix, covariance roots
/// and stability diagnostics are computed once and shared across draws.
#[derive(Debug, Clone)]
pub struct ClosedLoopSampler {
    a_cl: Matrix,
    w_root: Option<Matrix>,
    v_root: Option<Matrix>,
    init: InitialStateDistribution,
    init_root: Option<Matrix>,
    horizon: usize,
    warnings: Vec<String>,
}

impl ClosedLoopSampler {
    pub fn new(
        sd: &SystemDynamics,
        k: &Matrix,
        noise: &NoiseModel,
        init: &InitialStateDistribution,
        horizon: usize,
    ) -> Result<Self> {
        let n = sd.state_dim();
        if horizon < 2 {
            return Err(Error::Input("horizon must be at least 2".into()));
        }
        if k.rows() != sd.input_dim() || k.cols() != n {
            return Err(Error::Input("gain dimensions do not match the system".into()));
        }
        if noise.dim() != n {
            return Err(Error::Input("noise covariance dimension does not match the state".into()));
        }
        init.validate()?;
        if init.dim() != n {
            return Err(Error::Input("initial distribution dimension does not match the state".into()));
        }
        let a_cl = sd.a().add(&sd.b().matmul(k)?)?;
        let mut warnings = Vec::new();
        let rho = a_cl.spectral_radius()?;
        if rho >= 1.0 {
            warnings.push(format!(
                "closed loop is not stable (spectral radius {rho:.6}); trajectories may diverge"
            ));
        }
        let init_root = match init {
            InitialStateDistribution::Gaussian { covariance, .. } => covariance_root(covariance),
            InitialStateDistribution::UniformBox { .. } => None,
        };
        Ok(Self {
            a_cl,
            w_root: covariance_root(&noise.sigma_w),
            v_root: covariance_root(&noise.sigma_v),
            init: init.clone(),
            init_root,
            horizon,
            warnings,
        })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn closed_loop_matrix(&self) -> &Matrix {
        &self.a_cl
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Trajectory {
        let n = self.a_cl.rows();
        let mut data = vec![0.0; n * self.horizon];
        let mut x = self.init.sample(rng, self.init_root.as_ref());
        let mut next = vec![0.0; n];
        for t in 0..self.horizon {
            let row = &mut data[t * n..(t + 1) * n];
            row.copy_from_slice(&x);
            if let Some(root) = &self.v_root {
                add_noise(row, root, rng);
            }
            if t + 1 < self.horizon {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += self.a_cl.get(i, j) * x[j];
                    }
                    next[i] = acc;
                }
                if let Some(root) = &self.w_root {
                    add_noise(&mut next, root, rng);
                }
                std::mem::swap(&mut x, &mut next);
            }
        }
        Trajectory { n, data }
    }
}

/// Draw one closed-loop trajectory with feedback `u = K x`.
pub fn sample_trajectory(
    sd: &SystemDynamics,
    k: &Matrix,
    noise: &NoiseModel,
    init: &InitialStateDistribution,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    Ok(ClosedLoopSampler::new(sd, k, noise, init, horizon)?.sample(rng))
}

/// Write trajectories as CSV with header `traj_id,t,y_1,...,y_n`, one row
/// per (trajectory, time step), 17 significant digits.
pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let n = trajectories
        .first()
        .map(Trajectory::state_dim)
        .ok_or_else(|| Error::Input("no trajectories to write".into()))?;
    if trajectories.iter().any(|t| t.state_dim() != n) {
        return Err(Error::Input("trajectories have inconsistent dimensions".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "traj_id,t")?;
    for j in 1..=n {
        write!(out, ",y_{j}")?;
    }
    writeln!(out)?;
    for (id, traj) in trajectories.iter().enumerate() {
        for t in 1..=traj.horizon() {
            write!(out, "{id},{t}")?;
            for v in traj.observation(t) {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read trajectories written by [`write_trajectories`]. Malformed rows are
/// reported with their 1-based line number.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    let header = header?;
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    if fields.len() < 3 || fields[0] != "traj_id" || fields[1] != "t" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header traj_id,t,y_1,...".into(),
        });
    }
    for (j, name) in fields[2..].iter().enumerate() {
        if *name != format!("y_{}", j + 1) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected column name {name:?}"),
            });
        }
    }
    let n = fields.len() - 2;

    let mut trajectories = Vec::new();
    let mut current_id: Option<u64> = None;
    let mut current_rows: Vec<f64> = Vec::new();
    let mut expected_t = 1u64;

    let mut finish =
        |rows: &mut Vec<f64>, line: usize| -> Result<()> {
            if rows.is_empty() {
                return Ok(());
            }
            let data = std::mem::take(rows);
            trajectories.push(Trajectory::new(n, data).map_err(|e| Error::Parse {
                line,
                msg: format!("invalid trajectory: {e}"),
            })?);
            Ok(())
        };

    let mut last_line = 1usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim_end().split(',').collect();
        if parts.len() != n + 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} columns, found {}", n + 2, parts.len()),
            });
        }
        let id: u64 = parts[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid trajectory id {:?}", parts[0]),
        })?;
        let t: u64 = parts[1].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid time index {:?}", parts[1]),
        })?;
        if current_id != Some(id) {
            finish(&mut current_rows, lineno)?;
            current_id = Some(id);
            expected_t = 1;
        }
        if t != expected_t {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected time index {expected_t}, found {t}"),
            });
        }
        expected_t += 1;
        for raw in &parts[2..] {
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid number {raw:?}"),
            })?;
            current_rows.push(v);
        }
    }
    finish(&mut current_rows, last_line)?;
    if trajectories.is_empty() {
        return Err(Error::Parse { line: last_line, msg: "file contains no trajectories".into() });
    }
    Ok(trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::{self, ContinuousDynamics};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    pub(crate) fn crank_system() -> SystemDynamics {
        let cd = ContinuousDynamics::new(
            Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -4.0]]).unwrap(),
            Matrix::column(&[0.0, 3.0]).unwrap(),
        )
        .unwrap();
        lqr::discretize(&cd, 0.05).unwrap()
    }

    pub(crate) fn paper_noise() -> NoiseModel {
        NoiseModel::new(
            SymMatrix::from_rows(&[vec![0.1039e-4, 0.0677e-4], vec![0.0677e-4, 0.0997e-4]])
                .unwrap(),
            SymMatrix::from_rows(&[vec![0.2328e-4, -0.2253e-4], vec![-0.2253e-4, 0.2180e-4]])
                .unwrap(),
        )
        .unwrap()
    }

    pub(crate) fn crank_init() -> InitialStateDistribution {
        InitialStateDistribution::uniform_box(
            vec![-2.0 * std::f64::consts::PI / 3.0, -0.1],
            vec![0.0, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn init_validation() {
        assert!(InitialStateDistribution::uniform_box(vec![0.0], vec![0.0]).is_err());
        assert!(InitialStateDistribution::uniform_box(vec![1.0], vec![0.0]).is_err());
        assert!(InitialStateDistribution::gaussian(
            vec![0.0, 0.0],
            SymMatrix::diag(&[1.0, -1.0]).unwrap()
        )
        .is_err());
        // zero covariance (point mass) is legal
        assert!(InitialStateDistribution::gaussian(vec![1.0], SymMatrix::zeros(1)).is_ok());
    }

    #[test]
    fn noise_model_rejects_indefinite() {
        let bad = SymMatrix::diag(&[1.0, -0.1]).unwrap();
        assert!(NoiseModel::new(bad, SymMatrix::zeros(2)).is_err());
    }

    #[test]
    fn noiseless_rollout_matches_analytic_powers() {
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let x0 = [0.7, -0.3];
        let init = InitialStateDistribution::fixed(&x0);
        let mut rng = trajectory_rng(1, 0, 0);
        let traj = sample_trajectory(&sd, &sol.k, &NoiseModel::zero(2), &init, 40, &mut rng)
            .unwrap();
        let a_cl = sd.a().add(&sd.b().matmul(&sol.k).unwrap()).unwrap();
        let mut expected = x0.to_vec();
        for t in 1..=40 {
            let y = traj.observation(t);
            for i in 0..2 {
                assert_close(y[i], expected[i], 1e-12);
            }
            expected = a_cl.matvec(&expected).unwrap();
        }
    }

    #[test]
    fn two_step_zero_dynamics() {
        let sd = SystemDynamics::new(Matrix::zeros(2, 2), Matrix::identity(2)).unwrap();
        let k = Matrix::zeros(2, 2);
        let init = InitialStateDistribution::fixed(&[1.0, 0.0]);
        let mut rng = trajectory_rng(7, 0, 0);
        let traj =
            sample_trajectory(&sd, &k, &NoiseModel::zero(2), &init, 2, &mut rng).unwrap();
        assert_eq!(traj.observation(1), &[1.0, 0.0]);
        assert_eq!(traj.observation(2), &[0.0, 0.0]);
    }

    #[test]
    fn seed_reproducibility_is_bitwise() {
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let sampler =
            ClosedLoopSampler::new(&sd, &sol.k, &paper_noise(), &crank_init(), 30).unwrap();
        let a = sampler.sample(&mut trajectory_rng(42, 3, 11));
        let b = sampler.sample(&mut trajectory_rng(42, 3, 11));
        assert_eq!(a, b);
        let c = sampler.sample(&mut trajectory_rng(42, 3, 12));
        assert_ne!(a, c);
    }

    #[test]
    fn accumulate_outer_products() {
        let mut stats = GramStatistics::new(2, 3).unwrap();
        let traj = Trajectory::from_observations(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        stats.accumulate(&traj).unwrap();
        let e11 = SymMatrix::outer(&[1.0, 0.0], 1.0).unwrap();
        assert!(stats.s_first().sub(&e11).unwrap().frobenius_norm() == 0.0);
        assert!(stats.s_last().sub(&e11).unwrap().frobenius_norm() == 0.0);
        assert!(stats.s_all().sub(&e11.scale(2.0)).unwrap().frobenius_norm() == 0.0);
        assert_eq!(stats.trajectory_count(), 1);
    }

    #[test]
    fn accumulate_rejects_horizon_mismatch() {
        let mut stats = GramStatistics::new(2, 4).unwrap();
        let traj = Trajectory::from_observations(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(stats.accumulate(&traj), Err(Error::Input(_))));
    }

    #[test]
    fn merge_equals_joint_accumulation() {
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let sampler =
            ClosedLoopSampler::new(&sd, &sol.k, &paper_noise(), &crank_init(), 10).unwrap();
        let trajs: Vec<Trajectory> = (0..20)
            .map(|i| sampler.sample(&mut trajectory_rng(5, 0, i)))
            .collect();

        let mut joint = GramStatistics::new(2, 10).unwrap();
        for t in &trajs {
            joint.accumulate(t).unwrap();
        }
        let mut part_a = GramStatistics::new(2, 10).unwrap();
        let mut part_b = GramStatistics::new(2, 10).unwrap();
        for t in &trajs[..7] {
            part_a.accumulate(t).unwrap();
        }
        for t in &trajs[7..] {
            part_b.accumulate(t).unwrap();
        }
        part_a.merge(&part_b).unwrap();
        assert_eq!(part_a.trajectory_count(), joint.trajectory_count());
        assert!(part_a.s_all().sub(joint.s_all()).unwrap().frobenius_norm() <= 1e-12);
    }

    #[test]
    fn streaming_equals_batch_recompute() {
        // Whole-batch oracle: collect all trajectories first, then reduce in
        // one pass; must match the streaming reduction to 1e-9 relative.
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let sampler =
            ClosedLoopSampler::new(&sd, &sol.k, &paper_noise(), &crank_init(), 25).unwrap();

        let mut streaming = GramStatistics::new(2, 25).unwrap();
        let mut stored = Vec::new();
        for i in 0..1000 {
            let t = sampler.sample(&mut trajectory_rng(9, 0, i));
            streaming.accumulate(&t).unwrap();
            stored.push(t);
        }
        let mut batch = GramStatistics::new(2, 25).unwrap();
        for t in &stored {
            batch.accumulate(t).unwrap();
        }
        for (a, b) in [
            (streaming.s_first(), batch.s_first()),
            (streaming.s_last(), batch.s_last()),
            (streaming.s_all(), batch.s_all()),
        ] {
            let rel = a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1.0);
            assert!(rel <= 1e-9);
        }
    }

    #[test]
    fn gram_stats_psd_after_accumulation() {
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let sampler =
            ClosedLoopSampler::new(&sd, &sol.k, &paper_noise(), &crank_init(), 12).unwrap();
        let mut stats = GramStatistics::new(2, 12).unwrap();
        for i in 0..50 {
            stats.accumulate(&sampler.sample(&mut trajectory_rng(13, 0, i))).unwrap();
            assert!(stats.s_first().is_psd(1e-10));
            assert!(stats.s_last().is_psd(1e-10));
            assert!(stats.s_all().is_psd(1e-10));
        }
    }

    #[test]
    fn csv_round_trip_single_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = Trajectory::from_observations(&[vec![1.5, -2.25], vec![0.125, 3.0]]).unwrap();
        write_trajectories(&path, &[traj.clone()]).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], traj);
    }

    #[test]
    fn csv_round_trip_sampled_batch_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let sampler =
            ClosedLoopSampler::new(&sd, &sol.k, &paper_noise(), &crank_init(), 8).unwrap();
        let trajs: Vec<Trajectory> = (0..100)
            .map(|i| sampler.sample(&mut trajectory_rng(21, 0, i)))
            .collect();
        write_trajectories(&path, &trajs).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back.len(), trajs.len());
        let mut max_dev = 0.0f64;
        for (a, b) in trajs.iter().zip(&back) {
            for t in 1..=a.horizon() {
                for (x, y) in a.observation(t).iter().zip(b.observation(t)) {
                    max_dev = max_dev.max((x - y).abs());
                }
            }
        }
        assert!(max_dev <= 1e-15, "round-trip deviation {max_dev}");
    }

    #[test]
    fn csv_wrong_column_count_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "traj_id,t,y_1,y_2\n0,1,1.0,2.0\n0,2,1.0\n",
        )
        .unwrap();
        match read_trajectories(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn gram_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let sampler =
            ClosedLoopSampler::new(&sd, &sol.k, &paper_noise(), &crank_init(), 6).unwrap();
        let mut stats = GramStatistics::new(2, 6).unwrap();
        for i in 0..10 {
            stats.accumulate(&sampler.sample(&mut trajectory_rng(33, 0, i))).unwrap();
        }
        stats.write_json(&path).unwrap();
        let back = GramStatistics::read_json(&path).unwrap();
        assert_eq!(back.trajectory_count(), 10);
        assert!(back.s_all().sub(stats.s_all()).unwrap().frobenius_norm() <= 1e-15);
    }

    /// Monte-Carlo moment oracle for the process-noise channel: with the
    /// measurement channel silenced, increments y[t+1] - A_cl y[t] are
    /// exactly the process noise, so their sample covariance must
    /// reproduce sigma_w.
    #[test]
    fn increments_recover_process_covariance() {
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let noise = NoiseModel::new(paper_noise().sigma_w, SymMatrix::zeros(2)).unwrap();
        let sampler = ClosedLoopSampler::new(&sd, &sol.k, &noise, &crank_init(), 13).unwrap();
        assert!(sampler.warnings().is_empty());

        let a_cl = sampler.closed_loop_matrix().clone();
        let mut sum = SymMatrix::zeros(2);
        let mut count = 0usize;
        for i in 0..100_000u64 {
            let traj = sampler.sample(&mut trajectory_rng(1001, 0, i));
            for t in 1..traj.horizon() {
                let y = traj.observation(t);
                let y_next = traj.observation(t + 1);
                let pred = a_cl.matvec(y).unwrap();
                let w = [y_next[0] - pred[0], y_next[1] - pred[1]];
                sum = sum.add(&SymMatrix::outer(&w, 1.0).unwrap()).unwrap();
                count += 1;
            }
        }
        let est = sum.scale(1.0 / count as f64);
        let truth = paper_noise().sigma_w;
        let rel = est.sub(&truth).unwrap().frobenius_norm() / truth.frobenius_norm();
        assert!(rel <= 0.05, "relative covariance error {rel}");
    }

    /// First-observation covariance: var of the uniform box plus sigma_v.
    #[test]
    fn first_observation_covariance_matches() {
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let noise = paper_noise();
        let init = crank_init();
        let sampler = ClosedLoopSampler::new(&sd, &sol.k, &noise, &init, 2).unwrap();

        let (lo, hi) = match &init {
            InitialStateDistribution::UniformBox { lower, upper } => (lower.clone(), upper.clone()),
            _ => unreachable!(),
        };
        let mean = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let var = [
            (hi[0] - lo[0]).powi(2) / 12.0,
            (hi[1] - lo[1]).powi(2) / 12.0,
        ];
        let truth = SymMatrix::diag(&var).unwrap().add(&noise.sigma_v).unwrap();

        let m = 100_000u64;
        let mut sum = SymMatrix::zeros(2);
        for i in 0..m {
            let traj = sampler.sample(&mut trajectory_rng(2024, 0, i));
            let y = traj.observation(1);
            let centered = [y[0] - mean[0], y[1] - mean[1]];
            sum = sum.add(&SymMatrix::outer(&centered, 1.0).unwrap()).unwrap();
        }
        let est = sum.scale(1.0 / m as f64);
        let rel = est.sub(&truth).unwrap().frobenius_norm() / truth.frobenius_norm();
        assert!(rel <= 0.05, "relative covariance error {rel}");
    }

    /// Empirical mean of y_t stays within 4 standard errors of the analytic
    /// mean A_cl^{t-1} E[x1].
    #[test]
    fn observation_mean_matches_analytic() {
        let sd = crank_system();
        let sol = lqr::solve_dare(&sd, &SymMatrix::identity(2)).unwrap();
        let noise = paper_noise();
        let init = crank_init();
        let t_probe = 5usize;
        let sampler = ClosedLoopSampler::new(&sd, &sol.k, &noise, &init, t_probe).unwrap();

        let m = 100_000u64;
        let mut sum = [0.0f64; 2];
        let mut sum_sq = [0.0f64; 2];
        for i in 0..m {
            let traj = sampler.sample(&mut trajectory_rng(777, 0, i));
            let y = traj.observation(t_probe);
            for c in 0..2 {
                sum[c] += y[c];
                sum_sq[c] += y[c] * y[c];
            }
        }
        let (lo, hi) = match &init {
            InitialStateDistribution::UniformBox { lower, upper } => (lower.clone(), upper.clone()),
            _ => unreachable!(),
        };
        let mut expected = vec![(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let a_cl = sampler.closed_loop_matrix();
        for _ in 1..t_probe {
            expected = a_cl.matvec(&expected).unwrap();
        }
        for c in 0..2 {
            let mean = sum[c] / m as f64;
            let var = sum_sq[c] / m as f64 - mean * mean;
            let se = (var / m as f64).sqrt();
            assert!(
                (mean - expected[c]).abs() <= 4.0 * se,
                "coordinate {c}: mean {mean} vs expected {} (se {se})",
                expected[c]
            );
        }
    }
}
