//! Constant-velocity Gauss-Markov trajectory prior.
//!
//! States stack position and velocity per configuration dimension:
//! x = (p, v) in R^{2*d_cfg}. The one-step transition is
//!
//!   Phi = [I, dt*I; 0, I]
//!
//! and white-noise-on-acceleration integration gives the transition
//! covariance per configuration dimension
//!
//!   Q = qc * [dt^3/3, dt^2/2; dt^2/2, dt],
//!
//! whose exact inverse is (1/qc) * [12/dt^3, -6/dt^2; -6/dt^2, 4/dt]. A
//! trajectory of T+1 waypoints carries a Gaussian with block-tridiagonal
//! precision assembled from the transition factors plus start (and
//! optionally goal) anchors. Sampling draws from that Gaussian scaled by an
//! exploration factor sigma_init around the straight-line mean.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Prior parameters. `d_cfg` counts configuration dimensions, so states have
/// 2*d_cfg entries. `qc` is the acceleration noise power, `sigma_start` and
/// `sigma_goal` the anchor standard deviations, and `sigma_init` the global
/// scale applied when sampling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GpSpec {
    pub d_cfg: usize,
    pub dt: f64,
    pub qc: f64,
    pub sigma_start: f64,
    pub sigma_goal: f64,
    pub sigma_init: f64,
    pub goal_conditioned: bool,
}

impl Default for GpSpec {
    fn default() -> Self {
        Self {
            d_cfg: 2,
            dt: 0.1,
            qc: 1.0,
            sigma_start: 1e-3,
            sigma_goal: 1e-3,
            sigma_init: 1.0,
            goal_conditioned: true,
        }
    }
}

impl GpSpec {
    pub fn state_dim(&self) -> usize {
        2 * self.d_cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_cfg == 0 {
            return Err(Error::InvalidInput("d_cfg must be at least 1".into()));
        }
        for (name, v) in [
            ("dt", self.dt),
            ("qc", self.qc),
            ("sigma_start", self.sigma_start),
            ("sigma_goal", self.sigma_goal),
            ("sigma_init", self.sigma_init),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Transition matrices for one time step, dense 2*d_cfg square.
#[derive(Debug, Clone)]
pub struct TransitionBlocks {
    pub d_cfg: usize,
    pub phi: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_inv: DMatrix<f64>,
    q_inv_coeffs: (f64, f64, f64),
}

impl TransitionBlocks {
    /// Coefficients (a, b, c) of the noise precision acting on each
    /// configuration dimension's (position, velocity) pair:
    /// [a, b; b, c] = (1/qc) * [12/dt^3, -6/dt^2; -6/dt^2, 4/dt].
    pub fn q_inv_coeffs(&self) -> (f64, f64, f64) {
        self.q_inv_coeffs
    }
}

/// Builds Phi, Q and the exact inverse of Q for the given step size.
pub fn transition_blocks(spec: &GpSpec) -> Result<TransitionBlocks> {
    spec.validate()?;
    let dc = spec.d_cfg;
    let d = 2 * dc;
    let dt = spec.dt;
    let mut phi = DMatrix::identity(d, d);
    let mut q = DMatrix::zeros(d, d);
    let mut q_inv = DMatrix::zeros(d, d);
    let qa = spec.qc * dt.powi(3) / 3.0;
    let qb = spec.qc * dt * dt / 2.0;
    let qd = spec.qc * dt;
    let ia = 12.0 / (spec.qc * dt.powi(3));
    let ib = -6.0 / (spec.qc * dt * dt);
    let ic = 4.0 / (spec.qc * dt);
    for k in 0..dc {
        phi[(k, dc + k)] = dt;
        q[(k, k)] = qa;
        q[(k, dc + k)] = qb;
        q[(dc + k, k)] = qb;
        q[(dc + k, dc + k)] = qd;
        q_inv[(k, k)] = ia;
        q_inv[(k, dc + k)] = ib;
        q_inv[(dc + k, k)] = ib;
        q_inv[(dc + k, dc + k)] = ic;
    }
    Ok(TransitionBlocks {
        d_cfg: dc,
        phi,
        q,
        q_inv,
        q_inv_coeffs: (ia, ib, ic),
    })
}

/// One-step deviation energy 0.5 * ||Phi x_t - x_next||^2 in the Q^{-1}
/// metric.
pub fn transition_cost(blocks: &TransitionBlocks, x_t: &[f64], x_next: &[f64]) -> Result<f64> {
    let d = 2 * blocks.d_cfg;
    if x_t.len() != d || x_next.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "states must have {d} entries, got {} and {}",
            x_t.len(),
            x_next.len()
        )));
    }
    let dc = blocks.d_cfg;
    let dt = blocks.phi[(0, dc)];
    let (a, b, c) = blocks.q_inv_coeffs;
    let mut acc = 0.0;
    for k in 0..dc {
        let rp = x_t[k] + dt * x_t[dc + k] - x_next[k];
        let rv = x_t[dc + k] - x_next[dc + k];
        acc += a * rp * rp + 2.0 * b * rp * rv + c * rv * rv;
    }
    Ok(0.5 * acc)
}

/// Block-tridiagonal precision of the anchored trajectory Gaussian over T+1
/// waypoints: transition factors (-Phi, I) weighted by Q^{-1}, a start anchor
/// of precision sigma_start^{-2}, and, when conditioned, a goal anchor of
/// precision sigma_goal^{-2}.
pub fn build_precision(spec: &GpSpec, horizon: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidInput(
            "horizon must be at least 1 transition".into(),
        ));
    }
    let blocks = transition_blocks(spec)?;
    let d = spec.state_dim();
    let n = (horizon + 1) * d;
    let mut prec = DMatrix::zeros(n, n);

    let qi_phi = &blocks.q_inv * &blocks.phi;
    let phit_qi = blocks.phi.transpose() * &blocks.q_inv;
    let phit_qi_phi = &phit_qi * &blocks.phi;

    for t in 0..horizon {
        let r0 = t * d;
        let r1 = (t + 1) * d;
        for i in 0..d {
            for j in 0..d {
                prec[(r0 + i, r0 + j)] += phit_qi_phi[(i, j)];
                prec[(r0 + i, r1 + j)] -= phit_qi[(i, j)];
                prec[(r1 + i, r0 + j)] -= qi_phi[(i, j)];
                prec[(r1 + i, r1 + j)] += blocks.q_inv[(i, j)];
            }
        }
    }
    let sp = spec.sigma_start.powi(-2);
    for i in 0..d {
        prec[(i, i)] += sp;
    }
    if spec.goal_conditioned {
        let gp = spec.sigma_goal.powi(-2);
        let r = horizon * d;
        for i in 0..d {
            prec[(r + i, r + i)] += gp;
        }
    }
    Ok(prec)
}

/// Straight-line mean: positions interpolate linearly between the start and
/// goal positions; every velocity equals the constant (goal_pos -
/// start_pos)/(T*dt). Start and goal velocity entries are ignored.
pub fn straight_line_mean(
    spec: &GpSpec,
    start: &[f64],
    goal: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let d = spec.state_dim();
    if start.len() != d || goal.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "states must have {d} entries, got {} and {}",
            start.len(),
            goal.len()
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidInput(
            "horizon must be at least 1 transition".into(),
        ));
    }
    let dc = spec.d_cfg;
    let total_time = horizon as f64 * spec.dt;
    let mut mean = vec![0.0; (horizon + 1) * d];
    for t in 0..=horizon {
        let frac = t as f64 / horizon as f64;
        let w = &mut mean[t * d..(t + 1) * d];
        for k in 0..dc {
            w[k] = start[k] + frac * (goal[k] - start[k]);
            w[dc + k] = (goal[k] - start[k]) / total_time;
        }
    }
    Ok(mean)
}

/// Batch of trajectories, row-major [plan][waypoint][state entry].
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    n_plans: usize,
    horizon: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn from_flat(n_plans: usize, horizon: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_plans == 0 || horizon == 0 || dim == 0 {
            return Err(Error::DimensionMismatch("empty trajectory batch".into()));
        }
        if data.len() != n_plans * (horizon + 1) * dim {
            return Err(Error::DimensionMismatch(format!(
                "trajectory buffer has {} entries, expected {}",
                data.len(),
                n_plans * (horizon + 1) * dim
            )));
        }
        Ok(Self {
            n_plans,
            horizon,
            dim,
            data,
        })
    }

    pub fn n_plans(&self) -> usize {
        self.n_plans
    }

    /// Number of transitions T; waypoint count is T+1.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn plan(&self, p: usize) -> &[f64] {
        let len = (self.horizon + 1) * self.dim;
        &self.data[p * len..(p + 1) * len]
    }

    pub fn waypoint(&self, p: usize, t: usize) -> &[f64] {
        let len = (self.horizon + 1) * self.dim;
        let start = p * len + t * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn waypoint_mut(&mut self, p: usize, t: usize) -> &mut [f64] {
        let len = (self.horizon + 1) * self.dim;
        let start = p * len + t * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Draws `n_plans` trajectories around the straight-line mean from the
/// anchored Gaussian scaled by sigma_init. Sampling solves L^T x = z against
/// the precision's Cholesky factor, so covariance equals sigma_init^2 times
/// the precision inverse.
pub fn sample_prior(
    spec: &GpSpec,
    start: &[f64],
    goal: &[f64],
    horizon: usize,
    n_plans: usize,
    rng: &mut impl Rng,
) -> Result<TrajectoryBatch> {
    if n_plans == 0 {
        return Err(Error::InvalidInput("n_plans must be at least 1".into()));
    }
    let mean = straight_line_mean(spec, start, goal, horizon)?;
    let prec = build_precision(spec, horizon)?;
    let n = prec.nrows();
    let chol = nalgebra::Cholesky::new(prec).ok_or_else(|| {
        Error::FactorizationFailure("trajectory precision is not positive definite".into())
    })?;
    let lt = chol.l().transpose();

    let d = spec.state_dim();
    let mut data = vec![0.0; n_plans * n];
    let mut z = nalgebra::DVector::zeros(n);
    for p in 0..n_plans {
        for i in 0..n {
            z[i] = rng.sample(StandardNormal);
        }
        let x = lt.solve_upper_triangular(&z).ok_or_else(|| {
            Error::FactorizationFailure("triangular solve failed during sampling".into())
        })?;
        let out = &mut data[p * n..(p + 1) * n];
        for i in 0..n {
            out[i] = mean[i] + spec.sigma_init * x[i];
        }
    }
    TrajectoryBatch::from_flat(n_plans, horizon, d, data)
}
