//! Batch trajectory optimizer for a planar point mass.
//!
//! Plans `n_plans` trajectories at once by flattening every waypoint of every
//! plan into a single point batch and iterating the transport-based batch
//! update in a normalized state space. Each waypoint's cost row combines
//! binary obstacle occupancy, probed around the waypoint, with the
//! constant-velocity transition penalties against both in-trajectory
//! neighbors. Start (and optionally goal) waypoints are frozen in place.

use crate::error::{Error, Result};
use crate::gp::{self, GpSpec, TrajectoryBatch};
use crate::ot::CostMatrix;
use crate::polytope::{DirectionSet, PolytopeKind};
use crate::rng;
use crate::step::{self, BatchObjective, PointBatch, StepConfig, StepTrace};
use crate::world2d::{
    collision_free, Environment2D, ShapeIndex, Task2D, VALIDATION_INTERP, VALIDATION_MARGIN,
};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Per-dimension affine normalization box. States are mapped so that
/// `lo -> -1` and `hi -> 1`; the map is not a clamp, values outside the box
/// simply land outside [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBounds {
    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            lo: vec![-limit; dim],
            hi: vec![limit; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::DimensionMismatch(format!(
                "bounds arrays of lengths {} and {}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && h > l) {
                return Err(Error::InvalidInput(format!(
                    "degenerate bound [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    /// Midpoint and half-width per dimension.
    fn center_half(&self) -> (Vec<f64>, Vec<f64>) {
        let center = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        let half = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        (center, half)
    }
}

/// Maps flat state data (row-major, `bounds.dim()` entries per state) into
/// the [-1, 1] box in place.
pub fn normalize_states(data: &mut [f64], bounds: &StateBounds) -> Result<()> {
    bounds.validate()?;
    let d = bounds.dim();
    if data.len() % d != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} state entries do not tile dimension {d}",
            data.len()
        )));
    }
    let (center, half) = bounds.center_half();
    for row in data.chunks_exact_mut(d) {
        for k in 0..d {
            row[k] = (row[k] - center[k]) / half[k];
        }
    }
    Ok(())
}

/// Inverse of [`normalize_states`]; the round trip is exact to within a few
/// ulps.
pub fn denormalize_states(data: &mut [f64], bounds: &StateBounds) -> Result<()> {
    bounds.validate()?;
    let d = bounds.dim();
    if data.len() % d != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} state entries do not tile dimension {d}",
            data.len()
        )));
    }
    let (center, half) = bounds.center_half();
    for row in data.chunks_exact_mut(d) {
        for k in 0..d {
            row[k] = center[k] + half[k] * row[k];
        }
    }
    Ok(())
}

/// Full planning setup. The batch-update fields (`kind` through `lambda`)
/// seed the iteration's [`StepConfig`]; `eta` scales the obstacle term
/// against the transition penalties; `collision_margin` inflates obstacles
/// inside the cost oracle only (final validation always uses the world
/// defaults).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub n_plans: usize,
    /// Transitions per trajectory; waypoint count is `horizon + 1`.
    pub horizon: usize,
    pub kind: PolytopeKind,
    pub alpha0: f64,
    pub beta0: f64,
    pub h: usize,
    pub eps: f64,
    pub lambda: f64,
    pub eta: f64,
    pub gp: GpSpec,
    pub collision_margin: f64,
    pub bounds: StateBounds,
    pub max_iters: usize,
    /// Stop early once the mean per-waypoint displacement of an iteration
    /// falls below this value (normalized units).
    pub displacement_tol: f64,
    pub pin_start: bool,
    pub pin_goal: bool,
    pub rotate: bool,
    pub ot_max_iters: usize,
    pub ot_tol: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n_plans: 100,
            horizon: 64,
            kind: PolytopeKind::Cube,
            alpha0: 0.38,
            beta0: 0.5,
            h: 10,
            eps: 0.032,
            lambda: 0.01,
            eta: 3.0,
            gp: GpSpec {
                d_cfg: 2,
                dt: 1.5,
                qc: 200.0,
                sigma_start: 1e-3,
                sigma_goal: 1e-3,
                sigma_init: 3.6e-3,
                goal_conditioned: true,
            },
            collision_margin: 0.1,
            // Positions span the workspace; velocity dims get a tight box so
            // polytope steps perturb velocities far less than positions
            // (velocity noise is what ruins smoothness, and typical speeds
            // here are well under 0.5).
            bounds: StateBounds {
                lo: vec![-10.0, -10.0, -0.5, -0.5],
                hi: vec![10.0, 10.0, 0.5, 0.5],
            },
            max_iters: 150,
            displacement_tol: 1e-4,
            pin_start: true,
            pin_goal: true,
            rotate: true,
            ot_max_iters: 100,
            ot_tol: 1e-5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_plans == 0 {
            return Err(Error::InvalidInput("n_plans must be at least 1".into()));
        }
        if self.horizon < 2 {
            return Err(Error::InvalidInput(format!(
                "horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        self.gp.validate()?;
        self.bounds.validate()?;
        if self.bounds.dim() != self.gp.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "bounds cover {} dimensions, state has {}",
                self.bounds.dim(),
                self.gp.state_dim()
            )));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "eta must be non-negative, got {}",
                self.eta
            )));
        }
        if !(self.collision_margin.is_finite() && self.collision_margin >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "collision_margin must be non-negative, got {}",
                self.collision_margin
            )));
        }
        // Step-level parameters are re-validated by the update itself; a
        // throwaway StepConfig surfaces those errors at config time.
        self.step_config(None).validate(1, self.gp.state_dim())
    }

    fn step_config(&self, freeze: Option<Vec<bool>>) -> StepConfig {
        StepConfig {
            kind: self.kind,
            alpha: self.alpha0,
            beta: self.beta0,
            h: self.h,
            lambda: self.lambda,
            eps: self.eps,
            annealing: true,
            rotate: self.rotate,
            ot_max_iters: self.ot_max_iters,
            ot_tol: self.ot_tol,
            freeze,
        }
    }
}

/// Planning output in workspace units.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub batch: TrajectoryBatch,
    /// Per-trajectory objective: obstacle term plus transition penalties,
    /// the same quantity the update minimizes, at the final states.
    pub costs: Vec<f64>,
    /// Collision validation per trajectory (world-default margin and
    /// interpolation).
    pub free: Vec<bool>,
    pub best: usize,
    pub best_free: bool,
    /// True when the transport solve diverged twice in one iteration and the
    /// loop stopped early; the result holds the last valid iterate.
    pub diverged: bool,
    pub time_s: f64,
    pub trace: StepTrace,
}

impl PlanResult {
    pub fn best_plan(&self) -> &[f64] {
        self.batch.plan(self.best)
    }
}

/// Lowest-cost index among collision-free trajectories; falls back to the
/// global lowest cost, flagged not-free, when nothing validates.
pub fn select_best(costs: &[f64], free: &[bool]) -> Result<(usize, bool)> {
    if costs.is_empty() || costs.len() != free.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} costs against {} flags",
            costs.len(),
            free.len()
        )));
    }
    let argmin = |pred: &dyn Fn(usize) -> bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in 0..costs.len() {
            if pred(i) && best.is_none_or(|b| costs[i] < costs[b]) {
                best = Some(i);
            }
        }
        best
    };
    if let Some(i) = argmin(&|i| free[i]) {
        return Ok((i, true));
    }
    let i = argmin(&|_| true).expect("nonempty costs");
    Ok((i, false))
}

/// Waypoint cost oracle. Queries arrive in normalized coordinates; costs are
/// computed in workspace units against a snapshot of the full batch so every
/// row of one iteration sees the same neighbor states.
struct PlannerObjective<'e> {
    index: ShapeIndex<'e>,
    eta: f64,
    dt: f64,
    /// (a, b, c) of the per-config-dim transition precision block.
    coeffs: (f64, f64, f64),
    d_cfg: usize,
    dim: usize,
    horizon: usize,
    center: Vec<f64>,
    half: Vec<f64>,
    /// Normalized pre-update batch, refreshed once per iteration.
    snapshot: Vec<f64>,
    /// Obstacle terms only make sense for a planar configuration space.
    occupancy_active: bool,
}

impl<'e> PlannerObjective<'e> {
    fn new(env: &'e Environment2D, cfg: &PlannerConfig) -> Result<Self> {
        let blocks = gp::transition_blocks(&cfg.gp)?;
        let occupancy_active = cfg.gp.d_cfg == 2;
        if !occupancy_active && !env.shapes.is_empty() {
            return Err(Error::InvalidInput(
                "obstacle costs require a two-dimensional configuration space".into(),
            ));
        }
        let (center, half) = cfg.bounds.center_half();
        Ok(Self {
            index: ShapeIndex::build(env, cfg.collision_margin),
            eta: cfg.eta,
            dt: cfg.gp.dt,
            coeffs: blocks.q_inv_coeffs(),
            d_cfg: cfg.gp.d_cfg,
            dim: cfg.gp.state_dim(),
            horizon: cfg.horizon,
            center,
            half,
            snapshot: Vec::new(),
            occupancy_active,
        })
    }

    fn sync(&mut self, batch: &[f64]) {
        self.snapshot.clear();
        self.snapshot.extend_from_slice(batch);
    }

    /// Squared transition-precision norm of a workspace residual.
    fn q_quad(&self, r: &[f64]) -> f64 {
        let (a, b, c) = self.coeffs;
        let dc = self.d_cfg;
        let mut s = 0.0;
        for k in 0..dc {
            let rp = r[k];
            let rv = r[dc + k];
            s += a * rp * rp + 2.0 * b * rp * rv + c * rv * rv;
        }
        s
    }

    fn workspace(&self, norm: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = self.center[k] + self.half[k] * norm[k];
        }
    }
}

impl BatchObjective for PlannerObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Isolated-state cost: the obstacle term alone. Transition penalties
    /// need a batch index for neighbor lookup, so the planner always goes
    /// through [`Self::point_costs`] and [`Self::probe_means`].
    fn evaluate_batch(&self, queries: &[f64], out: &mut [f64]) -> Result<()> {
        for (q, o) in queries.chunks_exact(self.dim).zip(out.iter_mut()) {
            *o = if self.occupancy_active {
                let px = self.center[0] + self.half[0] * q[0];
                let py = self.center[1] + self.half[1] * q[1];
                if self.index.occupied([px, py]) {
                    self.eta
                } else {
                    0.0
                }
            } else {
                0.0
            };
        }
        Ok(())
    }

    /// Obstacle term plus the forward transition, so the batch sum equals
    /// the summed trajectory objective with each transition counted once.
    fn point_costs(&self, points: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim;
        let dc = self.d_cfg;
        let wpp = self.horizon + 1;
        let (a, b, c) = self.coeffs;
        let n = points.len() / d;
        for i in 0..n {
            let t = i % wpp;
            let x = &points[i * d..(i + 1) * d];
            let mut cost = 0.0;
            if self.occupancy_active {
                let px = self.center[0] + self.half[0] * x[0];
                let py = self.center[1] + self.half[1] * x[1];
                if self.index.occupied([px, py]) {
                    cost += self.eta;
                }
            }
            if t < self.horizon {
                let nx = &points[(i + 1) * d..(i + 2) * d];
                for k in 0..dc {
                    let xp = self.center[k] + self.half[k] * x[k];
                    let xv = self.center[dc + k] + self.half[dc + k] * x[dc + k];
                    let np = self.center[k] + self.half[k] * nx[k];
                    let nv = self.center[dc + k] + self.half[dc + k] * nx[dc + k];
                    let rp = xp + self.dt * xv - np;
                    let rv = xv - nv;
                    cost += 0.5 * (a * rp * rp + 2.0 * b * rp * rv + c * rv * rv);
                }
            }
            out[i] = cost;
        }
        Ok(())
    }

    /// Fused probe evaluation. Obstacle occupancy is sampled pointwise along
    /// each ray; both transition penalties are quadratic in the probe radius,
    /// so their means over the radii reduce to closed forms in the first two
    /// radius moments. Boundary waypoints drop the missing neighbor term.
    fn probe_means(
        &self,
        index: usize,
        x: &[f64],
        dirs: &[f64],
        radii: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.dim;
        let dc = self.d_cfg;
        let m = dirs.len() / d;
        let hf = radii.len() as f64;
        let wpp = self.horizon + 1;
        let t = index % wpp;
        let (a, b, c) = self.coeffs;

        let (mut mr, mut mr2) = (0.0, 0.0);
        for &r in radii {
            mr += r;
            mr2 += r * r;
        }
        mr /= hf;
        mr2 /= hf;

        let mut xw = vec![0.0; d];
        self.workspace(x, &mut xw);

        // Workspace residuals against the snapshot neighbors: the constant
        // parts of the quadratics the probes perturb.
        let mut scratch = vec![0.0; d];
        let back = if t > 0 {
            self.workspace(&self.snapshot[(index - 1) * d..index * d], &mut scratch);
            let mut bvec = vec![0.0; d];
            for k in 0..dc {
                bvec[k] = scratch[k] + self.dt * scratch[dc + k] - xw[k];
                bvec[dc + k] = scratch[dc + k] - xw[dc + k];
            }
            let b0 = self.q_quad(&bvec);
            Some((bvec, b0))
        } else {
            None
        };
        let fwd = if t < self.horizon {
            self.workspace(&self.snapshot[(index + 1) * d..(index + 2) * d], &mut scratch);
            let mut fvec = vec![0.0; d];
            for k in 0..dc {
                fvec[k] = xw[k] + self.dt * xw[dc + k] - scratch[k];
                fvec[dc + k] = xw[dc + k] - scratch[dc + k];
            }
            let f0 = self.q_quad(&fvec);
            Some((fvec, f0))
        } else {
            None
        };

        for i in 0..m {
            let dir = &dirs[i * d..(i + 1) * d];
            let mut acc = 0.0;
            if self.occupancy_active && self.eta != 0.0 {
                let ux = self.half[0] * dir[0];
                let uy = self.half[1] * dir[1];
                let mut hits = 0.0;
                for &r in radii {
                    if self.index.occupied([xw[0] + r * ux, xw[1] + r * uy]) {
                        hits += 1.0;
                    }
                }
                acc += self.eta * hits / hf;
            }
            // Backward: mean_r 1/2 ||b - r u||^2 = 1/2 (b0 - 2 E[r] <b,u> + E[r^2] <u,u>).
            // Forward:  mean_r 1/2 ||f + r Phi u||^2, with Phi u = (u_p + dt u_v, u_v).
            let mut bu = 0.0;
            let mut uu = 0.0;
            let mut fpu = 0.0;
            let mut pupu = 0.0;
            for k in 0..dc {
                let up = self.half[k] * dir[k];
                let uv = self.half[dc + k] * dir[dc + k];
                if let Some((bvec, _)) = &back {
                    bu += a * bvec[k] * up + b * (bvec[k] * uv + bvec[dc + k] * up)
                        + c * bvec[dc + k] * uv;
                    uu += a * up * up + 2.0 * b * up * uv + c * uv * uv;
                }
                if let Some((fvec, _)) = &fwd {
                    let pp = up + self.dt * uv;
                    fpu += a * fvec[k] * pp + b * (fvec[k] * uv + fvec[dc + k] * pp)
                        + c * fvec[dc + k] * uv;
                    pupu += a * pp * pp + 2.0 * b * pp * uv + c * uv * uv;
                }
            }
            if let Some((_, b0)) = &back {
                acc += 0.5 * (b0 - 2.0 * mr * bu + mr2 * uu);
            }
            if let Some((_, f0)) = &fwd {
                acc += 0.5 * (f0 + 2.0 * mr * fpu + mr2 * pupu);
            }
            out[i] = acc;
        }
        Ok(())
    }
}

/// Builds the full waypoint-by-direction cost matrix for one iteration's
/// batch state, shifted and scaled into [0, 1] exactly as the update loop
/// does. `batch` holds normalized states tiling into `horizon + 1` waypoints
/// per plan; `dirs` is applied to every row as given (the planning loop adds
/// per-point random rotation on top of this).
pub fn waypoint_cost_matrix(
    batch: &PointBatch,
    dirs: &DirectionSet,
    radii: &[f64],
    env: &Environment2D,
    cfg: &PlannerConfig,
) -> Result<CostMatrix> {
    cfg.validate()?;
    let d = cfg.gp.state_dim();
    if batch.dim() != d || dirs.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "batch dimension {} and direction dimension {} must equal the state dimension {d}",
            batch.dim(),
            dirs.dim()
        )));
    }
    if batch.len() % (cfg.horizon + 1) != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} points do not tile into plans of {} waypoints",
            batch.len(),
            cfg.horizon + 1
        )));
    }
    if radii.is_empty() || radii.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("probe radii must be finite and nonempty".into()));
    }
    let mut objective = PlannerObjective::new(env, cfg)?;
    objective.sync(batch.as_slice());
    let n = batch.len();
    let m = dirs.len();
    let mut data = vec![0.0; n * m];
    for i in 0..n {
        objective.probe_means(i, batch.row(i), dirs.as_slice(), radii, &mut data[i * m..(i + 1) * m])?;
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &data {
        if !v.is_finite() {
            return Err(Error::NonFinite("waypoint cost".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range < 1e-12 {
        data.fill(0.0);
    } else {
        for v in &mut data {
            *v = (*v - lo) / range;
        }
    }
    CostMatrix::from_flat(n, m, data)
}

/// Runs the full planning loop: sample the trajectory prior, pin endpoints,
/// normalize, then iterate annealed batch updates with the start/goal rows
/// frozen. A diverging transport solve is retried once with the entropic
/// scaling doubled (kept for the rest of the run); a second divergence stops
/// the loop and flags the partial result.
pub fn plan(env: &Environment2D, task: &Task2D, cfg: &PlannerConfig, seed: u64) -> Result<PlanResult> {
    cfg.validate()?;
    if cfg.gp.d_cfg != 2 {
        return Err(Error::InvalidInput(
            "planar tasks require a two-dimensional configuration space".into(),
        ));
    }
    let clock = Instant::now();
    let d = cfg.gp.state_dim();
    let wpp = cfg.horizon + 1;
    let start = [task.start[0], task.start[1], 0.0, 0.0];
    let goal = [task.goal[0], task.goal[1], 0.0, 0.0];

    let mut gen = rng::derive(seed, rng::STREAM_PLANNER);
    let mut traj = gp::sample_prior(&cfg.gp, &start, &goal, cfg.horizon, cfg.n_plans, &mut gen)?;
    for p in 0..cfg.n_plans {
        if cfg.pin_start {
            traj.waypoint_mut(p, 0).copy_from_slice(&start);
        }
        if cfg.pin_goal {
            traj.waypoint_mut(p, cfg.horizon).copy_from_slice(&goal);
        }
    }

    let mut data = traj.as_slice().to_vec();
    normalize_states(&mut data, &cfg.bounds)?;
    let mut points = PointBatch::from_flat(d, data)?;
    let n = points.len();

    let mut freeze = vec![false; n];
    for p in 0..cfg.n_plans {
        if cfg.pin_start {
            freeze[p * wpp] = true;
        }
        if cfg.pin_goal {
            freeze[p * wpp + cfg.horizon] = true;
        }
    }
    let mut step_cfg = cfg.step_config(Some(freeze));
    let mut objective = PlannerObjective::new(env, cfg)?;

    let mut costs_buf = vec![0.0; n];
    objective.point_costs(points.as_slice(), &mut costs_buf)?;
    let initial_mean_cost = costs_buf.iter().sum::<f64>() / n as f64;

    let mut entries = Vec::new();
    let mut diverged = false;
    for _ in 0..cfg.max_iters {
        step::anneal(&mut step_cfg);
        objective.sync(points.as_slice());
        let outcome = match step::sinkhorn_step(&mut points, &step_cfg, &objective, &mut gen) {
            Ok(o) => o,
            Err(Error::NumericalDivergence { .. }) => {
                step_cfg.lambda *= 2.0;
                match step::sinkhorn_step(&mut points, &step_cfg, &objective, &mut gen) {
                    Ok(o) => o,
                    Err(Error::NumericalDivergence { .. }) => {
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        let stalled = outcome.trace.mean_step_norm < cfg.displacement_tol;
        entries.push(outcome.trace);
        if stalled {
            break;
        }
    }

    objective.point_costs(points.as_slice(), &mut costs_buf)?;
    let final_mean_cost = costs_buf.iter().sum::<f64>() / n as f64;
    let trace = StepTrace {
        initial_mean_cost,
        entries,
        final_mean_cost,
    };

    let costs: Vec<f64> = (0..cfg.n_plans)
        .map(|p| costs_buf[p * wpp..(p + 1) * wpp].iter().sum())
        .collect();

    let mut out = points.as_slice().to_vec();
    denormalize_states(&mut out, &cfg.bounds)?;
    let mut batch = TrajectoryBatch::from_flat(cfg.n_plans, cfg.horizon, d, out)?;
    // Restore the pinned endpoints exactly; the normalization round trip is
    // only ulp-exact.
    for p in 0..cfg.n_plans {
        if cfg.pin_start {
            batch.waypoint_mut(p, 0).copy_from_slice(&start);
        }
        if cfg.pin_goal {
            batch.waypoint_mut(p, cfg.horizon).copy_from_slice(&goal);
        }
    }

    let mut free = Vec::with_capacity(cfg.n_plans);
    let mut positions = vec![0.0; wpp * 2];
    for p in 0..cfg.n_plans {
        for t in 0..wpp {
            let w = batch.waypoint(p, t);
            positions[2 * t] = w[0];
            positions[2 * t + 1] = w[1];
        }
        free.push(collision_free(env, &positions, VALIDATION_INTERP, VALIDATION_MARGIN)?);
    }

    let (best, best_free) = select_best(&costs, &free)?;
    Ok(PlanResult {
        batch,
        costs,
        free,
        best,
        best_free,
        diverged,
        time_s: clock.elapsed().as_secs_f64(),
        trace,
    })
}
