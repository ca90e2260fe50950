//! Batch descent by transporting mass onto polytope directions.
//!
//! One update of a batch X of n points in R^d works as follows. Every point
//! receives a randomly rotated copy of a shared polytope direction set
//! (m unit vectors). The objective is probed at h evenly spaced offsets along
//! each direction; per-direction mean costs form an n x m cost matrix, which
//! is shifted and scaled into [0, 1]. An entropic transport plan between the
//! uniform point mass and the uniform direction mass is solved, each row of
//! the plan is renormalized onto the simplex, and point t moves by
//!
//!   s_t = alpha * sum_i w_ti * d_ti,
//!
//! a convex combination of unit directions scaled by the step size. The
//! step norm therefore never exceeds alpha: the trust region is explicit.
//! Annealing shrinks alpha and beta by (1 - eps) before each iteration.

use crate::error::{Error, Result};
use crate::ot::{solve_entropic_ot, CostMatrix, Histogram, SinkhornConfig};
use crate::polytope::{probe_radii, vertices, PolytopeKind};
use rand::Rng;
use std::f64::consts::TAU;

/// Row-major batch of n points in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBatch {
    dim: usize,
    data: Vec<f64>,
}

impl PointBatch {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "point buffer of {} entries does not tile dimension {dim}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "point entry {idx} is {}",
                data[idx]
            )));
        }
        Ok(Self { dim, data })
    }

    /// n points drawn coordinate-wise uniform in [lo, hi].
    pub fn uniform(n: usize, dim: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::DimensionMismatch("empty batch".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInput(format!("bad range [{lo}, {hi}]")));
        }
        let data = (0..n * dim)
            .map(|_| lo + (hi - lo) * rng.gen::<f64>())
            .collect();
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Batch objective. Points are identified by their index in the batch so
/// implementations may couple a point's cost to the rest of the batch
/// (evaluated synchronously against the pre-step state).
pub trait BatchObjective {
    fn dim(&self) -> usize;

    /// Cost of a flat row-major batch of query points. All outputs must be
    /// finite.
    fn evaluate_batch(&self, queries: &[f64], out: &mut [f64]) -> Result<()>;

    /// Cost of each current point; feeds trace statistics. Defaults to
    /// index-free evaluation.
    fn point_costs(&self, points: &[f64], out: &mut [f64]) -> Result<()> {
        self.evaluate_batch(points, out)
    }

    /// Mean probe cost per direction for batch point `index` at `x`:
    /// out[i] = (1/h) * sum_j cost(x + radii[j] * dirs[i]), dirs row-major
    /// m x d. The default materializes the probes and defers to
    /// [`Self::evaluate_batch`]; structured objectives can fuse this.
    fn probe_means(
        &self,
        index: usize,
        x: &[f64],
        dirs: &[f64],
        radii: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let _ = index;
        let d = self.dim();
        let m = dirs.len() / d;
        let h = radii.len();
        let mut queries = vec![0.0; m * h * d];
        for i in 0..m {
            let dir = &dirs[i * d..(i + 1) * d];
            for (j, &r) in radii.iter().enumerate() {
                let q = &mut queries[(i * h + j) * d..(i * h + j + 1) * d];
                for k in 0..d {
                    q[k] = x[k] + r * dir[k];
                }
            }
        }
        let mut costs = vec![0.0; m * h];
        self.evaluate_batch(&queries, &mut costs)?;
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..h {
                acc += costs[i * h + j];
            }
            out[i] = acc / h as f64;
        }
        Ok(())
    }

    /// Analytic gradients at the given points, written row-major into `out`.
    /// Returns false when unsupported; gradients feed diagnostics only.
    fn gradients(&self, points: &[f64], out: &mut [f64]) -> Result<bool> {
        let _ = (points, out);
        Ok(false)
    }
}

/// Update-rule knobs. `alpha` is the trust-region radius, `beta` the probe
/// radius, `h` the probe count per direction, `lambda` the transport
/// regularization, `eps` the annealing rate applied when `annealing` is on.
/// `rotate` draws one random rotation per point per iteration (even
/// dimensions only). `ot_max_iters` caps the inner transport solve; an
/// unconverged plan is still usable because rows are renormalized.
#[derive(Debug, Clone)]
pub struct StepConfig {
    pub kind: PolytopeKind,
    pub alpha: f64,
    pub beta: f64,
    pub h: usize,
    pub lambda: f64,
    pub eps: f64,
    pub annealing: bool,
    pub rotate: bool,
    pub ot_max_iters: usize,
    pub ot_tol: f64,
    /// Points flagged true keep their position; they still consume rotation
    /// draws and occupy cost rows so batch shapes and rng streams are stable.
    pub freeze: Option<Vec<bool>>,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            kind: PolytopeKind::Orthoplex,
            alpha: 0.1,
            beta: 0.1,
            h: 5,
            lambda: 0.01,
            eps: 0.05,
            annealing: true,
            rotate: true,
            ot_max_iters: 100,
            ot_tol: 1e-5,
            freeze: None,
        }
    }
}

impl StepConfig {
    pub(crate) fn validate(&self, n: usize, d: usize) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.h == 0 {
            return Err(Error::InvalidInput("h must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::InvalidInput(format!(
                "eps must lie in [0, 1), got {}",
                self.eps
            )));
        }
        if self.rotate && d % 2 != 0 {
            return Err(Error::UnsupportedDimension(format!(
                "per-point rotations need an even dimension, got {d}"
            )));
        }
        if let Some(f) = &self.freeze {
            if f.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "freeze mask has {} entries for {n} points",
                    f.len()
                )));
            }
        }
        Ok(())
    }
}

/// Shrinks the trust region and probe radius by (1 - eps).
pub fn anneal(cfg: &mut StepConfig) {
    cfg.alpha *= 1.0 - cfg.eps;
    cfg.beta *= 1.0 - cfg.eps;
}

/// Statistics of one update.
#[derive(Debug, Clone)]
pub struct StepTraceEntry {
    /// Mean of point costs before the update.
    pub mean_cost: f64,
    pub max_step_norm: f64,
    pub mean_step_norm: f64,
    pub ot_iterations: usize,
    pub ot_converged: bool,
    /// Trust region in effect for this update.
    pub alpha: f64,
    pub beta: f64,
}

/// One update's movement, row-major n x d, zero rows for frozen points.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub trace: StepTraceEntry,
    pub steps: Vec<f64>,
}

/// Per-point planar rotation angles, one per coordinate pair. Drawn for all
/// points, frozen included, in batch order.
fn draw_angles(n: usize, d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n * d / 2).map(|_| rng.gen::<f64>() * TAU).collect()
}

/// Applies the block-planar rotation given by `angles` (d/2 pairs, already
/// expanded to cos/sin) to every base row.
fn rotate_rows(base: &[f64], d: usize, cos_sin: &[(f64, f64)], out: &mut [f64]) {
    let m = base.len() / d;
    for i in 0..m {
        let src = &base[i * d..(i + 1) * d];
        let dst = &mut out[i * d..(i + 1) * d];
        for (l, &(c, s)) in cos_sin.iter().enumerate() {
            let a = src[2 * l];
            let b = src[2 * l + 1];
            dst[2 * l] = c * a - s * b;
            dst[2 * l + 1] = s * a + c * b;
        }
    }
}

/// Performs one batch update in place. Returns the applied movement and its
/// trace entry; on error (including transport divergence) the batch is left
/// untouched.
pub fn sinkhorn_step(
    batch: &mut PointBatch,
    cfg: &StepConfig,
    objective: &impl BatchObjective,
    rng: &mut impl Rng,
) -> Result<StepOutcome> {
    let (n, d) = (batch.len(), batch.dim());
    if objective.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "objective dimension {} does not match batch dimension {d}",
            objective.dim()
        )));
    }
    cfg.validate(n, d)?;
    if d < 2 {
        return Err(Error::UnsupportedDimension(
            "direction sets need dimension >= 2".into(),
        ));
    }

    let base = vertices(cfg.kind, d)?;
    let m = base.len();
    let radii = probe_radii(cfg.h, cfg.beta);

    let mut point_costs = vec![0.0; n];
    objective.point_costs(batch.as_slice(), &mut point_costs)?;
    let mean_cost = point_costs.iter().sum::<f64>() / n as f64;

    // Rotations are drawn up front and re-expanded where needed, so only the
    // compact angle buffer persists.
    let angles = if cfg.rotate {
        draw_angles(n, d, rng)
    } else {
        Vec::new()
    };
    let pairs = d / 2;
    let mut cos_sin = vec![(1.0, 0.0); pairs.max(1)];
    let mut dirs = vec![0.0; m * d];
    if !cfg.rotate {
        dirs.copy_from_slice(base.as_slice());
    }

    let mut cost = vec![0.0; n * m];
    for t in 0..n {
        if cfg.rotate {
            for l in 0..pairs {
                let th = angles[t * pairs + l];
                cos_sin[l] = (th.cos(), th.sin());
            }
            rotate_rows(base.as_slice(), d, &cos_sin[..pairs], &mut dirs);
        }
        objective.probe_means(t, batch.row(t), &dirs, &radii, &mut cost[t * m..(t + 1) * m])?;
    }
    if let Some(idx) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!(
            "probe cost for point {} direction {} is {}",
            idx / m,
            idx % m,
            cost[idx]
        )));
    }

    // Shift to zero minimum and scale into [0, 1]. A flat objective offers
    // no transport signal; the update degenerates to zero movement.
    let lo = cost.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let range = cost.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - lo;
    let frozen = |t: usize| cfg.freeze.as_ref().map_or(false, |f| f[t]);
    if range < 1e-12 {
        return Ok(StepOutcome {
            trace: StepTraceEntry {
                mean_cost,
                max_step_norm: 0.0,
                mean_step_norm: 0.0,
                ot_iterations: 0,
                ot_converged: true,
                alpha: cfg.alpha,
                beta: cfg.beta,
            },
            steps: vec![0.0; n * d],
        });
    }
    let inv_range = 1.0 / range;
    for c in cost.iter_mut() {
        *c = (*c - lo) * inv_range;
    }

    let cost = CostMatrix::from_flat(n, m, cost)?;
    let src = Histogram::uniform(n)?;
    let dst = Histogram::uniform(m)?;
    let mut ot_cfg = SinkhornConfig::for_unit_range_costs(cfg.lambda);
    ot_cfg.max_iters = cfg.ot_max_iters;
    ot_cfg.tol = cfg.ot_tol;
    let plan = solve_entropic_ot(&cost, &src, &dst, &ot_cfg)?;

    let mut steps = vec![0.0; n * d];
    let mut max_step = 0.0f64;
    let mut sum_step = 0.0f64;
    for t in 0..n {
        if frozen(t) {
            continue;
        }
        let row = plan.row(t);
        let rowsum: f64 = row.iter().sum();
        if rowsum <= f64::MIN_POSITIVE {
            continue;
        }
        if cfg.rotate {
            for l in 0..pairs {
                let th = angles[t * pairs + l];
                cos_sin[l] = (th.cos(), th.sin());
            }
            rotate_rows(base.as_slice(), d, &cos_sin[..pairs], &mut dirs);
        }
        let scale = cfg.alpha / rowsum;
        let s = &mut steps[t * d..(t + 1) * d];
        for i in 0..m {
            let w = row[i] * scale;
            let dir = &dirs[i * d..(i + 1) * d];
            for k in 0..d {
                s[k] += w * dir[k];
            }
        }
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        max_step = max_step.max(norm);
        sum_step += norm;
    }

    let data = batch.as_mut_slice();
    for (x, s) in data.iter_mut().zip(&steps) {
        *x += s;
    }

    Ok(StepOutcome {
        trace: StepTraceEntry {
            mean_cost,
            max_step_norm: max_step,
            mean_step_norm: sum_step / n as f64,
            ot_iterations: plan.iterations_used,
            ot_converged: plan.converged,
            alpha: cfg.alpha,
            beta: cfg.beta,
        },
        steps,
    })
}

/// Stop rule for [`optimize`].
#[derive(Debug, Clone)]
pub struct Termination {
    pub max_iters: usize,
    /// Stop when the mean step norm falls below this value.
    pub displacement_tol: f64,
}

impl Default for Termination {
    fn default() -> Self {
        Self {
            max_iters: 100,
            displacement_tol: 0.0,
        }
    }
}

/// Full run record.
#[derive(Debug, Clone)]
pub struct StepTrace {
    /// Mean point cost before the first update.
    pub initial_mean_cost: f64,
    pub entries: Vec<StepTraceEntry>,
    /// Mean point cost after the last update.
    pub final_mean_cost: f64,
}

/// Iterates [`sinkhorn_step`] (with annealing when configured) until the
/// iteration budget or the displacement tolerance is hit. The config is taken
/// by value because annealing evolves it.
pub fn optimize(
    batch: &mut PointBatch,
    mut cfg: StepConfig,
    objective: &impl BatchObjective,
    term: &Termination,
    rng: &mut impl Rng,
) -> Result<StepTrace> {
    let n = batch.len();
    let mut costs = vec![0.0; n];
    objective.point_costs(batch.as_slice(), &mut costs)?;
    let initial_mean_cost = costs.iter().sum::<f64>() / n as f64;
    let mut entries = Vec::with_capacity(term.max_iters);
    for _ in 0..term.max_iters {
        if cfg.annealing {
            anneal(&mut cfg);
        }
        let outcome = sinkhorn_step(batch, &cfg, objective, rng)?;
        let stop = outcome.trace.mean_step_norm < term.displacement_tol;
        entries.push(outcome.trace);
        if stop {
            break;
        }
    }
    objective.point_costs(batch.as_slice(), &mut costs)?;
    let final_mean_cost = costs.iter().sum::<f64>() / n as f64;
    Ok(StepTrace {
        initial_mean_cost,
        entries,
        final_mean_cost,
    })
}

/// Cosine similarity between each step and the negated gradient; None where
/// either vector vanishes. Inputs are row-major n x d.
pub fn cosine_similarity_diagnostic(steps: &[f64], grads: &[f64], dim: usize) -> Vec<Option<f64>> {
    assert_eq!(steps.len(), grads.len());
    assert!(dim > 0 && steps.len() % dim == 0);
    let n = steps.len() / dim;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let s = &steps[t * dim..(t + 1) * dim];
        let g = &grads[t * dim..(t + 1) * dim];
        let mut dot = 0.0;
        let mut ns = 0.0;
        let mut ng = 0.0;
        for k in 0..dim {
            dot += s[k] * -g[k];
            ns += s[k] * s[k];
            ng += g[k] * g[k];
        }
        if ns <= 0.0 || ng <= 0.0 {
            out.push(None);
        } else {
            out.push(Some(dot / (ns.sqrt() * ng.sqrt())));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    /// f(x) = ||x||^2 with exact gradients and fused probe means.
    struct SquaredNorm {
        dim: usize,
    }

    impl BatchObjective for SquaredNorm {
        fn dim(&self) -> usize {
            self.dim
        }

        fn evaluate_batch(&self, queries: &[f64], out: &mut [f64]) -> Result<()> {
            for (q, o) in queries.chunks_exact(self.dim).zip(out.iter_mut()) {
                *o = q.iter().map(|x| x * x).sum();
            }
            Ok(())
        }

        fn gradients(&self, points: &[f64], out: &mut [f64]) -> Result<bool> {
            for (x, g) in points.iter().zip(out.iter_mut()) {
                *g = 2.0 * x;
            }
            Ok(true)
        }
    }

    struct Constant {
        dim: usize,
    }

    impl BatchObjective for Constant {
        fn dim(&self) -> usize {
            self.dim
        }

        fn evaluate_batch(&self, queries: &[f64], out: &mut [f64]) -> Result<()> {
            let _ = queries;
            out.fill(3.25);
            Ok(())
        }
    }

    fn no_anneal(cfg: StepConfig) -> StepConfig {
        StepConfig {
            annealing: false,
            ..cfg
        }
    }

    #[test]
    fn constant_objective_produces_zero_step() {
        let mut batch = PointBatch::from_flat(2, vec![0.3, -0.7, 1.0, 0.2]).unwrap();
        let before = batch.clone();
        let cfg = no_anneal(StepConfig::default());
        let mut rng = derive(1, 50);
        let out = sinkhorn_step(&mut batch, &cfg, &Constant { dim: 2 }, &mut rng).unwrap();
        assert_eq!(batch, before);
        assert_eq!(out.trace.ot_iterations, 0);
        assert_eq!(out.trace.max_step_norm, 0.0);
        assert!((out.trace.mean_cost - 3.25).abs() < 1e-15);
    }

    #[test]
    fn single_point_update_is_pinned_by_matched_marginals() {
        // With one point the row marginal forces the coupling row to equal
        // the uniform column marginal no matter the costs, so the step is the
        // polytope centroid: exactly zero. Descent pressure for a batch comes
        // from redistributing direction mass across points, not from any
        // single row alone.
        let mut batch = PointBatch::from_flat(2, vec![1.0, 0.0]).unwrap();
        let cfg = no_anneal(StepConfig {
            kind: PolytopeKind::Orthoplex,
            alpha: 0.1,
            beta: 0.1,
            h: 1,
            lambda: 0.001,
            rotate: false,
            ..Default::default()
        });
        let mut rng = derive(2, 50);
        let out = sinkhorn_step(&mut batch, &cfg, &SquaredNorm { dim: 2 }, &mut rng).unwrap();
        assert!(
            out.trace.max_step_norm < 1e-9,
            "step norm {}",
            out.trace.max_step_norm
        );
        assert!((batch.row(0)[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_pair_contracts_toward_origin() {
        // Two points at (1,0) and (-1,0), squared-norm objective, orthoplex
        // without rotation, single probe at radius 0.1. The normalized cost
        // matrix is [[1, 0, .5, .5], [0, 1, .5, .5]]; at small lambda each
        // row puts 1/4 mass on its inward axis and splits 1/4 across the two
        // lateral directions, so the renormalized weights are (1/2, 1/4, 1/4)
        // and the step is alpha/2 inward: new points at (±0.95, 0).
        let mut batch = PointBatch::from_flat(2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let cfg = no_anneal(StepConfig {
            kind: PolytopeKind::Orthoplex,
            alpha: 0.1,
            beta: 0.1,
            h: 1,
            lambda: 0.01,
            rotate: false,
            ot_max_iters: 10_000,
            ..Default::default()
        });
        let mut rng = derive(3, 50);
        sinkhorn_step(&mut batch, &cfg, &SquaredNorm { dim: 2 }, &mut rng).unwrap();
        assert!((batch.row(0)[0] - 0.95).abs() < 2e-3, "{:?}", batch.row(0));
        assert!(batch.row(0)[1].abs() < 2e-3);
        assert!((batch.row(1)[0] + 0.95).abs() < 2e-3, "{:?}", batch.row(1));
        assert!(batch.row(1)[1].abs() < 2e-3);
    }

    #[test]
    fn ninety_degree_symmetry_of_the_direction_set_rotates_the_step() {
        // A quarter turn maps the orthoplex onto itself, so running the
        // update on quarter-turned points yields the quarter-turned steps.
        let cfg = no_anneal(StepConfig {
            kind: PolytopeKind::Orthoplex,
            alpha: 0.1,
            beta: 0.1,
            h: 1,
            lambda: 0.01,
            rotate: false,
            ot_max_iters: 10_000,
            ..Default::default()
        });
        let mut a = PointBatch::from_flat(2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let mut b = PointBatch::from_flat(2, vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let mut rng = derive(4, 50);
        let sa = sinkhorn_step(&mut a, &cfg, &SquaredNorm { dim: 2 }, &mut rng).unwrap();
        let sb = sinkhorn_step(&mut b, &cfg, &SquaredNorm { dim: 2 }, &mut rng).unwrap();
        for t in 0..2 {
            let (sx, sy) = (sa.steps[2 * t], sa.steps[2 * t + 1]);
            let (rx, ry) = (sb.steps[2 * t], sb.steps[2 * t + 1]);
            // Quarter turn: (x, y) -> (-y, x).
            assert!((rx + sy).abs() < 1e-6 && (ry - sx).abs() < 1e-6);
        }
    }

    #[test]
    fn step_norms_respect_the_trust_region() {
        let mut rng = derive(5, 50);
        let mut batch = PointBatch::uniform(40, 4, -1.0, 1.0, &mut rng).unwrap();
        let cfg = no_anneal(StepConfig {
            alpha: 0.07,
            kind: PolytopeKind::Cube,
            ..Default::default()
        });
        for _ in 0..5 {
            let out = sinkhorn_step(&mut batch, &cfg, &SquaredNorm { dim: 4 }, &mut rng).unwrap();
            assert!(out.trace.max_step_norm <= 0.07 + 1e-12);
            for s in out.steps.chunks_exact(4) {
                let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm <= 0.07 + 1e-12, "step norm {norm}");
            }
        }
    }

    #[test]
    fn frozen_points_hold_still_without_disturbing_the_rest() {
        let data = vec![0.9, 0.1, -0.4, 0.6, 0.2, -0.8, -0.1, -0.2];
        let mut plain = PointBatch::from_flat(2, data.clone()).unwrap();
        let mut masked = PointBatch::from_flat(2, data).unwrap();
        let cfg = no_anneal(StepConfig::default());
        let cfg_mask = StepConfig {
            freeze: Some(vec![false, true, false, false]),
            ..cfg.clone()
        };
        let mut rng_a = derive(6, 50);
        let mut rng_b = derive(6, 50);
        let oa = sinkhorn_step(&mut plain, &cfg, &SquaredNorm { dim: 2 }, &mut rng_a).unwrap();
        let ob = sinkhorn_step(&mut masked, &cfg_mask, &SquaredNorm { dim: 2 }, &mut rng_b).unwrap();
        // Frozen point did not move.
        assert_eq!(masked.row(1), &[-0.4, 0.6]);
        assert_eq!(&ob.steps[2..4], &[0.0, 0.0]);
        // Identical rng consumption: unfrozen points stepped identically.
        for t in [0usize, 2, 3] {
            assert_eq!(&oa.steps[2 * t..2 * t + 2], &ob.steps[2 * t..2 * t + 2]);
        }
    }

    #[test]
    fn batch_centroid_is_preserved_when_the_plan_converges() {
        // Converged plans have near-uniform column mass; with a shared
        // (unrotated) direction set whose centroid is zero the steps sum to
        // zero up to the marginal tolerance.
        let mut rng = derive(7, 50);
        let mut batch = PointBatch::uniform(50, 2, -1.0, 1.0, &mut rng).unwrap();
        let before: Vec<f64> = (0..2)
            .map(|k| (0..50).map(|t| batch.row(t)[k]).sum::<f64>())
            .collect();
        let cfg = no_anneal(StepConfig {
            rotate: false,
            ot_tol: 1e-9,
            ot_max_iters: 50_000,
            ..Default::default()
        });
        let out = sinkhorn_step(&mut batch, &cfg, &SquaredNorm { dim: 2 }, &mut rng).unwrap();
        assert!(out.trace.ot_converged);
        for k in 0..2 {
            let after: f64 = (0..50).map(|t| batch.row(t)[k]).sum();
            assert!(
                (after - before[k]).abs() < 1e-5,
                "centroid drifted by {}",
                after - before[k]
            );
        }
    }

    #[test]
    fn quadratic_bowl_collapses_under_annealed_descent() {
        let mut rng = derive(8, 50);
        let mut batch = PointBatch::uniform(100, 2, -1.0, 1.0, &mut rng).unwrap();
        let cfg = StepConfig {
            kind: PolytopeKind::Orthoplex,
            alpha: 0.1,
            beta: 0.1,
            eps: 0.05,
            annealing: true,
            ..Default::default()
        };
        let term = Termination {
            max_iters: 100,
            displacement_tol: 0.0,
        };
        let trace = optimize(&mut batch, cfg, &SquaredNorm { dim: 2 }, &term, &mut rng).unwrap();
        assert_eq!(trace.entries.len(), 100);
        assert!(
            trace.final_mean_cost < 0.01 * trace.initial_mean_cost,
            "final {} vs initial {}",
            trace.final_mean_cost,
            trace.initial_mean_cost
        );
        // Best-so-far across the run must drop at least 90%.
        let best = trace
            .entries
            .iter()
            .map(|e| e.mean_cost)
            .fold(f64::INFINITY, f64::min)
            .min(trace.final_mean_cost);
        assert!(best <= 0.1 * trace.initial_mean_cost);
    }

    #[test]
    fn annealing_follows_the_closed_form() {
        let mut cfg = StepConfig {
            alpha: 0.38,
            beta: 0.5,
            eps: 0.032,
            ..Default::default()
        };
        for _ in 0..7 {
            anneal(&mut cfg);
        }
        let decay = (1.0f64 - 0.032).powi(7);
        assert!((cfg.alpha - 0.38 * decay).abs() < 1e-15);
        assert!((cfg.beta - 0.5 * decay).abs() < 1e-15);
    }

    #[test]
    fn zero_iteration_budget_is_identity() {
        let mut rng = derive(9, 50);
        let mut batch = PointBatch::uniform(10, 2, -1.0, 1.0, &mut rng).unwrap();
        let before = batch.clone();
        let term = Termination {
            max_iters: 0,
            displacement_tol: 0.0,
        };
        let trace = optimize(
            &mut batch,
            StepConfig::default(),
            &SquaredNorm { dim: 2 },
            &term,
            &mut rng,
        )
        .unwrap();
        assert_eq!(batch, before);
        assert!(trace.entries.is_empty());
        assert_eq!(trace.initial_mean_cost, trace.final_mean_cost);
    }

    #[test]
    fn displacement_tolerance_stops_early() {
        let mut rng = derive(10, 50);
        let mut batch = PointBatch::uniform(10, 2, -1.0, 1.0, &mut rng).unwrap();
        let term = Termination {
            max_iters: 50,
            displacement_tol: 10.0,
        };
        let trace = optimize(
            &mut batch,
            no_anneal(StepConfig::default()),
            &SquaredNorm { dim: 2 },
            &term,
            &mut rng,
        )
        .unwrap();
        assert_eq!(trace.entries.len(), 1);
    }

    #[test]
    fn odd_dimension_needs_rotation_disabled() {
        let mut rng = derive(11, 50);
        let mut batch = PointBatch::uniform(5, 3, -1.0, 1.0, &mut rng).unwrap();
        let cfg = StepConfig::default();
        assert!(sinkhorn_step(&mut batch, &cfg, &SquaredNorm { dim: 3 }, &mut rng).is_err());
        let cfg = no_anneal(StepConfig {
            rotate: false,
            ..Default::default()
        });
        sinkhorn_step(&mut batch, &cfg, &SquaredNorm { dim: 3 }, &mut rng).unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut rng = derive(12, 50);
        let mut batch = PointBatch::uniform(5, 2, -1.0, 1.0, &mut rng).unwrap();
        let obj = SquaredNorm { dim: 2 };
        for cfg in [
            StepConfig {
                alpha: 0.0,
                ..Default::default()
            },
            StepConfig {
                h: 0,
                ..Default::default()
            },
            StepConfig {
                lambda: -1.0,
                ..Default::default()
            },
            StepConfig {
                eps: 1.0,
                ..Default::default()
            },
            StepConfig {
                freeze: Some(vec![false; 3]),
                ..Default::default()
            },
        ] {
            assert!(sinkhorn_step(&mut batch, &cfg, &obj, &mut rng).is_err());
        }
        let mismatched = SquaredNorm { dim: 3 };
        assert!(sinkhorn_step(&mut batch, &StepConfig::default(), &mismatched, &mut rng).is_err());
    }

    #[test]
    fn identical_seeds_reproduce_trajectories() {
        let run = |seed: u64| {
            let mut rng = derive(seed, 50);
            let mut batch = PointBatch::uniform(20, 4, -1.0, 1.0, &mut rng).unwrap();
            let term = Termination {
                max_iters: 3,
                displacement_tol: 0.0,
            };
            optimize(
                &mut batch,
                StepConfig::default(),
                &SquaredNorm { dim: 4 },
                &term,
                &mut rng,
            )
            .unwrap();
            batch
        };
        assert_eq!(run(13), run(13));
    }

    #[test]
    fn first_step_on_a_bowl_aligns_with_the_negated_gradient() {
        let mut rng = derive(14, 50);
        let mut batch = PointBatch::uniform(200, 4, -1.0, 1.0, &mut rng).unwrap();
        let obj = SquaredNorm { dim: 4 };
        let mut grads = vec![0.0; 200 * 4];
        assert!(obj.gradients(batch.as_slice(), &mut grads).unwrap());
        let out = sinkhorn_step(
            &mut batch,
            &no_anneal(StepConfig::default()),
            &obj,
            &mut rng,
        )
        .unwrap();
        let cs = cosine_similarity_diagnostic(&out.steps, &grads, 4);
        let vals: Vec<f64> = cs.into_iter().flatten().collect();
        assert!(!vals.is_empty());
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(mean > 0.5, "mean cosine similarity {mean}");
    }

    #[test]
    fn cosine_similarity_handles_degenerate_rows() {
        let steps = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let grads = vec![-1.0, 0.0, 5.0, 0.0, 1.0, 0.0];
        let cs = cosine_similarity_diagnostic(&steps, &grads, 2);
        assert!((cs[0].unwrap() - 1.0).abs() < 1e-15);
        assert!(cs[1].is_none());
        assert!((cs[2].unwrap() + 1.0).abs() < 1e-15);
    }
}
