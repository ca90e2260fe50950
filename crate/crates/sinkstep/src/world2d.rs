//! Random planar obstacle worlds.
//!
//! An environment is a fixed number of circles and axis-aligned squares with
//! centers drawn uniformly inside the square workspace. Occupancy is a
//! closed-set test against shapes inflated by a margin; collision checking
//! walks waypoints plus evenly spaced interior points of each segment. Tasks
//! are start/goal pairs rejection-sampled from free space with a minimum
//! separation.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Workspace half-extent in meters; the world is [-10, 10]^2.
pub const WORKSPACE_LIMIT: f64 = 10.0;
/// Shapes per generated environment.
pub const SHAPE_COUNT: usize = 15;
/// Radius of generated circles, meters.
pub const CIRCLE_RADIUS: f64 = 2.0;
/// Half the side length of generated squares, meters.
pub const SQUARE_HALF_WIDTH: f64 = 1.0;
/// Minimum start-goal separation for sampled tasks, meters.
pub const MIN_TASK_SEPARATION: f64 = 5.0;
/// Rejection budget before task sampling reports an infeasible environment.
pub const MAX_TASK_ATTEMPTS: usize = 10_000;
/// Margin used when validating final trajectories, meters.
pub const VALIDATION_MARGIN: f64 = 0.05;
/// Interior points checked per segment during validation.
pub const VALIDATION_INTERP: usize = 5;

/// Planar obstacle. Squares are axis-aligned and use the Chebyshev metric:
/// a point is inside when both coordinate offsets are within the half width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape2D {
    Circle { center: [f64; 2], radius: f64 },
    Square { center: [f64; 2], half_width: f64 },
}

impl Shape2D {
    /// Closed-set membership with the shape inflated by `margin`.
    fn contains(&self, p: [f64; 2], margin: f64) -> bool {
        match self {
            Shape2D::Circle { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let r = radius + margin;
                dx * dx + dy * dy <= r * r
            }
            Shape2D::Square { center, half_width } => {
                let r = half_width + margin;
                (p[0] - center[0]).abs() <= r && (p[1] - center[1]).abs() <= r
            }
        }
    }

    /// Axis-aligned bounding box inflated by `margin`.
    fn bbox(&self, margin: f64) -> [[f64; 2]; 2] {
        match self {
            Shape2D::Circle { center, radius } => {
                let r = radius + margin;
                [[center[0] - r, center[0] + r], [center[1] - r, center[1] + r]]
            }
            Shape2D::Square { center, half_width } => {
                let r = half_width + margin;
                [[center[0] - r, center[0] + r], [center[1] - r, center[1] + r]]
            }
        }
    }
}

/// Obstacle layout plus the workspace box it was generated for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment2D {
    pub seed: u64,
    pub limits: [[f64; 2]; 2],
    pub shapes: Vec<Shape2D>,
}

/// Start and goal positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task2D {
    pub seed: u64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
}

/// Generates the standard world: 15 shapes, each a circle or square with
/// probability one half, centers uniform over the workspace. Per shape the
/// draw order is kind, center x, center y.
pub fn gen_environment(seed: u64) -> Environment2D {
    let mut gen = rng::derive(seed, rng::STREAM_ENV);
    let lo = -WORKSPACE_LIMIT;
    let hi = WORKSPACE_LIMIT;
    let shapes = (0..SHAPE_COUNT)
        .map(|_| {
            let is_circle = gen.gen::<f64>() < 0.5;
            let cx = lo + (hi - lo) * gen.gen::<f64>();
            let cy = lo + (hi - lo) * gen.gen::<f64>();
            if is_circle {
                Shape2D::Circle {
                    center: [cx, cy],
                    radius: CIRCLE_RADIUS,
                }
            } else {
                Shape2D::Square {
                    center: [cx, cy],
                    half_width: SQUARE_HALF_WIDTH,
                }
            }
        })
        .collect();
    Environment2D {
        seed,
        limits: [[lo, hi], [lo, hi]],
        shapes,
    }
}

/// True when `p` lies inside any shape inflated by `margin` (closed sets).
pub fn occupancy(env: &Environment2D, p: [f64; 2], margin: f64) -> Result<bool> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "margin must be non-negative and finite, got {margin}"
        )));
    }
    Ok(env.shapes.iter().any(|s| s.contains(p, margin)))
}

/// Rejection-samples a start/goal pair from free space (inflated by
/// `margin`) at least [`MIN_TASK_SEPARATION`] apart. Each attempt draws
/// start x, start y, goal x, goal y.
pub fn sample_task(
    env: &Environment2D,
    margin: f64,
    seed: u64,
    gen: &mut impl Rng,
) -> Result<Task2D> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "margin must be non-negative and finite, got {margin}"
        )));
    }
    let [[x0, x1], [y0, y1]] = env.limits;
    for _ in 0..MAX_TASK_ATTEMPTS {
        let start = [
            x0 + (x1 - x0) * gen.gen::<f64>(),
            y0 + (y1 - y0) * gen.gen::<f64>(),
        ];
        let goal = [
            x0 + (x1 - x0) * gen.gen::<f64>(),
            y0 + (y1 - y0) * gen.gen::<f64>(),
        ];
        let dx = goal[0] - start[0];
        let dy = goal[1] - start[1];
        if (dx * dx + dy * dy).sqrt() < MIN_TASK_SEPARATION {
            continue;
        }
        if occupancy(env, start, margin)? || occupancy(env, goal, margin)? {
            continue;
        }
        return Ok(Task2D { seed, start, goal });
    }
    Err(Error::InfeasibleEnvironment(format!(
        "no valid start/goal pair after {MAX_TASK_ATTEMPTS} attempts"
    )))
}

/// Checks every waypoint and `interp - 1` evenly spaced interior points per
/// segment against occupancy with `margin`. `positions` is a flat x,y
/// sequence. Returns true when every checked point is free.
pub fn collision_free(
    env: &Environment2D,
    positions: &[f64],
    interp: usize,
    margin: f64,
) -> Result<bool> {
    if positions.len() < 2 || positions.len() % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "positions must hold at least one x,y pair, got {} values",
            positions.len()
        )));
    }
    if interp == 0 {
        return Err(Error::InvalidInput("interp must be at least 1".into()));
    }
    let n = positions.len() / 2;
    for t in 0..n {
        if occupancy(env, [positions[2 * t], positions[2 * t + 1]], margin)? {
            return Ok(false);
        }
    }
    for t in 0..n.saturating_sub(1) {
        let a = [positions[2 * t], positions[2 * t + 1]];
        let b = [positions[2 * t + 2], positions[2 * t + 3]];
        for j in 1..interp {
            let f = j as f64 / interp as f64;
            let p = [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
            if occupancy(env, p, margin)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Uniform-grid culling index over the shapes, specialized to one margin.
/// Queries return exactly what [`occupancy`] returns for that margin: cells
/// list every shape whose inflated bounding box touches them, and listed
/// candidates are re-tested with the exact predicate.
pub(crate) struct ShapeIndex<'a> {
    env: &'a Environment2D,
    margin: f64,
    origin: f64,
    inv_cell: f64,
    cells_per_side: usize,
    cells: Vec<Vec<u16>>,
    /// Shapes (inflated) are fully inside the grid, so out-of-grid points
    /// are free. False when the margin is so large the grid cannot cover
    /// everything; queries then fall back to the exact scan.
    covered: bool,
}

impl<'a> ShapeIndex<'a> {
    pub(crate) fn build(env: &'a Environment2D, margin: f64) -> Self {
        const CELL: f64 = 0.5;
        let reach = WORKSPACE_LIMIT + CIRCLE_RADIUS.max(SQUARE_HALF_WIDTH) + margin + CELL;
        let origin = -reach;
        let cells_per_side = ((2.0 * reach) / CELL).ceil() as usize;
        let mut cells = vec![Vec::new(); cells_per_side * cells_per_side];
        let mut covered = true;
        for (idx, shape) in env.shapes.iter().enumerate() {
            let [[bx0, bx1], [by0, by1]] = shape.bbox(margin);
            if bx0 < origin || by0 < origin || bx1 > reach || by1 > reach {
                covered = false;
            }
            let cx0 = (((bx0 - origin) / CELL).floor().max(0.0)) as usize;
            let cy0 = (((by0 - origin) / CELL).floor().max(0.0)) as usize;
            let cx1 = ((((bx1 - origin) / CELL).floor()) as usize).min(cells_per_side - 1);
            let cy1 = ((((by1 - origin) / CELL).floor()) as usize).min(cells_per_side - 1);
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    cells[cy * cells_per_side + cx].push(idx as u16);
                }
            }
        }
        Self {
            env,
            margin,
            origin,
            inv_cell: 1.0 / CELL,
            cells_per_side,
            cells,
            covered,
        }
    }

    #[inline]
    pub(crate) fn occupied(&self, p: [f64; 2]) -> bool {
        if !self.covered {
            return self.env.shapes.iter().any(|s| s.contains(p, self.margin));
        }
        let fx = (p[0] - self.origin) * self.inv_cell;
        let fy = (p[1] - self.origin) * self.inv_cell;
        if fx < 0.0 || fy < 0.0 {
            return false;
        }
        let (cx, cy) = (fx as usize, fy as usize);
        if cx >= self.cells_per_side || cy >= self.cells_per_side {
            return false;
        }
        self.cells[cy * self.cells_per_side + cx]
            .iter()
            .any(|&i| self.env.shapes[i as usize].contains(p, self.margin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    fn circle(cx: f64, cy: f64, r: f64) -> Shape2D {
        Shape2D::Circle {
            center: [cx, cy],
            radius: r,
        }
    }

    fn square(cx: f64, cy: f64, hw: f64) -> Shape2D {
        Shape2D::Square {
            center: [cx, cy],
            half_width: hw,
        }
    }

    fn env_with(shapes: Vec<Shape2D>) -> Environment2D {
        Environment2D {
            seed: 0,
            limits: [[-10.0, 10.0], [-10.0, 10.0]],
            shapes,
        }
    }

    #[test]
    fn generation_is_deterministic_and_sized() {
        let a = gen_environment(42);
        let b = gen_environment(42);
        assert_eq!(a, b);
        assert_eq!(a.shapes.len(), SHAPE_COUNT);
        assert_ne!(a, gen_environment(43));
        for s in &a.shapes {
            match s {
                Shape2D::Circle { center, radius } => {
                    assert_eq!(*radius, CIRCLE_RADIUS);
                    assert!(center.iter().all(|c| c.abs() <= WORKSPACE_LIMIT));
                }
                Shape2D::Square { center, half_width } => {
                    assert_eq!(*half_width, SQUARE_HALF_WIDTH);
                    assert!(center.iter().all(|c| c.abs() <= WORKSPACE_LIMIT));
                }
            }
        }
        // Both kinds appear across a handful of seeds.
        let mut saw = (false, false);
        for seed in 0..5 {
            for s in gen_environment(seed).shapes {
                match s {
                    Shape2D::Circle { .. } => saw.0 = true,
                    Shape2D::Square { .. } => saw.1 = true,
                }
            }
        }
        assert!(saw.0 && saw.1);
    }

    #[test]
    fn occupancy_is_a_closed_set_test() {
        let env = env_with(vec![circle(0.0, 0.0, 2.0)]);
        assert!(occupancy(&env, [2.0, 0.0], 0.0).unwrap());
        assert!(!occupancy(&env, [2.0001, 0.0], 0.0).unwrap());
        assert!(occupancy(&env, [2.05, 0.0], 0.1).unwrap());
        assert!(occupancy(&env, [2.1, 0.0], 0.1).unwrap());
        assert!(!occupancy(&env, [2.1001, 0.0], 0.1).unwrap());
        assert!(occupancy(&env, [0.0, 0.0], 0.0).unwrap());
    }

    #[test]
    fn squares_use_the_chebyshev_box() {
        let env = env_with(vec![square(0.0, 0.0, 1.0)]);
        assert!(occupancy(&env, [1.0, 1.0], 0.0).unwrap());
        assert!(!occupancy(&env, [1.0001, 0.0], 0.0).unwrap());
        assert!(occupancy(&env, [0.9, 0.9], 0.0).unwrap());
        assert!(occupancy(&env, [1.05, -1.05], 0.1).unwrap());
        assert!(!occupancy(&env, [1.11, 0.0], 0.1).unwrap());
    }

    #[test]
    fn negative_margin_is_rejected() {
        let env = env_with(vec![]);
        assert!(occupancy(&env, [0.0, 0.0], -0.1).is_err());
        assert!(occupancy(&env, [0.0, 0.0], f64::NAN).is_err());
    }

    #[test]
    fn task_sampling_respects_separation_and_freedom() {
        let env = gen_environment(7);
        let mut gen = derive(7, crate::rng::STREAM_TASK);
        let task = sample_task(&env, 0.05, 7, &mut gen).unwrap();
        let d = ((task.goal[0] - task.start[0]).powi(2) + (task.goal[1] - task.start[1]).powi(2))
            .sqrt();
        assert!(d >= MIN_TASK_SEPARATION);
        assert!(!occupancy(&env, task.start, 0.05).unwrap());
        assert!(!occupancy(&env, task.goal, 0.05).unwrap());
        let mut gen2 = derive(7, crate::rng::STREAM_TASK);
        assert_eq!(task, sample_task(&env, 0.05, 7, &mut gen2).unwrap());
    }

    #[test]
    fn fully_blocked_world_reports_infeasible() {
        let env = env_with(vec![circle(0.0, 0.0, 100.0)]);
        let mut gen = derive(1, crate::rng::STREAM_TASK);
        match sample_task(&env, 0.0, 1, &mut gen) {
            Err(Error::InfeasibleEnvironment(_)) => {}
            other => panic!("expected infeasible environment, got {other:?}"),
        }
    }

    #[test]
    fn collision_check_catches_segment_interiors() {
        let env = env_with(vec![circle(0.0, 0.0, 2.0)]);
        // Endpoints clear, interior passes through the circle.
        let through = [-5.0, 0.0, 5.0, 0.0];
        assert!(!collision_free(&env, &through, 5, 0.0).unwrap());
        // interp = 1 checks waypoints only, so the crossing goes unseen.
        assert!(collision_free(&env, &through, 1, 0.0).unwrap());
        let around = [-5.0, 0.0, -5.0, 5.0, 5.0, 5.0, 5.0, 0.0];
        assert!(collision_free(&env, &around, 5, 0.0).unwrap());
        let single = [0.0, 0.0];
        assert!(!collision_free(&env, &single, 5, 0.0).unwrap());
        assert!(collision_free(&env, &[9.0, 9.0], 5, 0.0).unwrap());
    }

    #[test]
    fn collision_margin_inflates_obstacles() {
        let env = env_with(vec![circle(0.0, 0.0, 2.0)]);
        let path = [-5.0, 2.04, 5.0, 2.04];
        assert!(collision_free(&env, &path, 8, 0.0).unwrap());
        assert!(!collision_free(&env, &path, 8, 0.1).unwrap());
    }

    #[test]
    fn collision_input_validation() {
        let env = env_with(vec![]);
        assert!(collision_free(&env, &[1.0], 5, 0.0).is_err());
        assert!(collision_free(&env, &[], 5, 0.0).is_err());
        assert!(collision_free(&env, &[0.0, 0.0, 1.0, 1.0], 0, 0.0).is_err());
    }

    #[test]
    fn grid_index_agrees_with_exact_occupancy() {
        let env = gen_environment(99);
        for margin in [0.0, 0.05, 0.5] {
            let index = ShapeIndex::build(&env, margin);
            let mut gen = derive(99, 70);
            for _ in 0..10_000 {
                let p = [
                    -13.0 + 26.0 * gen.gen::<f64>(),
                    -13.0 + 26.0 * gen.gen::<f64>(),
                ];
                assert_eq!(
                    index.occupied(p),
                    occupancy(&env, p, margin).unwrap(),
                    "disagreement at {p:?} margin {margin}"
                );
            }
        }
    }

    #[test]
    fn environment_serialization_matches_schema() {
        let env = env_with(vec![circle(1.0, 2.0, 2.0), square(-3.0, 4.0, 1.0)]);
        let json = serde_json::to_string(&env).unwrap();
        assert!(json.contains("\"seed\":0"));
        assert!(json.contains("\"limits\":[[-10.0,10.0],[-10.0,10.0]]"));
        assert!(json.contains("\"kind\":\"circle\""));
        assert!(json.contains("\"radius\":2.0"));
        assert!(json.contains("\"kind\":\"square\""));
        assert!(json.contains("\"half_width\":1.0"));
        let back: Environment2D = serde_json::from_str(&json).unwrap();
        assert_eq!(back, env);
        let task = Task2D {
            seed: 3,
            start: [0.0, 1.0],
            goal: [5.0, 6.0],
        };
        let tj = serde_json::to_string(&task).unwrap();
        assert!(tj.contains("\"start\":[0.0,1.0]"));
        let tb: Task2D = serde_json::from_str(&tj).unwrap();
        assert_eq!(tb, task);
    }
}
