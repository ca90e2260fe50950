//! Batch trajectory optimization via entropic optimal transport.
//!
//! The core update rule moves a batch of points by transporting uniform mass
//! onto the vertex directions of a regular polytope: costs of probing each
//! direction are collected into a matrix, an entropic transport plan is solved
//! for with a log-stabilized Sinkhorn iteration, and each point steps along
//! the barycentric combination of its matched directions. The step length is
//! bounded by an explicit trust region and annealed over iterations.
//!
//! Modules:
//! - [`ot`]: entropic optimal transport solver.
//! - [`polytope`]: regular polytope direction sets, rotations, probe offsets.
//! - [`step`]: the batch update rule and a generic zero-order optimizer.
//! - [`gp`]: constant-velocity Gauss-Markov trajectory prior.
//! - [`world2d`]: random planar obstacle worlds and collision checks.
//! - [`planner`]: batch trajectory planner over 2D position-velocity states.
//! - [`harness`]: benchmark metrics, seeded sweeps, test objectives.
//! - [`svgplot`]: deterministic SVG rendering of worlds, plans and traces.

pub mod error;
pub mod gp;
pub mod harness;
pub mod ot;
pub mod planner;
pub mod polytope;
pub mod rng;
pub mod step;
pub mod svgplot;
pub mod world2d;

pub use error::{Error, Result};
