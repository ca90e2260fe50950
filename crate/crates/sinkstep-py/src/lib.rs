//! Python bindings for the sinkstep library.
//!
//! The module favors plain Python data: vectors come in and out as lists,
//! structured records as dicts matching the crate's JSON schemas, and
//! optional `config` dicts are deserialized with the same defaulting rules
//! as the CLI config files.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};
use serde_json::Value;
use sinkstep::gp::{sample_prior as gp_sample_prior, GpSpec};
use sinkstep::harness::{run_optfn, OptfnConfig};
use sinkstep::ot::{ot_objective, solve_entropic_ot, CostMatrix, Histogram, SinkhornConfig};
use sinkstep::planner::{plan as plan_rs, PlannerConfig};
use sinkstep::polytope::{
    empirical_cosine_measure as empirical_mu, reference_cosine_measure as reference_mu, vertices,
    PolytopeKind,
};
use sinkstep::rng::{derive, STREAM_ESTIMATOR, STREAM_TASK};
use sinkstep::world2d::{
    collision_free as collision_free_rs, gen_environment, occupancy as occupancy_rs,
    sample_task as sample_task_rs, Environment2D, Task2D,
};

fn err(e: sinkstep::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(kind: &str) -> PyResult<PolytopeKind> {
    match kind.to_ascii_lowercase().as_str() {
        "simplex" => Ok(PolytopeKind::Simplex),
        "orthoplex" | "cross" | "cross-polytope" => Ok(PolytopeKind::Orthoplex),
        "cube" => Ok(PolytopeKind::Cube),
        other => Err(PyValueError::new_err(format!(
            "unknown polytope kind {other:?}; expected simplex, orthoplex or cube"
        ))),
    }
}

/// Recursively converts a JSON value into Python objects.
fn json_to_py(py: Python<'_>, v: &Value) -> PyResult<PyObject> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any().unbind(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any().unbind()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any().unbind()
            } else {
                n.as_f64()
                    .unwrap_or(f64::NAN)
                    .into_pyobject(py)?
                    .into_any()
                    .unbind()
            }
        }
        Value::String(s) => s.as_str().into_pyobject(py)?.into_any().unbind(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

/// Serializes an arbitrary Python object (dicts, lists, numbers) to JSON via
/// the stdlib, so structured arguments round-trip through serde.
fn py_to_json_string(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    let json = obj.py().import("json")?;
    json.call_method1("dumps", (obj,))?.extract()
}

fn parse_env(obj: &Bound<'_, PyAny>) -> PyResult<Environment2D> {
    let s = py_to_json_string(obj)?;
    serde_json::from_str(&s)
        .map_err(|e| PyValueError::new_err(format!("invalid environment: {e}")))
}

fn parse_config<T: serde::de::DeserializeOwned + Default>(
    obj: Option<&Bound<'_, PyAny>>,
) -> PyResult<T> {
    match obj {
        None => Ok(T::default()),
        Some(o) => {
            let s = py_to_json_string(o)?;
            serde_json::from_str(&s)
                .map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))
        }
    }
}

/// Vertex coordinates of the requested direction set, one list per vertex.
#[pyfunction]
fn polytope_vertices(kind: &str, dim: usize) -> PyResult<Vec<Vec<f64>>> {
    let set = vertices(parse_kind(kind)?, dim).map_err(err)?;
    Ok((0..set.len()).map(|i| set.row(i).to_vec()).collect())
}

/// Closed-form worst-case alignment guarantee of the direction set.
#[pyfunction]
fn reference_cosine_measure(kind: &str, dim: usize) -> PyResult<f64> {
    reference_mu(parse_kind(kind)?, dim).map_err(err)
}

/// Monte-Carlo estimate of the worst-case alignment over random directions.
#[pyfunction]
#[pyo3(signature = (kind, dim, trials = 100_000, seed = 0))]
fn empirical_cosine_measure(kind: &str, dim: usize, trials: usize, seed: u64) -> PyResult<f64> {
    let set = vertices(parse_kind(kind)?, dim).map_err(err)?;
    empirical_mu(&set, trials, seed).map_err(err)
}

/// Entropic optimal transport between two histograms. `cost` is a list of
/// rows; omitted marginals default to uniform. Returns the coupling plus
/// solver diagnostics.
#[pyfunction]
#[pyo3(signature = (cost, source = None, target = None, lam = 0.01, max_iters = 10_000, tol = 1e-5))]
fn solve_ot(
    py: Python<'_>,
    cost: Vec<Vec<f64>>,
    source: Option<Vec<f64>>,
    target: Option<Vec<f64>>,
    lam: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<Py<PyDict>> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    if cost.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("cost rows must have equal length"));
    }
    let flat: Vec<f64> = cost.into_iter().flatten().collect();
    let matrix = CostMatrix::from_flat(n, m, flat).map_err(err)?;
    let src = match source {
        Some(v) => Histogram::new(v).map_err(err)?,
        None => Histogram::uniform(n).map_err(err)?,
    };
    let dst = match target {
        Some(v) => Histogram::new(v).map_err(err)?,
        None => Histogram::uniform(m).map_err(err)?,
    };
    let mut cfg = SinkhornConfig::for_unit_range_costs(lam);
    cfg.max_iters = max_iters;
    cfg.tol = tol;
    let plan = py
        .allow_threads(|| solve_entropic_ot(&matrix, &src, &dst, &cfg))
        .map_err(err)?;
    let coupling: Vec<Vec<f64>> = (0..n).map(|t| plan.row(t).to_vec()).collect();
    let out = PyDict::new(py);
    out.set_item("coupling", coupling)?;
    out.set_item("iterations", plan.iterations_used)?;
    out.set_item("converged", plan.converged)?;
    out.set_item("residual", plan.residual)?;
    out.set_item("objective", ot_objective(&plan, &matrix).map_err(err)?)?;
    Ok(out.unbind())
}

/// Standard randomized obstacle layout for the given seed, as a dict with
/// the same schema the CLI writes to environment files.
#[pyfunction]
fn sample_environment(py: Python<'_>, seed: u64) -> PyResult<PyObject> {
    let env = gen_environment(seed);
    let value = serde_json::to_value(&env)
        .map_err(|e| PyValueError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &value)
}

/// Start/goal pair rejection-sampled from the environment's free space.
#[pyfunction]
#[pyo3(signature = (env, margin = 0.1, seed = 0))]
fn sample_task(
    py: Python<'_>,
    env: &Bound<'_, PyAny>,
    margin: f64,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let env = parse_env(env)?;
    let mut rng = derive(seed, STREAM_TASK);
    let task = sample_task_rs(&env, margin, seed, &mut rng).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("seed", task.seed)?;
    out.set_item("start", task.start.to_vec())?;
    out.set_item("goal", task.goal.to_vec())?;
    Ok(out.unbind())
}

/// True when the point lies inside any obstacle inflated by `margin`.
#[pyfunction]
#[pyo3(signature = (env, x, y, margin = 0.0))]
fn occupancy(env: &Bound<'_, PyAny>, x: f64, y: f64, margin: f64) -> PyResult<bool> {
    let env = parse_env(env)?;
    occupancy_rs(&env, [x, y], margin).map_err(err)
}

/// Checks a polyline of [x, y] positions (with interpolated interior points)
/// against the environment.
#[pyfunction]
#[pyo3(signature = (env, positions, interp = 5, margin = 0.05))]
fn collision_free(
    env: &Bound<'_, PyAny>,
    positions: Vec<Vec<f64>>,
    interp: usize,
    margin: f64,
) -> PyResult<bool> {
    let env = parse_env(env)?;
    let mut flat = Vec::with_capacity(positions.len() * 2);
    for p in &positions {
        if p.len() != 2 {
            return Err(PyValueError::new_err("positions must be [x, y] pairs"));
        }
        flat.extend_from_slice(p);
    }
    collision_free_rs(&env, &flat, interp, margin).map_err(err)
}

/// Draws trajectory samples from the constant-velocity prior anchored at the
/// given start and goal states (positions followed by velocities). Returns
/// `n_plans` lists of `horizon + 1` state vectors.
#[pyfunction]
#[pyo3(signature = (start, goal, horizon, n_plans = 1, seed = 0, config = None))]
fn prior_samples(
    py: Python<'_>,
    start: Vec<f64>,
    goal: Vec<f64>,
    horizon: usize,
    n_plans: usize,
    seed: u64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let spec: GpSpec = parse_config(config)?;
    let mut rng = derive(seed, STREAM_ESTIMATOR);
    let batch = py
        .allow_threads(|| gp_sample_prior(&spec, &start, &goal, horizon, n_plans, &mut rng))
        .map_err(err)?;
    let d = batch.dim();
    Ok((0..n_plans)
        .map(|p| batch.plan(p).chunks(d).map(|w| w.to_vec()).collect())
        .collect())
}

/// Plans a batch of trajectories from `start` to `goal` through the
/// environment. `config` accepts any subset of the planner config fields.
/// Returns the best trajectory (rows of [x, y, vx, vy]) plus batch
/// diagnostics.
#[pyfunction]
#[pyo3(signature = (env, start, goal, seed = 0, config = None))]
fn plan(
    py: Python<'_>,
    env: &Bound<'_, PyAny>,
    start: [f64; 2],
    goal: [f64; 2],
    seed: u64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyDict>> {
    let env = parse_env(env)?;
    let cfg: PlannerConfig = parse_config(config)?;
    let task = Task2D { seed, start, goal };
    let result = py
        .allow_threads(|| plan_rs(&env, &task, &cfg, seed))
        .map_err(err)?;
    let d = result.batch.dim();
    let best_states: Vec<Vec<f64>> = result
        .batch
        .plan(result.best)
        .chunks(d)
        .map(|w| w.to_vec())
        .collect();
    let ot_iterations: Vec<usize> = result.trace.entries.iter().map(|e| e.ot_iterations).collect();
    let out = PyDict::new(py);
    out.set_item("best", result.best)?;
    out.set_item("best_free", result.best_free)?;
    out.set_item("best_cost", result.costs[result.best])?;
    out.set_item("best_states", best_states)?;
    out.set_item("costs", result.costs.clone())?;
    out.set_item("free", result.free.clone())?;
    out.set_item("diverged", result.diverged)?;
    out.set_item("time_s", result.time_s)?;
    out.set_item("iterations", result.trace.entries.len())?;
    out.set_item("initial_mean_cost", result.trace.initial_mean_cost)?;
    out.set_item("final_mean_cost", result.trace.final_mean_cost)?;
    out.set_item("ot_iterations", ot_iterations)?;
    Ok(out.unbind())
}

/// Default planner configuration as a dict (edit and pass back to `plan`).
#[pyfunction]
fn default_planner_config(py: Python<'_>) -> PyResult<PyObject> {
    let value = serde_json::to_value(PlannerConfig::default())
        .map_err(|e| PyValueError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &value)
}

/// Runs the batch-optimization sweep on a smooth test function. `config`
/// accepts any subset of the sweep config fields (function, dim, n_points,
/// kind, lambda, seeds, iters, ...). Returns per-iteration alignment curves
/// and the mean objective value before and after.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn run_test_function(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyDict>> {
    let cfg: OptfnConfig = parse_config(config)?;
    let result = py.allow_threads(|| run_optfn(&cfg, None)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("cs_mean", &result.cs_mean)?;
    out.set_item("cs_std", &result.cs_std)?;
    out.set_item("initial_mean_value", result.initial_mean_value)?;
    out.set_item("final_mean_value", result.final_mean_value)?;
    Ok(out.unbind())
}

#[pymodule]
fn sinkstep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(polytope_vertices, m)?)?;
    m.add_function(wrap_pyfunction!(reference_cosine_measure, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_cosine_measure, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ot, m)?)?;
    m.add_function(wrap_pyfunction!(sample_environment, m)?)?;
    m.add_function(wrap_pyfunction!(sample_task, m)?)?;
    m.add_function(wrap_pyfunction!(occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(collision_free, m)?)?;
    m.add_function(wrap_pyfunction!(prior_samples, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(default_planner_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_test_function, m)?)?;
    Ok(())
}
