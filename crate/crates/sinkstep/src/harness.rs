//! Benchmark harness: trajectory metrics, a crash-resumable seeded sweep
//! over random worlds, and smooth test objectives for measuring how well
//! transport steps align with true gradients.
//!
//! The sweep writes one CSV row per (environment seed, task) as soon as it is
//! computed, so an interrupted run resumes by re-parsing `rows.csv` and
//! continuing from the first missing row. All derived files are written
//! atomically (temp file + rename); only the row log is appended in place.

use crate::error::{Error, Result};
use crate::gp::TrajectoryBatch;
use crate::planner::{plan, PlannerConfig};
use crate::polytope::PolytopeKind;
use crate::rng::{derive, STREAM_BENCH_BASE, STREAM_OPTFN};
use crate::step::{
    cosine_similarity_diagnostic, sinkhorn_step, BatchObjective, PointBatch, StepConfig,
};
use crate::world2d::{gen_environment, sample_task, Environment2D};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

// ---------------------------------------------------------------------------
// Trajectory metrics
// ---------------------------------------------------------------------------

/// Splits a flat state trajectory into (waypoint count, state dim), checking
/// that it tiles and holds at least two waypoints. States are laid out as
/// `[positions..., velocities...]` with `d_cfg` entries each.
fn plan_shape(states: &[f64], d_cfg: usize) -> Result<(usize, usize)> {
    if d_cfg == 0 {
        return Err(Error::InvalidInput("d_cfg must be at least 1".into()));
    }
    let dim = 2 * d_cfg;
    if states.is_empty() || states.len() % dim != 0 {
        return Err(Error::DimensionMismatch(format!(
            "trajectory of {} values does not tile state dimension {dim}",
            states.len()
        )));
    }
    let wp = states.len() / dim;
    if wp < 2 {
        return Err(Error::InvalidInput(
            "trajectory metrics need at least two waypoints".into(),
        ));
    }
    Ok((wp, dim))
}

/// Mean norm of consecutive velocity differences: with T transitions,
/// `(1/T) * sum_t ||v_{t+1} - v_t||`. Constant-velocity trajectories score 0.
pub fn metric_smoothness(states: &[f64], d_cfg: usize) -> Result<f64> {
    let (wp, dim) = plan_shape(states, d_cfg)?;
    let mut acc = 0.0;
    for t in 0..wp - 1 {
        let a = &states[t * dim..(t + 1) * dim];
        let b = &states[(t + 1) * dim..(t + 2) * dim];
        let mut sq = 0.0;
        for k in 0..d_cfg {
            let dv = b[d_cfg + k] - a[d_cfg + k];
            sq += dv * dv;
        }
        acc += sq.sqrt();
    }
    Ok(acc / (wp - 1) as f64)
}

/// Sum of consecutive position-difference norms.
pub fn metric_path_length(states: &[f64], d_cfg: usize) -> Result<f64> {
    let (wp, dim) = plan_shape(states, d_cfg)?;
    let mut acc = 0.0;
    for t in 0..wp - 1 {
        let a = &states[t * dim..(t + 1) * dim];
        let b = &states[(t + 1) * dim..(t + 2) * dim];
        let mut sq = 0.0;
        for k in 0..d_cfg {
            let dp = b[k] - a[k];
            sq += dp * dp;
        }
        acc += sq.sqrt();
    }
    Ok(acc)
}

fn percent_true(flags: &[bool], what: &str) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::InvalidInput(format!("{what} flags are empty")));
    }
    let k = flags.iter().filter(|&&f| f).count();
    Ok(100.0 * k as f64 / flags.len() as f64)
}

/// Percentage of tasks that produced at least one collision-free trajectory,
/// from one `solved` flag per task.
pub fn metric_suc(task_solved: &[bool]) -> Result<f64> {
    percent_true(task_solved, "task")
}

/// Percentage of collision-free trajectories within one task's batch.
pub fn metric_good(free: &[bool]) -> Result<f64> {
    percent_true(free, "trajectory")
}

/// Mean smoothness and path length over the collision-free plans of a batch;
/// `(NaN, NaN)` when none are free.
pub fn task_metrics(batch: &TrajectoryBatch, free: &[bool], d_cfg: usize) -> Result<(f64, f64)> {
    if free.len() != batch.n_plans() {
        return Err(Error::DimensionMismatch(format!(
            "{} free flags for {} plans",
            free.len(),
            batch.n_plans()
        )));
    }
    let mut s = 0.0;
    let mut pl = 0.0;
    let mut n = 0usize;
    for (p, &ok) in free.iter().enumerate() {
        if !ok {
            continue;
        }
        s += metric_smoothness(batch.plan(p), d_cfg)?;
        pl += metric_path_length(batch.plan(p), d_cfg)?;
        n += 1;
    }
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    Ok((s / n as f64, pl / n as f64))
}

fn median_f64(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("median over finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Medians of the chronologically first and last quarter of a count series
/// (quarter size rounded up). Returns `(NaN, NaN)` on an empty series.
pub fn quartile_medians(counts: &[usize]) -> (f64, f64) {
    if counts.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let q = counts.len().div_ceil(4);
    let mut first: Vec<f64> = counts[..q].iter().map(|&c| c as f64).collect();
    let mut last: Vec<f64> = counts[counts.len() - q..].iter().map(|&c| c as f64).collect();
    (median_f64(&mut first), median_f64(&mut last))
}

// ---------------------------------------------------------------------------
// Benchmark sweep
// ---------------------------------------------------------------------------

/// Mean and sample standard deviation (NaN with fewer than two samples).
#[derive(Debug, Clone, Copy)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Stat {
    if values.is_empty() {
        return Stat {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Stat { mean, std: f64::NAN };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Stat {
        mean,
        std: var.sqrt(),
    }
}

/// Aggregate sweep statistics. Success rate is aggregated per environment
/// seed, the good-trajectory percentage per task row, and smoothness / path
/// length are pooled over collision-free trajectories only (mean weighted by
/// each task's free count; std taken across task means).
#[derive(Debug, Clone)]
pub struct Metrics {
    pub plan_time_s: Stat,
    pub success_rate_pct: Stat,
    pub good_pct: Stat,
    pub smoothness: Stat,
    pub path_length: Stat,
}

/// Sweep configuration: `n_seeds` worlds starting at `root_seed`, with
/// `tasks_per_seed` start/goal pairs each, planned with `planner`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub root_seed: u64,
    pub n_seeds: usize,
    pub tasks_per_seed: usize,
    /// Clearance used when sampling start/goal pairs.
    pub task_margin: f64,
    pub planner: PlannerConfig,
    /// Fixed world reused for every seed instead of generated ones; tasks
    /// and plans still vary by seed.
    #[serde(default)]
    pub env_override: Option<Environment2D>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            root_seed: 0,
            n_seeds: 20,
            tasks_per_seed: 5,
            task_margin: 0.1,
            planner: PlannerConfig::default(),
            env_override: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 || self.tasks_per_seed == 0 {
            return Err(Error::InvalidInput(
                "n_seeds and tasks_per_seed must be at least 1".into(),
            ));
        }
        if !(self.task_margin.is_finite() && self.task_margin >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "task_margin must be non-negative and finite, got {}",
                self.task_margin
            )));
        }
        self.planner.validate()
    }
}

/// Header of the per-task row log.
pub const ROWS_HEADER: &str = "seed,task,time_s,suc,good,S,PL,ot_iters_first_q,ot_iters_last_q";

/// One benchmark row: task-level success (0 or 100), percentage of free
/// trajectories, metric means over the free trajectories (NaN when none),
/// and the median transport iteration counts over the first and last quarter
/// of planner iterations.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub seed: u64,
    pub task: usize,
    pub time_s: f64,
    pub suc: f64,
    pub good: f64,
    pub s: f64,
    pub pl: f64,
    pub ot_first: f64,
    pub ot_last: f64,
}

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.task,
            self.time_s,
            self.suc,
            self.good,
            self.s,
            self.pl,
            self.ot_first,
            self.ot_last
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Io(format!(
                "expected 9 columns in benchmark row, got {}: {line:?}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Io(format!("bad number {:?} in row {line:?}: {e}", fields[i])))
        };
        Ok(Self {
            seed: fields[0]
                .parse()
                .map_err(|e| Error::Io(format!("bad seed in row {line:?}: {e}")))?,
            task: fields[1]
                .parse()
                .map_err(|e| Error::Io(format!("bad task index in row {line:?}: {e}")))?,
            time_s: num(2)?,
            suc: num(3)?,
            good: num(4)?,
            s: num(5)?,
            pl: num(6)?,
            ot_first: num(7)?,
            ot_last: num(8)?,
        })
    }
}

/// Per-row planning internals that are not persisted to the row log.
#[derive(Debug, Clone)]
pub struct RowDetail {
    /// Mean batch cost before the first update.
    pub initial_cost: f64,
    /// Mean batch cost after the last update.
    pub final_cost: f64,
    pub iterations: usize,
    /// Max over iterations of (max waypoint displacement − trust region in
    /// effect), normalized units; ≤ 0 when the trust region held exactly.
    pub trust_region_excess: f64,
    pub diverged: bool,
}

/// Full sweep result. `details` is parallel to `rows` and `None` for rows
/// restored from an earlier interrupted run or tasks that never planned.
#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub details: Vec<Option<RowDetail>>,
    pub aggregate: Metrics,
}

/// Writes `contents` to `path` via a temp file and rename, so readers never
/// observe a half-written file.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Replaces the third column (wall-clock time) of every data row with `-`,
/// leaving the header untouched. Timing is the only column that varies
/// between reruns with identical seeds, so masked logs compare byte-exactly.
pub fn csv_mask_time(csv: &str) -> String {
    let mut out = String::with_capacity(csv.len());
    for (i, line) in csv.lines().enumerate() {
        if i == 0 || line.is_empty() {
            out.push_str(line);
        } else {
            for (j, field) in line.split(',').enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(if j == 2 { "-" } else { field });
            }
        }
        out.push('\n');
    }
    out
}

/// Aggregates row statistics; `n_plans` recovers each task's free-trajectory
/// count from its percentage so pooled metrics weight tasks correctly.
pub fn aggregate_metrics(rows: &[BenchRow], n_plans: usize) -> Metrics {
    let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for row in rows {
        per_seed.entry(row.seed).or_default().push(row.suc);
    }
    let suc_by_seed: Vec<f64> = per_seed
        .values()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();

    let good: Vec<f64> = rows.iter().map(|r| r.good).collect();
    let time: Vec<f64> = rows.iter().map(|r| r.time_s).collect();

    let pooled = |pick: fn(&BenchRow) -> f64| -> Stat {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut task_means = Vec::new();
        for row in rows {
            let w = (row.good / 100.0 * n_plans as f64).round();
            let v = pick(row);
            if w > 0.0 && v.is_finite() {
                acc += w * v;
                wsum += w;
                task_means.push(v);
            }
        }
        Stat {
            mean: if wsum > 0.0 { acc / wsum } else { f64::NAN },
            std: stat(&task_means).std,
        }
    };

    Metrics {
        plan_time_s: stat(&time),
        success_rate_pct: stat(&suc_by_seed),
        good_pct: stat(&good),
        smoothness: pooled(|r| r.s),
        path_length: pooled(|r| r.pl),
    }
}

fn summary_csv(m: &Metrics) -> String {
    let mut out = String::from("metric,mean,std\n");
    for (name, st) in [
        ("time_s", &m.plan_time_s),
        ("suc", &m.success_rate_pct),
        ("good", &m.good_pct),
        ("S", &m.smoothness),
        ("PL", &m.path_length),
    ] {
        out.push_str(&format!("{name},{},{}\n", st.mean, st.std));
    }
    out
}

/// Parses an existing row log, dropping a trailing line that was cut off
/// mid-write (no terminating newline). Any other malformed content is an
/// error rather than silently discarded.
fn load_rows(path: &Path) -> Result<Vec<BenchRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut lines: Vec<&str> = text.lines().collect();
    if !text.ends_with('\n') {
        lines.pop();
    }
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    if lines[0] != ROWS_HEADER {
        return Err(Error::Io(format!(
            "unexpected header {:?} in {}",
            lines[0],
            path.display()
        )));
    }
    lines[1..].iter().map(|l| BenchRow::from_csv_line(l)).collect()
}

fn task_failure_row(env_seed: u64, task_idx: usize) -> BenchRow {
    BenchRow {
        seed: env_seed,
        task: task_idx,
        time_s: 0.0,
        suc: 0.0,
        good: 0.0,
        s: f64::NAN,
        pl: f64::NAN,
        ot_first: f64::NAN,
        ot_last: f64::NAN,
    }
}

fn run_task(
    cfg: &BenchConfig,
    env: &Environment2D,
    env_seed: u64,
    task_idx: usize,
) -> (BenchRow, Option<RowDetail>) {
    let mut task_rng = derive(env_seed, STREAM_BENCH_BASE + 2 * task_idx as u64);
    let task = match sample_task(env, cfg.task_margin, env_seed, &mut task_rng) {
        Ok(t) => t,
        Err(_) => return (task_failure_row(env_seed, task_idx), None),
    };
    let planner_seed = env_seed
        .wrapping_mul(cfg.tasks_per_seed as u64)
        .wrapping_add(task_idx as u64);
    let res = match plan(env, &task, &cfg.planner, planner_seed) {
        Ok(r) => r,
        Err(_) => return (task_failure_row(env_seed, task_idx), None),
    };
    let d_cfg = cfg.planner.gp.d_cfg;
    let (s, pl) = match task_metrics(&res.batch, &res.free, d_cfg) {
        Ok(v) => v,
        Err(_) => return (task_failure_row(env_seed, task_idx), None),
    };
    let solved = res.free.iter().any(|&f| f);
    let good = metric_good(&res.free).unwrap_or(0.0);
    let ot_iters: Vec<usize> = res.trace.entries.iter().map(|e| e.ot_iterations).collect();
    let (ot_first, ot_last) = quartile_medians(&ot_iters);
    let excess = res
        .trace
        .entries
        .iter()
        .map(|e| e.max_step_norm - e.alpha)
        .fold(f64::NEG_INFINITY, f64::max);
    let row = BenchRow {
        seed: env_seed,
        task: task_idx,
        time_s: res.time_s,
        suc: if solved { 100.0 } else { 0.0 },
        good,
        s,
        pl,
        ot_first,
        ot_last,
    };
    let detail = RowDetail {
        initial_cost: res.trace.initial_mean_cost,
        final_cost: res.trace.final_mean_cost,
        iterations: res.trace.entries.len(),
        trust_region_excess: excess,
        diverged: res.diverged,
    };
    (row, Some(detail))
}

/// Runs (or resumes) the sweep, appending one row per (seed, task) to
/// `rows.csv` as it completes and writing `config.json` plus an aggregate
/// `summary.csv` at the end. A directory holding rows for a different
/// configuration is rejected. Task-level failures (no valid start/goal pair)
/// become zero-success rows; they never abort the sweep.
pub fn run_benchmark(cfg: &BenchConfig, out_dir: &Path) -> Result<BenchmarkReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let cfg_json = serde_json::to_string_pretty(cfg)? + "\n";
    let cfg_path = out_dir.join("config.json");
    if cfg_path.exists() {
        let prior = fs::read_to_string(&cfg_path)?;
        if prior != cfg_json {
            return Err(Error::InvalidInput(format!(
                "{} holds a different configuration; use a fresh directory",
                out_dir.display()
            )));
        }
    } else {
        atomic_write(&cfg_path, &cfg_json)?;
    }

    // Rows must form a prefix of the canonical (seed, task) enumeration;
    // anything after the first mismatch is recomputed.
    let mut rows = load_rows(&out_dir.join("rows.csv"))?;
    let keep = rows
        .iter()
        .enumerate()
        .take_while(|(i, row)| {
            let env_seed = cfg.root_seed.wrapping_add((i / cfg.tasks_per_seed) as u64);
            row.seed == env_seed && row.task == i % cfg.tasks_per_seed
        })
        .count();
    rows.truncate(keep.min(cfg.n_seeds * cfg.tasks_per_seed));

    let rows_path = out_dir.join("rows.csv");
    let mut log = String::from(ROWS_HEADER);
    log.push('\n');
    for row in &rows {
        log.push_str(&row.to_csv_line());
        log.push('\n');
    }
    atomic_write(&rows_path, &log)?;
    let mut file = fs::OpenOptions::new().append(true).open(&rows_path)?;

    let total = cfg.n_seeds * cfg.tasks_per_seed;
    let mut details: Vec<Option<RowDetail>> = vec![None; rows.len()];
    for idx in rows.len()..total {
        let (si, tj) = (idx / cfg.tasks_per_seed, idx % cfg.tasks_per_seed);
        let env_seed = cfg.root_seed.wrapping_add(si as u64);
        let env = cfg
            .env_override
            .clone()
            .unwrap_or_else(|| gen_environment(env_seed));
        let (row, detail) = run_task(cfg, &env, env_seed, tj);
        file.write_all(row.to_csv_line().as_bytes())?;
        file.write_all(b"\n")?;
        file.flush()?;
        rows.push(row);
        details.push(detail);
    }

    let aggregate = aggregate_metrics(&rows, cfg.planner.n_plans);
    atomic_write(&out_dir.join("summary.csv"), &summary_csv(&aggregate))?;
    Ok(BenchmarkReport {
        config: cfg.clone(),
        rows,
        details,
        aggregate,
    })
}

// ---------------------------------------------------------------------------
// Smooth test objectives
// ---------------------------------------------------------------------------

fn check_tiling(queries: &[f64], out_len: usize, dim: usize) -> Result<()> {
    if queries.len() != out_len * dim {
        return Err(Error::DimensionMismatch(format!(
            "{} query values for {out_len} outputs of dimension {dim}",
            queries.len()
        )));
    }
    Ok(())
}

/// Means of r, r², r³, r⁴ over the probe radii.
fn radius_moments(radii: &[f64]) -> (f64, f64, f64, f64) {
    let h = radii.len() as f64;
    let (mut m1, mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0, 0.0);
    for &r in radii {
        let r2 = r * r;
        m1 += r;
        m2 += r2;
        m3 += r2 * r;
        m4 += r2 * r2;
    }
    (m1 / h, m2 / h, m3 / h, m4 / h)
}

/// f(x) = ½ Σᵢ (xᵢ⁴ − 16xᵢ² + 5xᵢ): separable with 2^d local minima; the
/// global minimum sits near xᵢ ≈ −2.9035 in every coordinate.
#[derive(Debug, Clone, Copy)]
pub struct StyblinskiTang {
    pub dim: usize,
}

fn styblinski_tang_value(x: &[f64]) -> f64 {
    0.5 * x
        .iter()
        .map(|&v| {
            let v2 = v * v;
            v2 * v2 - 16.0 * v2 + 5.0 * v
        })
        .sum::<f64>()
}

impl BatchObjective for StyblinskiTang {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate_batch(&self, queries: &[f64], out: &mut [f64]) -> Result<()> {
        check_tiling(queries, out.len(), self.dim)?;
        for (o, q) in out.iter_mut().zip(queries.chunks_exact(self.dim)) {
            *o = styblinski_tang_value(q);
        }
        Ok(())
    }

    // Mean probe cost in closed form: each coordinate of f is polynomial in
    // the radius, so averaging over radii reduces to the radius moments.
    fn probe_means(
        &self,
        _index: usize,
        x: &[f64],
        dirs: &[f64],
        radii: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.dim;
        check_tiling(dirs, out.len(), d)?;
        let (m1, m2, m3, m4) = radius_moments(radii);
        let base = styblinski_tang_value(x);
        for (o, u) in out.iter_mut().zip(dirs.chunks_exact(d)) {
            let mut delta = 0.0;
            for k in 0..d {
                let (xk, uk) = (x[k], u[k]);
                let x2 = xk * xk;
                let u2 = uk * uk;
                delta += 4.0 * x2 * xk * uk * m1 + 6.0 * x2 * u2 * m2
                    + 4.0 * xk * u2 * uk * m3
                    + u2 * u2 * m4
                    - 16.0 * (2.0 * xk * uk * m1 + u2 * m2)
                    + 5.0 * uk * m1;
            }
            *o = base + 0.5 * delta;
        }
        Ok(())
    }

    fn gradients(&self, points: &[f64], out: &mut [f64]) -> Result<bool> {
        if points.len() != out.len() || points.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "gradient buffer of {} values for {} point values",
                out.len(),
                points.len()
            )));
        }
        for (g, &v) in out.iter_mut().zip(points.iter()) {
            *g = 2.0 * v * v * v - 16.0 * v + 2.5;
        }
        Ok(true)
    }
}

/// f(x) = ‖x‖² with exact gradients; steps on it should align with −x.
#[derive(Debug, Clone, Copy)]
pub struct Sphere {
    pub dim: usize,
}

impl BatchObjective for Sphere {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate_batch(&self, queries: &[f64], out: &mut [f64]) -> Result<()> {
        check_tiling(queries, out.len(), self.dim)?;
        for (o, q) in out.iter_mut().zip(queries.chunks_exact(self.dim)) {
            *o = q.iter().map(|&v| v * v).sum();
        }
        Ok(())
    }

    fn probe_means(
        &self,
        _index: usize,
        x: &[f64],
        dirs: &[f64],
        radii: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.dim;
        check_tiling(dirs, out.len(), d)?;
        let (m1, m2, _, _) = radius_moments(radii);
        let base: f64 = x.iter().map(|&v| v * v).sum();
        for (o, u) in out.iter_mut().zip(dirs.chunks_exact(d)) {
            let mut xu = 0.0;
            let mut uu = 0.0;
            for k in 0..d {
                xu += x[k] * u[k];
                uu += u[k] * u[k];
            }
            *o = base + 2.0 * m1 * xu + m2 * uu;
        }
        Ok(())
    }

    fn gradients(&self, points: &[f64], out: &mut [f64]) -> Result<bool> {
        if points.len() != out.len() || points.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "gradient buffer of {} values for {} point values",
                out.len(),
                points.len()
            )));
        }
        for (g, &v) in out.iter_mut().zip(points.iter()) {
            *g = 2.0 * v;
        }
        Ok(true)
    }
}

// ---------------------------------------------------------------------------
// Gradient-alignment sweep on test functions
// ---------------------------------------------------------------------------

/// Selectable test objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptFn {
    StyblinskiTang,
    Sphere,
}

impl OptFn {
    pub fn name(self) -> &'static str {
        match self {
            OptFn::StyblinskiTang => "styblinski_tang",
            OptFn::Sphere => "sphere",
        }
    }
}

fn kind_name(kind: PolytopeKind) -> &'static str {
    match kind {
        PolytopeKind::Simplex => "simplex",
        PolytopeKind::Orthoplex => "orthoplex",
        PolytopeKind::Cube => "cube",
    }
}

/// One sweep cell: `seeds` independent point clouds of `n_points` uniform in
/// [−5, 5]^dim, updated for `iters` iterations with a fixed (non-annealed)
/// step configuration while recording per-iteration cosine similarity
/// between the applied steps and the negated analytic gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptfnConfig {
    pub function: OptFn,
    pub dim: usize,
    pub n_points: usize,
    pub kind: PolytopeKind,
    pub lambda: f64,
    pub seeds: usize,
    pub root_seed: u64,
    pub iters: usize,
    pub alpha: f64,
    pub beta: f64,
    pub h: usize,
    pub rotate: bool,
}

impl Default for OptfnConfig {
    fn default() -> Self {
        Self {
            function: OptFn::StyblinskiTang,
            dim: 10,
            n_points: 1000,
            kind: PolytopeKind::Cube,
            lambda: 0.5,
            seeds: 10,
            root_seed: 0,
            iters: 200,
            alpha: 0.1,
            beta: 0.1,
            h: 5,
            rotate: true,
        }
    }
}

impl OptfnConfig {
    fn step_config(&self) -> StepConfig {
        StepConfig {
            kind: self.kind,
            alpha: self.alpha,
            beta: self.beta,
            h: self.h,
            lambda: self.lambda,
            eps: 0.0,
            annealing: false,
            rotate: self.rotate,
            ot_max_iters: 100,
            ot_tol: 1e-5,
            freeze: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::UnsupportedDimension(format!(
                "test objectives need dimension >= 2, got {}",
                self.dim
            )));
        }
        if self.n_points == 0 || self.seeds == 0 || self.iters == 0 {
            return Err(Error::InvalidInput(
                "n_points, seeds and iters must be at least 1".into(),
            ));
        }
        self.step_config().validate(self.n_points, self.dim)
    }
}

/// Per-iteration alignment statistics pooled over points and seeds, plus the
/// mean objective value before and after each seed's run.
#[derive(Debug, Clone)]
pub struct OptfnResult {
    pub cs_mean: Vec<f64>,
    pub cs_std: Vec<f64>,
    pub initial_mean_value: f64,
    pub final_mean_value: f64,
}

/// CSV file name of one sweep cell.
pub fn optfn_cell_filename(cfg: &OptfnConfig) -> String {
    format!(
        "cs_{}_{}_lambda{}.csv",
        cfg.function.name(),
        kind_name(cfg.kind),
        cfg.lambda
    )
}

/// Serializes per-iteration alignment curves.
pub fn optfn_csv(result: &OptfnResult) -> String {
    let mut out = String::from("iteration,cs_mean,cs_std\n");
    for (i, (m, s)) in result.cs_mean.iter().zip(result.cs_std.iter()).enumerate() {
        out.push_str(&format!("{i},{m},{s}\n"));
    }
    out
}

fn run_optfn_cell<O: BatchObjective>(obj: &O, cfg: &OptfnConfig) -> Result<OptfnResult> {
    let step_cfg = cfg.step_config();
    let n = cfg.n_points;
    let d = cfg.dim;
    let mut sum = vec![0.0; cfg.iters];
    let mut sumsq = vec![0.0; cfg.iters];
    let mut count = vec![0usize; cfg.iters];
    let mut initial_acc = 0.0;
    let mut final_acc = 0.0;
    let mut costs = vec![0.0; n];
    let mut grads = vec![0.0; n * d];
    for s in 0..cfg.seeds {
        let mut rng = derive(cfg.root_seed.wrapping_add(s as u64), STREAM_OPTFN);
        let mut batch = PointBatch::uniform(n, d, -5.0, 5.0, &mut rng)?;
        obj.point_costs(batch.as_slice(), &mut costs)?;
        initial_acc += costs.iter().sum::<f64>() / n as f64;
        for it in 0..cfg.iters {
            let has_grads = obj.gradients(batch.as_slice(), &mut grads)?;
            let outcome = sinkhorn_step(&mut batch, &step_cfg, obj, &mut rng)?;
            if has_grads {
                for c in cosine_similarity_diagnostic(&outcome.steps, &grads, d)
                    .into_iter()
                    .flatten()
                {
                    sum[it] += c;
                    sumsq[it] += c * c;
                    count[it] += 1;
                }
            }
        }
        obj.point_costs(batch.as_slice(), &mut costs)?;
        final_acc += costs.iter().sum::<f64>() / n as f64;
    }
    let mut cs_mean = Vec::with_capacity(cfg.iters);
    let mut cs_std = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let k = count[it] as f64;
        if count[it] == 0 {
            cs_mean.push(f64::NAN);
            cs_std.push(f64::NAN);
            continue;
        }
        let mean = sum[it] / k;
        cs_mean.push(mean);
        if count[it] < 2 {
            cs_std.push(f64::NAN);
        } else {
            let var = ((sumsq[it] - sum[it] * sum[it] / k) / (k - 1.0)).max(0.0);
            cs_std.push(var.sqrt());
        }
    }
    Ok(OptfnResult {
        cs_mean,
        cs_std,
        initial_mean_value: initial_acc / cfg.seeds as f64,
        final_mean_value: final_acc / cfg.seeds as f64,
    })
}

/// Runs one sweep cell; when `out_dir` is given the per-iteration curve is
/// written there under [`optfn_cell_filename`].
pub fn run_optfn(cfg: &OptfnConfig, out_dir: Option<&Path>) -> Result<OptfnResult> {
    cfg.validate()?;
    let result = match cfg.function {
        OptFn::StyblinskiTang => run_optfn_cell(&StyblinskiTang { dim: cfg.dim }, cfg)?,
        OptFn::Sphere => run_optfn_cell(&Sphere { dim: cfg.dim }, cfg)?,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        atomic_write(&dir.join(optfn_cell_filename(cfg)), &optfn_csv(&result))?;
    }
    Ok(result)
}
