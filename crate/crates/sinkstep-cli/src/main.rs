//! Command line frontend: world and task generation, planning runs, the
//! seeded benchmark sweep, gradient-alignment sweeps on test functions, and
//! SVG rendering of the resulting artifacts.
//!
//! Exit codes: 0 on success, 1 on input errors, 2 on numerical divergence.

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sinkstep::gp::TrajectoryBatch;
use sinkstep::harness::{
    atomic_write, run_benchmark, run_optfn, BenchConfig, OptFn, OptfnConfig,
};
use sinkstep::planner::{plan, PlanResult, PlannerConfig};
use sinkstep::polytope::PolytopeKind;
use sinkstep::rng::{derive, STREAM_TASK};
use sinkstep::svgplot::{curves_svg, trajectories_svg, Curve};
use sinkstep::world2d::{gen_environment, sample_task, Environment2D, Task2D};
use sinkstep::{Error, Result};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "sinkstep", version, about = "Batch trajectory planning via entropic transport steps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random planar obstacle world.
    GenEnv {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a start/goal pair in free space of a world.
    GenTask {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Clearance around obstacles for the sampled endpoints.
        #[arg(long, default_value_t = 0.1)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a trajectory batch for a task.
    Plan {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Planner configuration JSON; missing fields fall back to defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also render the batch over the world.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run (or resume) the seeded benchmark sweep.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure step/gradient alignment on a smooth test function.
    Optfn {
        #[arg(long = "fn", default_value = "styblinski_tang")]
        function: String,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value = "cube")]
        polytope: String,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 5)]
        h: usize,
        #[arg(long, default_value_t = 0)]
        root_seed: u64,
        /// Keep the direction set axis-aligned instead of randomly rotated.
        #[arg(long)]
        no_rotate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a trajectory JSON (with --env) or a per-iteration CSV as SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// On-disk trajectory batch: `plans[p][t]` is one state `[pos.., vel..]`.
#[derive(Serialize, Deserialize)]
struct TrajectoryJson {
    plans: Vec<Vec<Vec<f64>>>,
    costs: Vec<f64>,
    free: Vec<bool>,
    best: usize,
    time_s: f64,
}

impl TrajectoryJson {
    fn from_result(res: &PlanResult) -> Self {
        let b = &res.batch;
        let plans = (0..b.n_plans())
            .map(|p| {
                (0..b.horizon() + 1)
                    .map(|t| b.waypoint(p, t).to_vec())
                    .collect()
            })
            .collect();
        Self {
            plans,
            costs: res.costs.clone(),
            free: res.free.clone(),
            best: res.best,
            time_s: res.time_s,
        }
    }

    fn to_batch(&self) -> Result<TrajectoryBatch> {
        let n = self.plans.len();
        if n == 0 {
            return Err(Error::InvalidInput("trajectory file holds no plans".into()));
        }
        let wp = self.plans[0].len();
        if wp < 2 {
            return Err(Error::InvalidInput(
                "plans need at least two waypoints".into(),
            ));
        }
        let dim = self.plans[0].first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * wp * dim);
        for plan in &self.plans {
            if plan.len() != wp {
                return Err(Error::DimensionMismatch(
                    "plans disagree on waypoint count".into(),
                ));
            }
            for state in plan {
                if state.len() != dim {
                    return Err(Error::DimensionMismatch(
                        "waypoints disagree on state dimension".into(),
                    ));
                }
                flat.extend_from_slice(state);
            }
        }
        TrajectoryBatch::from_flat(n, wp - 1, dim, flat)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn parse_polytope(name: &str) -> Result<PolytopeKind> {
    match name {
        "simplex" => Ok(PolytopeKind::Simplex),
        "orthoplex" => Ok(PolytopeKind::Orthoplex),
        "cube" => Ok(PolytopeKind::Cube),
        other => Err(Error::InvalidInput(format!(
            "unknown polytope {other:?}; expected simplex, orthoplex or cube"
        ))),
    }
}

fn parse_function(name: &str) -> Result<OptFn> {
    match name {
        "styblinski_tang" => Ok(OptFn::StyblinskiTang),
        "sphere" => Ok(OptFn::Sphere),
        other => Err(Error::InvalidInput(format!(
            "unknown function {other:?}; expected styblinski_tang or sphere"
        ))),
    }
}

fn run(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::GenEnv { seed, out } => {
            let env = gen_environment(seed);
            write_json(&out, &env)?;
            println!("{}: {} shapes", out.display(), env.shapes.len());
            Ok(0)
        }
        Cmd::GenTask {
            env,
            seed,
            margin,
            out,
        } => {
            let env: Environment2D = read_json(&env)?;
            let mut rng = derive(seed, STREAM_TASK);
            let task = sample_task(&env, margin, seed, &mut rng)?;
            write_json(&out, &task)?;
            println!(
                "{}: start ({:.3}, {:.3}) goal ({:.3}, {:.3})",
                out.display(),
                task.start[0],
                task.start[1],
                task.goal[0],
                task.goal[1]
            );
            Ok(0)
        }
        Cmd::Plan {
            env,
            task,
            config,
            seed,
            out,
            svg,
        } => {
            let env: Environment2D = read_json(&env)?;
            let task: Task2D = read_json(&task)?;
            let cfg: PlannerConfig = match config {
                Some(path) => read_json(&path)?,
                None => PlannerConfig::default(),
            };
            let res = plan(&env, &task, &cfg, seed)?;
            write_json(&out, &TrajectoryJson::from_result(&res))?;
            if let Some(svg_path) = svg {
                let rendered = trajectories_svg(&env, &res.batch, &res.free, Some(res.best))?;
                atomic_write(&svg_path, &rendered)?;
            }
            let n_free = res.free.iter().filter(|&&f| f).count();
            println!(
                "{}: {}/{} free, best cost {:.4}{}, {:.2}s{}",
                out.display(),
                n_free,
                res.free.len(),
                res.costs[res.best],
                if res.best_free { "" } else { " (in collision)" },
                res.time_s,
                if res.diverged { ", diverged" } else { "" }
            );
            Ok(if res.diverged { 2 } else { 0 })
        }
        Cmd::Bench { config, out } => {
            let cfg: BenchConfig = read_json(&config)?;
            let report = run_benchmark(&cfg, &out)?;
            let m = &report.aggregate;
            println!(
                "rows {} | SUC {:.1} ± {:.1} | GOOD {:.1} ± {:.1} | S {:.4} ± {:.4} | PL {:.2} ± {:.2} | time {:.2}s ± {:.2}",
                report.rows.len(),
                m.success_rate_pct.mean,
                m.success_rate_pct.std,
                m.good_pct.mean,
                m.good_pct.std,
                m.smoothness.mean,
                m.smoothness.std,
                m.path_length.mean,
                m.path_length.std,
                m.plan_time_s.mean,
                m.plan_time_s.std
            );
            let diverged = report
                .details
                .iter()
                .flatten()
                .any(|d| d.diverged);
            Ok(if diverged { 2 } else { 0 })
        }
        Cmd::Optfn {
            function,
            dim,
            points,
            polytope,
            lambda,
            seeds,
            iters,
            alpha,
            beta,
            h,
            root_seed,
            no_rotate,
            out,
        } => {
            let cfg = OptfnConfig {
                function: parse_function(&function)?,
                dim,
                n_points: points,
                kind: parse_polytope(&polytope)?,
                lambda,
                seeds,
                root_seed,
                iters,
                alpha,
                beta,
                h,
                rotate: !no_rotate,
            };
            let result = run_optfn(&cfg, Some(&out))?;
            println!(
                "mean value {:.3} -> {:.3} | alignment {:.3} (first) {:.3} (last)",
                result.initial_mean_value,
                result.final_mean_value,
                result.cs_mean.first().copied().unwrap_or(f64::NAN),
                result.cs_mean.last().copied().unwrap_or(f64::NAN)
            );
            Ok(0)
        }
        Cmd::Plot { input, env, out } => {
            let text = fs::read_to_string(&input)
                .map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
            let rendered = if text.trim_start().starts_with('{') {
                let traj: TrajectoryJson = serde_json::from_str(&text)
                    .map_err(|e| Error::Io(format!("{}: {e}", input.display())))?;
                let env_path = env.ok_or_else(|| {
                    Error::InvalidInput("trajectory plots need --env".into())
                })?;
                let env: Environment2D = read_json(&env_path)?;
                let batch = traj.to_batch()?;
                trajectories_svg(&env, &batch, &traj.free, Some(traj.best))?
            } else {
                render_csv_curves(&text, &input)?
            };
            atomic_write(&out, &rendered)?;
            println!("{}", out.display());
            Ok(0)
        }
    }
}

/// Renders every numeric column of a headered CSV as one curve.
fn render_csv_curves(text: &str, path: &Path) -> Result<String> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{}: empty file", path.display())))?;
    let labels: Vec<&str> = header.split(',').skip(1).collect();
    if labels.is_empty() {
        return Err(Error::Io(format!(
            "{}: expected an index column plus data columns",
            path.display()
        )));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != labels.len() + 1 {
            return Err(Error::Io(format!(
                "{}: ragged row {line:?}",
                path.display()
            )));
        }
        for (col, field) in columns.iter_mut().zip(fields[1..].iter()) {
            col.push(field.parse::<f64>().map_err(|e| {
                Error::Io(format!("{}: bad number {field:?}: {e}", path.display()))
            })?);
        }
    }
    let curves: Vec<Curve> = labels
        .iter()
        .zip(columns.iter())
        .map(|(label, values)| Curve { label, values })
        .collect();
    curves_svg(&curves)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericalDivergence { .. } => 2,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}
