//! Deterministic SVG rendering: obstacle worlds with trajectory overlays,
//! and simple line charts for per-iteration series. Pure string builders —
//! identical inputs produce identical bytes, so rendered artifacts can be
//! compared across runs.

use crate::error::{Error, Result};
use crate::gp::TrajectoryBatch;
use crate::world2d::{Environment2D, Shape2D};

/// Renders the world and one polyline per plan, y axis pointing up.
/// Collision-free plans are drawn green, colliding ones red, and `best` (if
/// given) gets a wider blue overlay. Obstacles are the only `circle`/`rect`
/// elements in the output.
pub fn trajectories_svg(
    env: &Environment2D,
    batch: &TrajectoryBatch,
    free: &[bool],
    best: Option<usize>,
) -> Result<String> {
    if free.len() != batch.n_plans() {
        return Err(Error::DimensionMismatch(format!(
            "{} free flags for {} plans",
            free.len(),
            batch.n_plans()
        )));
    }
    if batch.dim() < 4 {
        return Err(Error::InvalidInput(format!(
            "planar rendering needs at least two position coordinates per state, got dim {}",
            batch.dim()
        )));
    }
    if let Some(b) = best {
        if b >= batch.n_plans() {
            return Err(Error::InvalidInput(format!(
                "best index {b} out of range for {} plans",
                batch.n_plans()
            )));
        }
    }
    let [[x0, x1], [y0, y1]] = env.limits;
    let (w, h) = (x1 - x0, y1 - y0);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{x0} {} {w} {h}\">\n",
        -y1
    ));
    // Flip y once so world coordinates can be written verbatim.
    svg.push_str("<g transform=\"scale(1 -1)\">\n");
    for shape in &env.shapes {
        match *shape {
            Shape2D::Circle { center, radius } => svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"{radius}\" fill=\"#555\"/>\n",
                center[0], center[1]
            )),
            Shape2D::Square { center, half_width } => svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{2}\" height=\"{2}\" fill=\"#555\"/>\n",
                center[0] - half_width,
                center[1] - half_width,
                2.0 * half_width,
            )),
        }
    }
    let polyline = |p: usize, style: &str| -> String {
        let mut points = String::new();
        for t in 0..batch.horizon() + 1 {
            let wp = batch.waypoint(p, t);
            if t > 0 {
                points.push(' ');
            }
            points.push_str(&format!("{},{}", wp[0], wp[1]));
        }
        format!("<polyline points=\"{points}\" fill=\"none\" {style}/>\n")
    };
    for p in 0..batch.n_plans() {
        let color = if free[p] { "#2a7" } else { "#c44" };
        svg.push_str(&polyline(
            p,
            &format!("stroke=\"{color}\" stroke-width=\"0.05\" stroke-opacity=\"0.6\""),
        ));
    }
    if let Some(b) = best {
        svg.push_str(&polyline(b, "stroke=\"#07c\" stroke-width=\"0.12\""));
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// One labeled series for [`curves_svg`].
#[derive(Debug, Clone, Copy)]
pub struct Curve<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

const PALETTE: [&str; 6] = ["#07c", "#c44", "#2a7", "#e90", "#90c", "#555"];

/// Renders per-iteration series as polylines on a fixed 640×400 canvas with
/// the value range annotated. Non-finite values break the polyline at that
/// sample. Errors when no series holds a finite value.
pub fn curves_svg(curves: &[Curve]) -> Result<String> {
    let max_len = curves.iter().map(|c| c.values.len()).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::InvalidInput("no curve data to render".into()));
    }
    let finite: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.values.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    if finite.is_empty() {
        return Err(Error::InvalidInput("no finite curve values".into()));
    }
    let mut lo = finite.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mut hi = finite.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let (width, height, margin) = (640.0, 400.0, 50.0);
    let x_of = |i: usize| {
        let frac = if max_len > 1 {
            i as f64 / (max_len - 1) as f64
        } else {
            0.5
        };
        margin + frac * (width - 2.0 * margin)
    };
    let y_of = |v: f64| height - margin - (v - lo) / (hi - lo) * (height - 2.0 * margin);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<path d=\"M {m} {m} L {m} {b} L {r} {b}\" fill=\"none\" stroke=\"#000\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin
    ));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{:.2}\" font-size=\"12\">{hi}</text>\n",
        margin + 4.0
    ));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{:.2}\" font-size=\"12\">{lo}</text>\n",
        height - margin
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>\n",
        width - margin,
        height - margin + 16.0,
        max_len - 1
    ));
    for (ci, curve) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let mut points = String::new();
        let mut segments = Vec::new();
        for (i, &v) in curve.values.iter().enumerate() {
            if v.is_finite() {
                if !points.is_empty() {
                    points.push(' ');
                }
                points.push_str(&format!("{:.2},{:.2}", x_of(i), y_of(v)));
            } else if !points.is_empty() {
                segments.push(std::mem::take(&mut points));
            }
        }
        if !points.is_empty() {
            segments.push(points);
        }
        for seg in segments {
            svg.push_str(&format!(
                "<polyline points=\"{seg}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            margin + 8.0,
            margin + 16.0 * (ci + 1) as f64,
            curve.label
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
