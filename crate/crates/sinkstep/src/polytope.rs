//! Regular polytope direction sets.
//!
//! A direction set is the vertex collection of a regular polytope inscribed
//! in the unit sphere: the d-simplex (d+1 vertices), the d-orthoplex (2d
//! vertices, the signed basis), or the d-cube (2^d sign patterns). These sets
//! positively span R^d, so for any query direction some vertex has positive
//! dot product; the cosine measure quantifies the worst case. Batch
//! optimizers use one random rotation of the set per point and probe the
//! objective at evenly spaced offsets along each direction.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

/// Regular polytope family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolytopeKind {
    Simplex,
    Orthoplex,
    Cube,
}

impl PolytopeKind {
    /// Number of vertices in dimension `d`.
    pub fn vertex_count(self, d: usize) -> usize {
        match self {
            PolytopeKind::Simplex => d + 1,
            PolytopeKind::Orthoplex => 2 * d,
            PolytopeKind::Cube => 1usize << d,
        }
    }
}

/// Unit direction vectors with zero centroid, stored row-major m x d.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    dim: usize,
    data: Vec<f64>,
}

impl DirectionSet {
    /// Wraps a row-major buffer, checking unit norms (1e-10) and zero
    /// centroid (1e-9).
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "direction buffer of {} entries does not tile dimension {dim}",
                data.len()
            )));
        }
        let m = data.len() / dim;
        let mut centroid = vec![0.0; dim];
        for i in 0..m {
            let row = &data[i * dim..(i + 1) * dim];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput(format!(
                    "direction {i} has norm {norm}, must be 1 within 1e-10"
                )));
            }
            for k in 0..dim {
                centroid[k] += row[k];
            }
        }
        let off = centroid.iter().map(|x| x.abs()).fold(0.0f64, f64::max) / m as f64;
        if off > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "direction centroid deviates from zero by {off}"
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of directions.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Vertex directions of the chosen polytope in dimension `d`.
///
/// Simplex rows are the d basis-anchored vertices followed by the apex;
/// orthoplex rows alternate +e_i, -e_i; cube rows enumerate sign patterns by
/// binary counting with the first coordinate as the most significant bit
/// (row 0 is all-positive).
pub fn vertices(kind: PolytopeKind, d: usize) -> Result<DirectionSet> {
    if d < 2 {
        return Err(Error::UnsupportedDimension(format!(
            "direction sets need dimension >= 2, got {d}"
        )));
    }
    if kind == PolytopeKind::Cube && d > 20 {
        return Err(Error::UnsupportedDimension(format!(
            "cube vertex count 2^{d} exceeds the supported range (d <= 20)"
        )));
    }
    let m = kind.vertex_count(d);
    let mut data = vec![0.0; m * d];
    match kind {
        PolytopeKind::Simplex => {
            // v_i = s*e_i + c*1 for i < d, apex = -(1/sqrt(d))*1. Unit norms,
            // zero sum and pairwise dot -1/d pin s and c.
            let df = d as f64;
            let s = (1.0 + 1.0 / df).sqrt();
            let c = (1.0 / df.sqrt() - s) / df;
            for i in 0..d {
                let row = &mut data[i * d..(i + 1) * d];
                for k in 0..d {
                    row[k] = c;
                }
                row[i] += s;
            }
            let apex = &mut data[d * d..(d + 1) * d];
            let t = -1.0 / df.sqrt();
            for k in 0..d {
                apex[k] = t;
            }
        }
        PolytopeKind::Orthoplex => {
            for i in 0..d {
                data[(2 * i) * d + i] = 1.0;
                data[(2 * i + 1) * d + i] = -1.0;
            }
        }
        PolytopeKind::Cube => {
            let scale = 1.0 / (d as f64).sqrt();
            for idx in 0..m {
                let row = &mut data[idx * d..(idx + 1) * d];
                for k in 0..d {
                    let bit = (idx >> (d - 1 - k)) & 1;
                    row[k] = if bit == 0 { scale } else { -scale };
                }
            }
        }
    }
    DirectionSet::from_flat(d, data)
}

/// Tabulated closed-form reference value for the cosine measure of each
/// family: 1/sqrt(d(d+1)) for the simplex, 1/sqrt(d) for the orthoplex, and
/// 1/sqrt(2) for the cube. For the cube this constant matches the attained
/// measure only at d = 2; see [`attained_cosine_measure`] for the sharp
/// value.
pub fn reference_cosine_measure(kind: PolytopeKind, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::UnsupportedDimension(format!(
            "cosine measures need dimension >= 2, got {d}"
        )));
    }
    let df = d as f64;
    Ok(match kind {
        PolytopeKind::Simplex => 1.0 / (df * (df + 1.0)).sqrt(),
        PolytopeKind::Orthoplex => 1.0 / df.sqrt(),
        PolytopeKind::Cube => 1.0 / 2.0f64.sqrt(),
    })
}

/// Exact cosine measure attained by the vertex direction set.
///
/// Simplex: the worst query direction is the negated vertex -v_j, where every
/// other vertex scores exactly 1/d. Orthoplex: the worst direction is the
/// all-ones diagonal with max_i |a_i| = 1/sqrt(d). Cube: max over sign
/// patterns of <a, v> equals ||a||_1/sqrt(d), minimized at a basis vector,
/// giving 1/sqrt(d) for every d (not 1/sqrt(2)).
pub fn attained_cosine_measure(kind: PolytopeKind, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::UnsupportedDimension(format!(
            "cosine measures need dimension >= 2, got {d}"
        )));
    }
    let df = d as f64;
    Ok(match kind {
        PolytopeKind::Simplex => 1.0 / df,
        PolytopeKind::Orthoplex => 1.0 / df.sqrt(),
        PolytopeKind::Cube => 1.0 / df.sqrt(),
    })
}

/// Monte-Carlo estimate of the cosine measure: the minimum over `trials`
/// random unit queries of the best dot product against the set. The estimate
/// can only overshoot the attained measure, never undershoot it.
pub fn empirical_cosine_measure(dirs: &DirectionSet, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let d = dirs.dim();
    let mut gen = rng::derive(seed, rng::STREAM_ESTIMATOR);
    let mut a = vec![0.0; d];
    let mut best = f64::INFINITY;
    for _ in 0..trials {
        loop {
            let mut norm2 = 0.0f64;
            for x in a.iter_mut() {
                *x = gen.sample(StandardNormal);
                norm2 += *x * *x;
            }
            if norm2.sqrt() > 1e-9 {
                let inv = 1.0 / norm2.sqrt();
                for x in a.iter_mut() {
                    *x *= inv;
                }
                break;
            }
        }
        let mut max_dot = f64::NEG_INFINITY;
        for i in 0..dirs.len() {
            let row = dirs.row(i);
            let mut dot = 0.0;
            for k in 0..d {
                dot += a[k] * row[k];
            }
            max_dot = max_dot.max(dot);
        }
        best = best.min(max_dot);
    }
    Ok(best)
}

/// Orthogonal matrix built from independent planar rotations, row-major d x d.
#[derive(Debug, Clone)]
pub struct RotationMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl RotationMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Applies the rotation to a single vector: out = R * x.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
    }
}

/// Block-diagonal random rotation: coordinates are paired (0,1), (2,3), ...
/// and each pair receives an independent planar rotation with angle uniform
/// in [0, 2pi). Only even dimensions are supported.
pub fn random_rotation(d: usize, gen: &mut impl Rng) -> Result<RotationMatrix> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::UnsupportedDimension(format!(
            "block-planar rotations need an even dimension >= 2, got {d}"
        )));
    }
    let mut data = vec![0.0; d * d];
    for l in 0..d / 2 {
        let theta = gen.gen::<f64>() * TAU;
        let (sin, cos) = theta.sin_cos();
        let r = 2 * l;
        data[r * d + r] = cos;
        data[r * d + r + 1] = -sin;
        data[(r + 1) * d + r] = sin;
        data[(r + 1) * d + r + 1] = cos;
    }
    Ok(RotationMatrix { dim: d, data })
}

/// Rotates every direction: row i of the result is R * d_i.
pub fn rotate(dirs: &DirectionSet, rot: &RotationMatrix) -> Result<DirectionSet> {
    if dirs.dim() != rot.dim() {
        return Err(Error::DimensionMismatch(format!(
            "directions have dimension {} but rotation has {}",
            dirs.dim(),
            rot.dim()
        )));
    }
    let d = dirs.dim();
    let mut data = vec![0.0; dirs.len() * d];
    for i in 0..dirs.len() {
        rot.apply(dirs.row(i), &mut data[i * d..(i + 1) * d]);
    }
    DirectionSet::from_flat(d, data)
}

/// Probe offsets along every direction: radii r_j = j*beta/h for j = 1..h,
/// point (i, j) = r_j * d_i, stored row-major m x h x d.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    dim: usize,
    num_directions: usize,
    radii: Vec<f64>,
    points: Vec<f64>,
}

impl ProbeSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_directions(&self) -> usize {
        self.num_directions
    }

    pub fn num_probes(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Probe `j` along direction `i`.
    pub fn point(&self, i: usize, j: usize) -> &[f64] {
        let h = self.radii.len();
        let start = (i * h + j) * self.dim;
        &self.points[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }
}

/// Evenly spaced probe radii out to `beta` along each direction.
pub fn probe_points(dirs: &DirectionSet, h: usize, beta: f64) -> Result<ProbeSet> {
    if h == 0 {
        return Err(Error::InvalidInput("probe count must be at least 1".into()));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "probe radius must be positive and finite, got {beta}"
        )));
    }
    let radii = probe_radii(h, beta);
    let d = dirs.dim();
    let m = dirs.len();
    let mut points = vec![0.0; m * h * d];
    for i in 0..m {
        let row = dirs.row(i);
        for (j, &r) in radii.iter().enumerate() {
            let dst = &mut points[(i * h + j) * d..(i * h + j + 1) * d];
            for k in 0..d {
                dst[k] = r * row[k];
            }
        }
    }
    Ok(ProbeSet {
        dim: d,
        num_directions: m,
        radii,
        points,
    })
}

/// The radii used by [`probe_points`], exposed for fused evaluation loops.
pub fn probe_radii(h: usize, beta: f64) -> Vec<f64> {
    (1..=h).map(|j| j as f64 * beta / h as f64).collect()
}
