//! Entropic optimal transport.
//!
//! Solves min_{W in U(n,m)} <W,C> - lambda*H(W) over couplings W whose row
//! sums equal the source histogram and whose column sums equal the
//! destination histogram, with H the entropy of W. The solver is a
//! log-stabilized Sinkhorn iteration: scaling vectors are folded into the
//! kernel exponent whenever they grow past an absorption threshold, so small
//! regularization weights stay inside f64 range.
//!
//! Convergence is declared on the marginal residual in the max norm, checked
//! once per iteration.

use crate::error::{Error, Result};

/// Dense cost matrix with finite entries, row-major.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Builds from a row-major buffer of length `nrows * ncols`.
    pub fn from_flat(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if nrows == 0 || ncols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "cost matrix must be non-empty, got {nrows}x{ncols}"
            )));
        }
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch(format!(
                "cost buffer has {} entries, expected {}",
                data.len(),
                nrows * ncols
            )));
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "cost entry at ({}, {}) is {}",
                idx / ncols,
                idx % ncols,
                data[idx]
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::DimensionMismatch("no rows".into()));
        }
        let ncols = rows[0].len();
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_flat(rows.len(), ncols, data)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Strictly positive weights summing to one.
#[derive(Debug, Clone)]
pub struct Histogram {
    w: Vec<f64>,
}

impl Histogram {
    /// Validates positivity and unit mass (within 1e-12).
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::DimensionMismatch("empty histogram".into()));
        }
        if let Some(idx) = w.iter().position(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "histogram entry {} is {}, must be finite and positive",
                idx, w[idx]
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "histogram mass is {sum}, must be 1 within 1e-12"
            )));
        }
        Ok(Self { w })
    }

    /// Uniform weights 1/n.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::DimensionMismatch("empty histogram".into()));
        }
        Ok(Self {
            w: vec![1.0 / n as f64; n],
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

/// Solver knobs. `absorb_threshold` is the scaling-vector magnitude that
/// triggers folding the scalings into the kernel exponent; it must exceed 1.
/// `checks_per_iter` of 1 checks absorption after the column update, 2 also
/// checks after the row update.
#[derive(Debug, Clone)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub absorb_threshold: f64,
    pub checks_per_iter: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iters: 1000,
            tol: 1e-5,
            absorb_threshold: 1e3,
            checks_per_iter: 1,
        }
    }
}

impl SinkhornConfig {
    /// Variant for cost matrices already shifted into [0, 1]. With that range
    /// and lambda >= 0.01 every kernel exponent stays below ~100, far inside
    /// f64 headroom, so the absorption threshold can sit high enough that the
    /// kernel is built once instead of being rebuilt every iteration.
    /// Absorption still fires as a safety valve in the extreme tail.
    pub fn for_unit_range_costs(lambda: f64) -> Self {
        Self {
            lambda,
            absorb_threshold: 1e100,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tol must be positive and finite, got {}",
                self.tol
            )));
        }
        if !(self.absorb_threshold.is_finite() && self.absorb_threshold > 1.0) {
            return Err(Error::InvalidInput(format!(
                "absorb_threshold must exceed 1, got {}",
                self.absorb_threshold
            )));
        }
        if self.checks_per_iter == 0 || self.checks_per_iter > 2 {
            return Err(Error::InvalidInput(
                "checks_per_iter must be 1 or 2".into(),
            ));
        }
        Ok(())
    }
}

/// Solver output. `coupling` is row-major n x m.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    nrows: usize,
    ncols: usize,
    coupling: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub residual: f64,
}

impl TransportPlan {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coupling[i * self.ncols..(i + 1) * self.ncols]
    }
}

/// State of the stabilized iteration; `kernel[t,j] = exp((a[t]+b[j]-C[t,j])/lambda)`.
struct Stabilized<'a> {
    cost: &'a [f64],
    n: usize,
    m: usize,
    lambda: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    kernel: Vec<f64>,
}

impl<'a> Stabilized<'a> {
    fn new(cost: &'a [f64], n: usize, m: usize, lambda: f64) -> Result<Self> {
        let mut s = Self {
            cost,
            n,
            m,
            lambda,
            a: vec![0.0; n],
            b: vec![0.0; m],
            kernel: vec![0.0; n * m],
        };
        s.rebuild(0)?;
        Ok(s)
    }

    fn rebuild(&mut self, iteration: usize) -> Result<()> {
        let inv_lambda = 1.0 / self.lambda;
        for t in 0..self.n {
            let at = self.a[t];
            let row = &mut self.kernel[t * self.m..(t + 1) * self.m];
            let crow = &self.cost[t * self.m..(t + 1) * self.m];
            for j in 0..self.m {
                let k = ((at + self.b[j] - crow[j]) * inv_lambda).exp();
                if !k.is_finite() {
                    return Err(Error::NumericalDivergence {
                        iteration,
                        detail: format!(
                            "stabilized kernel overflow at ({t}, {j}) despite absorption"
                        ),
                    });
                }
                row[j] = k;
            }
        }
        Ok(())
    }

    /// out[t] = sum_j kernel[t,j] * v[j]
    fn mul_v(&self, v: &[f64], out: &mut [f64]) {
        for t in 0..self.n {
            let row = &self.kernel[t * self.m..(t + 1) * self.m];
            let mut acc = 0.0;
            for j in 0..self.m {
                acc += row[j] * v[j];
            }
            out[t] = acc;
        }
    }

    /// out[j] = sum_t kernel[t,j] * u[t], streamed by rows.
    fn mul_u(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for t in 0..self.n {
            let row = &self.kernel[t * self.m..(t + 1) * self.m];
            let ut = u[t];
            for j in 0..self.m {
                out[j] += ut * row[j];
            }
        }
    }

    /// Folds scalings into the exponent and resets them to one.
    fn absorb(&mut self, ut: &mut [f64], vt: &mut [f64], iteration: usize) -> Result<()> {
        for t in 0..self.n {
            self.a[t] += self.lambda * ut[t].ln();
            ut[t] = 1.0;
        }
        for j in 0..self.m {
            self.b[j] += self.lambda * vt[j].ln();
            vt[j] = 1.0;
        }
        self.rebuild(iteration)
    }
}

/// Floors `x` at the smallest positive normal, counting hits.
fn floor_positive(x: &mut [f64], hits: &mut usize) {
    for v in x.iter_mut() {
        if *v < f64::MIN_POSITIVE {
            *v = f64::MIN_POSITIVE;
            *hits += 1;
        }
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Solves the entropic transport problem between `src` and `dst` under cost
/// `cost`. Returns the coupling along with iteration and convergence data;
/// when `max_iters` is exhausted the best current coupling is returned with
/// `converged` false.
pub fn solve_entropic_ot(
    cost: &CostMatrix,
    src: &Histogram,
    dst: &Histogram,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    let (n, m) = (cost.nrows(), cost.ncols());
    if src.len() != n || dst.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "cost is {n}x{m} but histograms have {} and {} entries",
            src.len(),
            dst.len()
        )));
    }
    let src = src.as_slice();
    let dst = dst.as_slice();

    let mut stab = Stabilized::new(cost.as_slice(), n, m, cfg.lambda)?;
    let mut ut = vec![1.0; n];
    let mut vt = vec![1.0; m];
    // Kernel-vector products; pv starts as the kernel row sums (vt is one).
    let mut pv = vec![0.0; n];
    let mut ptu = vec![0.0; m];
    let mut pv_next = vec![0.0; n];
    stab.mul_v(&vt, &mut pv);

    let mut iterations_used = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;

    for iter in 1..=cfg.max_iters {
        iterations_used = iter;
        let mut floor_hits = 0usize;

        floor_positive(&mut pv, &mut floor_hits);
        for t in 0..n {
            ut[t] = src[t] / pv[t];
        }
        if cfg.checks_per_iter == 2 && max_abs(&ut) > cfg.absorb_threshold {
            stab.absorb(&mut ut, &mut vt, iter)?;
            stab.mul_v(&vt, &mut pv);
            floor_positive(&mut pv, &mut floor_hits);
            for t in 0..n {
                ut[t] = src[t] / pv[t];
            }
        }

        stab.mul_u(&ut, &mut ptu);
        floor_positive(&mut ptu, &mut floor_hits);
        for j in 0..m {
            vt[j] = dst[j] / ptu[j];
        }

        if floor_hits > n * m {
            return Err(Error::NumericalDivergence {
                iteration: iter,
                detail: format!("{floor_hits} kernel products vanished in one iteration"),
            });
        }

        // Column sums are vt .* ptu by construction; row sums need the
        // kernel applied to the fresh vt, which doubles as next iteration's
        // product.
        stab.mul_v(&vt, &mut pv_next);
        let mut row_res = 0.0f64;
        for t in 0..n {
            row_res = row_res.max((ut[t] * pv_next[t] - src[t]).abs());
        }
        let mut col_res = 0.0f64;
        for j in 0..m {
            col_res = col_res.max((vt[j] * ptu[j] - dst[j]).abs());
        }
        residual = row_res.max(col_res);

        if residual.is_finite() && residual <= cfg.tol {
            converged = true;
            break;
        }

        if max_abs(&ut) > cfg.absorb_threshold || max_abs(&vt) > cfg.absorb_threshold {
            stab.absorb(&mut ut, &mut vt, iter)?;
            stab.mul_v(&vt, &mut pv);
        } else {
            std::mem::swap(&mut pv, &mut pv_next);
        }
    }

    let mut coupling = vec![0.0; n * m];
    for t in 0..n {
        let krow = &stab.kernel[t * m..(t + 1) * m];
        let wrow = &mut coupling[t * m..(t + 1) * m];
        let u = ut[t];
        for j in 0..m {
            wrow[j] = u * krow[j] * vt[j];
        }
    }
    if coupling.iter().any(|w| !w.is_finite()) {
        return Err(Error::NumericalDivergence {
            iteration: iterations_used,
            detail: "coupling contains non-finite entries".into(),
        });
    }

    Ok(TransportPlan {
        nrows: n,
        ncols: m,
        coupling,
        iterations_used,
        converged,
        residual,
    })
}

/// Transport objective <W, C>.
pub fn ot_objective(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    if plan.nrows() != cost.nrows() || plan.ncols() != cost.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "plan is {}x{} but cost is {}x{}",
            plan.nrows(),
            plan.ncols(),
            cost.nrows(),
            cost.ncols()
        )));
    }
    Ok(plan
        .coupling
        .iter()
        .zip(cost.as_slice())
        .map(|(w, c)| w * c)
        .sum())
}

/// Max-norm feasibility violation of a coupling against its marginals.
pub fn marginal_residual(plan: &TransportPlan, src: &Histogram, dst: &Histogram) -> Result<f64> {
    let (n, m) = (plan.nrows(), plan.ncols());
    if src.len() != n || dst.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "plan is {n}x{m} but histograms have {} and {} entries",
            src.len(),
            dst.len()
        )));
    }
    let mut col_sums = vec![0.0f64; m];
    let mut row_res = 0.0f64;
    for t in 0..n {
        let row = plan.row(t);
        let mut rs = 0.0;
        for j in 0..m {
            rs += row[j];
            col_sums[j] += row[j];
        }
        row_res = row_res.max((rs - src.as_slice()[t]).abs());
    }
    let mut col_res = 0.0f64;
    for j in 0..m {
        col_res = col_res.max((col_sums[j] - dst.as_slice()[j]).abs());
    }
    Ok(row_res.max(col_res))
}
