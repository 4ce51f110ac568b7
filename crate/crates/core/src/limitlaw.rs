//! Limiting singular value laws.
//!
//! The symmetrized limit law has Stieltjes transform `s(z) = sum_b w_b a_b(z)`
//! where the block resolvents solve
//!
//! ```text
//! 1 / a_b(z) = z - sum_c C[b][c] a_c(z),      Im a_b(z) < 0,
//! ```
//!
//! for a nonnegative coupling `C`. For a step graphon with block widths
//! `w` and values `W`, `C[b][c] = w_c W[b][c]`. The frequency-matrix and
//! transition-matrix laws are the `2K`-block instances built from the chain
//! parameters. Densities are recovered from `-Im s(x + i eps) / pi`.
//!
//! The solver runs the damped iteration `a <- (1 - d) a + d F(a)` starting
//! from `a = 1/z`, which maps the lower half-plane into itself. Near the real
//! axis that iteration contracts slowly, so each step first tries a
//! backtracking Newton update on `a_b (z - (C a)_b) - 1 = 0` and keeps it only
//! when it lowers the residual and leaves every `Im a_b <= 0`. The solution
//! with negative imaginary parts is unique, so the acceleration cannot change
//! which fixed point is selected.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::BlockModel;

pub type C64 = Complex<f64>;

/// Piecewise-constant symmetric kernel on `[0,1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGraphon {
    boundaries: Vec<f64>,
    values: DMatrix<f64>,
}

impl StepGraphon {
    pub fn new(boundaries: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        let b = values.nrows();
        if b == 0 || values.ncols() != b {
            return Err(Error::InvalidArgument(
                "graphon values must be a nonempty square matrix".into(),
            ));
        }
        if boundaries.len() != b + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} blocks need {} boundaries, got {}",
                b,
                b + 1,
                boundaries.len()
            )));
        }
        if boundaries[0].abs() > 1e-12 || (boundaries[b] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "boundaries must run from 0 to 1".into(),
            ));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "boundaries must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "graphon values must be finite and nonnegative".into(),
            ));
        }
        if values != values.transpose() {
            return Err(Error::InvalidArgument(
                "graphon values must be symmetric".into(),
            ));
        }
        Ok(Self { boundaries, values })
    }

    /// Graphon from block widths summing to one.
    pub fn from_widths(widths: &[f64], values: DMatrix<f64>) -> Result<Self> {
        let mut boundaries = Vec::with_capacity(widths.len() + 1);
        let mut acc = 0.0;
        boundaries.push(0.0);
        for w in widths {
            acc += w;
            boundaries.push(acc);
        }
        if let Some(last) = boundaries.last_mut() {
            if (*last - 1.0).abs() < 1e-12 {
                *last = 1.0;
            }
        }
        Self::new(boundaries, values)
    }

    pub fn blocks(&self) -> usize {
        self.values.nrows()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn widths(&self) -> Vec<f64> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `W(x, y)`, right-continuous with the last block closed.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.values[(self.block_of(x), self.block_of(y))]
    }

    fn block_of(&self, x: f64) -> usize {
        let b = self.boundaries.partition_point(|&c| c <= x);
        b.clamp(1, self.blocks()) - 1
    }
}

/// Interleaved `2K`-block layout shared by both chain graphons: block `i`
/// (rows of cluster `i`) and block `K + i` (columns of cluster `i`), each of
/// width `alpha_i / 2`. `upper(i, j)` fills block `(i, K + j)` and its mirror.
fn dilated_graphon(model: &BlockModel, upper: impl Fn(usize, usize) -> f64) -> StepGraphon {
    let k = model.k();
    let mut values = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        for j in 0..k {
            let v = upper(i, j);
            values[(i, k + j)] = v;
            values[(k + j, i)] = v;
        }
    }
    let widths: Vec<f64> = model
        .alpha()
        .iter()
        .chain(model.alpha())
        .map(|a| a / 2.0)
        .collect();
    StepGraphon::from_widths(&widths, values).expect("chain graphons are valid by construction")
}

/// Limiting variance profile of `sqrt(2) H(N - E N)`: block `(i, K + j)`
/// holds `2 lambda pi(i) p[i][j] / (alpha_i alpha_j)`.
pub fn graphon_wm(model: &BlockModel) -> StepGraphon {
    let (a, pi, l) = (model.alpha(), model.pi(), model.lambda());
    dilated_graphon(model, |i, j| {
        2.0 * l * pi[i] * model.p_entry(i, j) / (a[i] * a[j])
    })
}

/// Limiting variance profile of `sqrt(2) H(n Q)`: block `(i, K + j)` holds
/// `2 alpha_i p[i][j] / (lambda pi(i) alpha_j)`.
pub fn graphon_wq(model: &BlockModel) -> StepGraphon {
    let (a, pi, l) = (model.alpha(), model.pi(), model.lambda());
    dilated_graphon(model, |i, j| {
        2.0 * a[i] * model.p_entry(i, j) / (l * pi[i] * a[j])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Allow Newton acceleration steps.
    pub newton: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            damping: 0.5,
            newton: true,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Block resolvents at one point of the upper half-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSolution {
    pub z: C64,
    pub a: Vec<C64>,
    pub s: C64,
    pub residual: f64,
    pub iterations: usize,
}

/// The self-consistent system `1/a_b = z - (C a)_b` with output weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSystem {
    coupling: DMatrix<f64>,
    weights: Vec<f64>,
}

impl ResolventSystem {
    pub fn new(coupling: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let b = weights.len();
        if b == 0 || coupling.nrows() != b || coupling.ncols() != b {
            return Err(Error::InvalidArgument(
                "coupling must be square and match the weights".into(),
            ));
        }
        if coupling
            .iter()
            .chain(&weights)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidArgument(
                "coupling and weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { coupling, weights })
    }

    /// `C[b][c] = w_c W[b][c]`, output weights `w`.
    pub fn from_graphon(graphon: &StepGraphon) -> Self {
        let w = graphon.widths();
        let coupling = DMatrix::from_fn(graphon.blocks(), graphon.blocks(), |b, c| {
            w[c] * graphon.values()[(b, c)]
        });
        Self {
            coupling,
            weights: w,
        }
    }

    /// System for the singular values of `N / sqrt(n)`:
    /// `1/a_i = z - sum_j lambda pi(i) p[i][j] / alpha_i a_{K+j}` and
    /// `1/a_{K+i} = z - sum_j lambda pi(j) p[j][i] / alpha_i a_j`.
    pub fn theorem_n(model: &BlockModel) -> Self {
        let (a, pi, l) = (model.alpha(), model.pi(), model.lambda());
        Self::chain_system(
            model,
            |i, j| l * pi[i] * model.p_entry(i, j) / a[i],
            |i, j| l * pi[j] * model.p_entry(j, i) / a[i],
        )
    }

    /// System for the singular values of `sqrt(n) P`:
    /// `1/a_i = z - sum_j alpha_i p[i][j] / (lambda pi(i)) a_{K+j}` and
    /// `1/a_{K+i} = z - sum_j alpha_j^2 p[j][i] / (lambda pi(j) alpha_i) a_j`.
    pub fn theorem_p(model: &BlockModel) -> Self {
        let (a, pi, l) = (model.alpha(), model.pi(), model.lambda());
        Self::chain_system(
            model,
            |i, j| a[i] * model.p_entry(i, j) / (l * pi[i]),
            |i, j| a[j] * a[j] * model.p_entry(j, i) / (l * pi[j] * a[i]),
        )
    }

    fn chain_system(
        model: &BlockModel,
        row: impl Fn(usize, usize) -> f64,
        col: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let k = model.k();
        let mut coupling = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            for j in 0..k {
                coupling[(i, k + j)] = row(i, j);
                coupling[(k + i, j)] = col(i, j);
            }
        }
        let weights = model
            .alpha()
            .iter()
            .chain(model.alpha())
            .map(|a| a / 2.0)
            .collect();
        Self { coupling, weights }
    }

    pub fn blocks(&self) -> usize {
        self.weights.len()
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Radius `2 sqrt(max_b sum_c C[b][c])` containing the support.
    pub fn support_bound(&self) -> f64 {
        let row_max = self
            .coupling
            .row_iter()
            .map(|r| r.sum())
            .fold(0.0f64, f64::max);
        2.0 * row_max.sqrt()
    }

    /// `z - (C a)_b` for every block.
    fn field(&self, z: C64, a: &[C64]) -> Vec<C64> {
        (0..a.len())
            .map(|b| {
                let mut acc = z;
                for (c, ac) in a.iter().enumerate() {
                    let w = self.coupling[(b, c)];
                    if w != 0.0 {
                        acc -= *ac * w;
                    }
                }
                acc
            })
            .collect()
    }

    fn residual(&self, z: C64, a: &[C64]) -> f64 {
        self.field(z, a)
            .iter()
            .zip(a)
            .map(|(f, x)| (x * f - 1.0).norm())
            .fold(0.0, f64::max)
    }

    fn stieltjes(&self, a: &[C64]) -> C64 {
        a.iter().zip(&self.weights).map(|(x, w)| x * *w).sum()
    }

    /// Solves at `z` starting from `1/z`.
    pub fn solve(&self, z: C64, cfg: &SolverConfig) -> Result<ResolventSolution> {
        self.solve_from(z, cfg, None)
    }

    /// Solves at `z` from an optional warm start. A warm start that is not
    /// in the lower half-plane is ignored.
    pub fn solve_from(
        &self,
        z: C64,
        cfg: &SolverConfig,
        warm: Option<&[C64]>,
    ) -> Result<ResolventSolution> {
        cfg.validate()?;
        if !(z.im > 0.0) || !z.re.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "z = {z} is not in the upper half-plane"
            )));
        }
        let cold = vec![z.inv(); self.blocks()];
        let mut a = match warm {
            Some(w) if w.len() == self.blocks() && admissible(w) => w.to_vec(),
            _ => cold.clone(),
        };
        let mut damping = cfg.damping;
        let mut iterations = 0;
        loop {
            let field = self.field(z, &a);
            let residual = residual_of(&field, &a);
            if residual < cfg.tol {
                return Ok(ResolventSolution {
                    z,
                    s: self.stieltjes(&a),
                    a,
                    residual,
                    iterations,
                });
            }
            if iterations >= cfg.max_iter || !residual.is_finite() {
                return Err(Error::NoConvergence {
                    residual,
                    iterations,
                });
            }
            iterations += 1;
            if cfg.newton {
                if let Some(next) = self.newton_step(z, &a, &field, residual) {
                    a = next;
                    continue;
                }
            }
            for (x, f) in a.iter_mut().zip(&field) {
                *x = *x * (1.0 - damping) + f.inv() * damping;
            }
            if !admissible(&a) {
                damping *= 0.5;
                a = cold.clone();
            }
        }
    }

    /// Backtracking Newton update, or `None` if no step length in
    /// `{1, 1/2, ..., 1/64}` lowers the residual inside the lower half-plane.
    fn newton_step(&self, z: C64, a: &[C64], field: &[C64], residual: f64) -> Option<Vec<C64>> {
        let b = a.len();
        let jac = DMatrix::from_fn(b, b, |r, c| {
            let diag = if r == c { field[r] } else { C64::new(0.0, 0.0) };
            diag - a[r] * self.coupling[(r, c)]
        });
        let rhs = DVector::from_iterator(b, a.iter().zip(field).map(|(x, f)| -(x * f - 1.0)));
        let delta = jac.lu().solve(&rhs)?;
        let mut t = 1.0;
        for _ in 0..7 {
            let trial: Vec<C64> = a.iter().zip(delta.iter()).map(|(x, d)| x + d * t).collect();
            if admissible(&trial) && self.residual(z, &trial) < residual {
                return Some(trial);
            }
            t *= 0.5;
        }
        None
    }

    /// Solves at `z` by descending from a point high above the real axis,
    /// warm-starting each stage from the previous one.
    pub fn solve_continued(&self, z: C64, cfg: &SolverConfig) -> Result<ResolventSolution> {
        let top = (self.support_bound() + 1.0).max(1.0);
        let mut heights = Vec::new();
        let mut h = top;
        while h > z.im {
            heights.push(h);
            h *= 0.5;
        }
        let mut warm: Option<Vec<C64>> = None;
        let mut iterations = 0;
        for h in heights {
            let sol = self.solve_from(C64::new(z.re, h), cfg, warm.as_deref())?;
            iterations += sol.iterations;
            warm = Some(sol.a);
        }
        let mut sol = self.solve_from(z, cfg, warm.as_deref())?;
        sol.iterations += iterations;
        Ok(sol)
    }
}

fn residual_of(field: &[C64], a: &[C64]) -> f64 {
    field
        .iter()
        .zip(a)
        .map(|(f, x)| (x * f - 1.0).norm())
        .fold(0.0, f64::max)
}

fn admissible(a: &[C64]) -> bool {
    a.iter()
        .all(|x| x.re.is_finite() && x.im.is_finite() && x.im <= 1e-14 * x.norm())
}

/// Solves the graphon self-consistent equation at `z`.
pub fn solve_resolvent(
    graphon: &StepGraphon,
    z: C64,
    cfg: &SolverConfig,
) -> Result<ResolventSolution> {
    ResolventSystem::from_graphon(graphon).solve(z, cfg)
}

/// Solves the frequency-matrix system at `z`.
pub fn solve_theorem_n(
    model: &BlockModel,
    z: C64,
    cfg: &SolverConfig,
) -> Result<ResolventSolution> {
    ResolventSystem::theorem_n(model).solve(z, cfg)
}

/// Solves the transition-matrix system at `z`.
pub fn solve_theorem_p(
    model: &BlockModel,
    z: C64,
    cfg: &SolverConfig,
) -> Result<ResolventSolution> {
    ResolventSystem::theorem_p(model).solve(z, cfg)
}

/// How the `eps -> 0` limit in the inversion formula is approximated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Inversion {
    /// Evaluate at a single offset.
    Fixed(f64),
    /// Evaluate at several offsets and take the intercept of the
    /// least-squares line in `eps`.
    Richardson(Vec<f64>),
}

impl Default for Inversion {
    fn default() -> Self {
        Self::Richardson(vec![4e-3, 2e-3, 1e-3])
    }
}

impl Inversion {
    fn offsets(&self) -> Vec<f64> {
        match self {
            Self::Fixed(e) => vec![*e],
            Self::Richardson(es) => es.clone(),
        }
    }
}

/// Grid points are solved in order with warm starts, or independently
/// (in parallel) by continuation from above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sweep {
    #[default]
    WarmStart,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointDiagnostics {
    pub x: f64,
    pub epsilon: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Density sampled on a grid with its trapezoidal CDF.
///
/// Unfolded densities describe the symmetrized law on the real line;
/// folded ones describe the singular value law on `x >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDensity {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub folded: bool,
    pub diagnostics: Vec<PointDiagnostics>,
}

const DENSITY_FLOOR: f64 = -1e-8;

impl SpectralDensity {
    pub fn new(grid: Vec<f64>, density: Vec<f64>, epsilon: Vec<f64>, folded: bool) -> Result<Self> {
        if grid.len() != density.len() || grid.len() < 2 {
            return Err(Error::InvalidArgument(
                "density needs at least two grid points".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "grid must be strictly increasing".into(),
            ));
        }
        if density.iter().any(|d| !d.is_finite() || *d < DENSITY_FLOOR) {
            return Err(Error::NumericalFailure(
                "density is negative or non-finite".into(),
            ));
        }
        let density: Vec<f64> = density.into_iter().map(|d| d.max(0.0)).collect();
        let cdf = trapezoid_cumulative(&grid, &density);
        Ok(Self {
            grid,
            density,
            cdf,
            epsilon,
            folded,
            diagnostics: Vec::new(),
        })
    }

    /// Total mass on the grid.
    pub fn mass(&self) -> f64 {
        self.cdf.last().copied().unwrap_or(0.0)
    }

    /// Singular value density `2 rho(x)` on the nonnegative grid points.
    pub fn fold(&self) -> Result<Self> {
        if self.folded {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.grid.len())
            .filter(|&i| self.grid[i] >= 0.0)
            .collect();
        let grid = keep.iter().map(|&i| self.grid[i]).collect();
        let density = keep.iter().map(|&i| 2.0 * self.density[i]).collect();
        let mut out = Self::new(grid, density, self.epsilon.clone(), true)?;
        out.diagnostics = self
            .diagnostics
            .iter()
            .filter(|d| d.x >= 0.0)
            .cloned()
            .collect();
        Ok(out)
    }

    /// Mirror of a folded density: `rho(x) = rho_fold(|x|) / 2`.
    pub fn unfold(&self) -> Result<Self> {
        if !self.folded {
            return Ok(self.clone());
        }
        let start = usize::from(self.grid[0] == 0.0);
        let mut grid: Vec<f64> = self.grid[start..].iter().rev().map(|x| -x).collect();
        let mut density: Vec<f64> = self.density[start..]
            .iter()
            .rev()
            .map(|d| d / 2.0)
            .collect();
        grid.extend_from_slice(&self.grid);
        density.extend(self.density.iter().map(|d| d / 2.0));
        Self::new(grid, density, self.epsilon.clone(), false)
    }

    /// Right end of the support: the grid point after the last density
    /// value above `1e-4`, provided at least ten grid points below the
    /// threshold follow it.
    pub fn support_edge(&self) -> Option<f64> {
        const THRESHOLD: f64 = 1e-4;
        let last = self.density.iter().rposition(|&d| d >= THRESHOLD)?;
        let below = self.density.len() - 1 - last;
        (below >= 10).then(|| self.grid[last + 1])
    }
}

fn trapezoid_cumulative(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    out.push(0.0);
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
        out.push(acc);
    }
    out
}

/// Density of the symmetrized law on `grid` by Stieltjes inversion.
pub fn invert_density(
    system: &ResolventSystem,
    grid: &[f64],
    inversion: &Inversion,
    cfg: &SolverConfig,
    sweep: Sweep,
) -> Result<SpectralDensity> {
    let offsets = inversion.offsets();
    if offsets.is_empty() || offsets.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument(
            "inversion offsets must be positive".into(),
        ));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "grid must be strictly increasing".into(),
        ));
    }
    let mut per_offset = Vec::with_capacity(offsets.len());
    let mut diagnostics = Vec::new();
    let mut failed = Vec::new();
    for &eps in &offsets {
        let results = sweep_offset(system, grid, eps, cfg, sweep);
        let mut values = Vec::with_capacity(grid.len());
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(sol) => {
                    diagnostics.push(PointDiagnostics {
                        x: grid[i],
                        epsilon: eps,
                        residual: sol.residual,
                        iterations: sol.iterations,
                    });
                    values.push(-sol.s.im / std::f64::consts::PI);
                }
                Err(_) => {
                    failed.push((i, grid[i]));
                    values.push(f64::NAN);
                }
            }
        }
        per_offset.push(values);
    }
    if !failed.is_empty() {
        failed.sort_by_key(|f| f.0);
        failed.dedup_by_key(|f| f.0);
        return Err(Error::InversionFailed { failed });
    }
    let density = (0..grid.len())
        .map(|i| {
            let ys: Vec<f64> = per_offset.iter().map(|v| v[i]).collect();
            let d = line_intercept(&offsets, &ys);
            // extrapolation overshoots slightly below zero outside the support
            if d < 0.0 {
                0.0
            } else {
                d
            }
        })
        .collect();
    let mut out = SpectralDensity::new(grid.to_vec(), density, offsets, false)?;
    out.diagnostics = diagnostics;
    Ok(out)
}

fn sweep_offset(
    system: &ResolventSystem,
    grid: &[f64],
    eps: f64,
    cfg: &SolverConfig,
    sweep: Sweep,
) -> Vec<Result<ResolventSolution>> {
    match sweep {
        Sweep::Independent => grid
            .par_iter()
            .map(|&x| system.solve_continued(C64::new(x, eps), cfg))
            .collect(),
        Sweep::WarmStart => {
            let mut out = Vec::with_capacity(grid.len());
            let mut warm: Option<Vec<C64>> = None;
            for &x in grid {
                let z = C64::new(x, eps);
                let sol = match &warm {
                    Some(w) => system
                        .solve_from(z, cfg, Some(w))
                        .or_else(|_| system.solve_continued(z, cfg)),
                    None => system.solve_continued(z, cfg),
                };
                warm = sol.as_ref().ok().map(|s| s.a.clone());
                out.push(sol);
            }
            out
        }
    }
}

/// Intercept at `x = 0` of the least-squares line through the points; the
/// single value itself when only one point is given.
fn line_intercept(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() == 1 {
        return ys[0];
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (sxx * sy - sx * sxy) / (n * sxx - sx * sx)
}

/// Singular value density on `points` equally spaced abscissae of
/// `[0, xmax]`; `xmax` defaults to 1.1 times the support bound.
pub fn singular_value_density(
    system: &ResolventSystem,
    xmax: Option<f64>,
    points: usize,
    inversion: &Inversion,
    cfg: &SolverConfig,
) -> Result<SpectralDensity> {
    if points < 2 {
        return Err(Error::InvalidArgument(
            "need at least two grid points".into(),
        ));
    }
    let xmax = xmax.unwrap_or_else(|| 1.1 * system.support_bound());
    if !(xmax > 0.0) {
        return Err(Error::InvalidArgument("xmax must be positive".into()));
    }
    let grid: Vec<f64> = (0..points)
        .map(|i| xmax * i as f64 / (points - 1) as f64)
        .collect();
    invert_density(system, &grid, inversion, cfg, Sweep::WarmStart)?.fold()
}

/// Piecewise-linear interpolant of the density's CDF, clamped to `[0, 1]`.
pub fn law_cdf(density: &SpectralDensity) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let grid = density.grid.clone();
    let cdf = density.cdf.clone();
    move |x: f64| {
        if x <= grid[0] {
            return if x < grid[0] {
                0.0
            } else {
                cdf[0].clamp(0.0, 1.0)
            };
        }
        let i = grid.partition_point(|&g| g <= x);
        if i >= grid.len() {
            return cdf[cdf.len() - 1].clamp(0.0, 1.0);
        }
        let t = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
        (cdf[i - 1] + t * (cdf[i] - cdf[i - 1])).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const I: C64 = C64::new(0.0, 1.0);

    fn fig1() -> BlockModel {
        BlockModel::figure_example(2.0).unwrap()
    }

    /// Stieltjes transform of the semicircle with variance `v`, branch with
    /// `s ~ 1/z` at infinity.
    fn semicircle(z: C64, v: f64) -> C64 {
        let r = (z * z - 4.0 * v).sqrt();
        let s = (z - r) / (2.0 * v);
        if s.im < 0.0 {
            s
        } else {
            (z + r) / (2.0 * v)
        }
    }

    #[test]
    fn wm_single_cluster() {
        let g = graphon_wm(&BlockModel::single_cluster(1.0).unwrap());
        assert_eq!(g.boundaries(), &[0.0, 0.5, 1.0]);
        assert_eq!(
            g.values(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0])
        );
    }

    #[test]
    fn wq_single_cluster() {
        let g = graphon_wq(&BlockModel::single_cluster(1.0).unwrap());
        assert_eq!(
            g.values(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0])
        );
        let g = graphon_wq(&BlockModel::single_cluster(4.0).unwrap());
        assert_eq!(
            g.values(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])
        );
    }

    #[test]
    fn chain_graphons_are_symmetric_with_zero_blocks() {
        let m = fig1();
        for g in [graphon_wm(&m), graphon_wq(&m)] {
            assert_eq!(g.values(), &g.values().transpose());
            // p[0][2] = 0
            assert_eq!(g.values()[(0, 5)], 0.0);
            assert_eq!(g.values()[(5, 0)], 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(g.values()[(i, j)], 0.0);
                    assert_eq!(g.values()[(3 + i, 3 + j)], 0.0);
                }
            }
            assert!((g.eval(0.1, 0.6) - g.eval(0.6, 0.1)).abs() < 1e-15);
        }
        let wm = graphon_wm(&m);
        let want = 2.0 * 2.0 * (27.0 / 46.0) * 0.1 / (0.5 * 0.4);
        assert!((wm.values()[(0, 4)] - want).abs() < 1e-14);
    }

    #[test]
    fn graphon_validation() {
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(StepGraphon::new(vec![0.0, 0.5, 1.0], v).is_err());
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(StepGraphon::new(vec![0.0, 0.6, 0.5], v.clone()).is_err());
        assert!(StepGraphon::new(vec![0.0, 1.0], v).is_err());
    }

    #[test]
    fn semicircle_at_i() {
        let g = graphon_wm(&BlockModel::single_cluster(1.0).unwrap());
        let sol = solve_resolvent(&g, I, &SolverConfig::default()).unwrap();
        let want = C64::new(0.0, (1.0 - 5f64.sqrt()) / 2.0);
        assert!((sol.s - want).norm() < 1e-10, "{}", sol.s);
        assert!((sol.s.im + 0.61803).abs() < 1e-5);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn semicircle_without_newton() {
        let g = graphon_wm(&BlockModel::single_cluster(1.0).unwrap());
        let cfg = SolverConfig {
            newton: false,
            ..Default::default()
        };
        let sol = solve_resolvent(&g, C64::new(0.7, 0.3), &cfg).unwrap();
        assert!((sol.s - semicircle(C64::new(0.7, 0.3), 1.0)).norm() < 1e-10);
    }

    #[test]
    fn far_field_is_one_over_z() {
        let g = graphon_wm(&fig1());
        let sol = solve_resolvent(&g, C64::new(0.0, 100.0), &SolverConfig::default()).unwrap();
        assert!((sol.s - C64::new(0.0, -0.01)).norm() < 1e-3);
    }

    #[test]
    fn zero_graphon_is_trivial() {
        let g = StepGraphon::from_widths(&[0.3, 0.7], DMatrix::zeros(2, 2)).unwrap();
        let z = C64::new(0.4, 0.2);
        let sol = solve_resolvent(&g, z, &SolverConfig::default()).unwrap();
        assert!(sol.a.iter().all(|a| *a == z.inv()));
        assert!((sol.s - z.inv()).norm() < 1e-15);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn theorem_forms_match_graphon_forms() {
        let m = fig1();
        let cfg = SolverConfig::default();
        let z = C64::new(0.5, 0.01);
        let a = solve_theorem_n(&m, z, &cfg).unwrap();
        let b = solve_resolvent(&graphon_wm(&m), z, &cfg).unwrap();
        assert!((a.s - b.s).norm() < 1e-10);
        let z = C64::new(1.0, 0.01);
        let a = solve_theorem_p(&m, z, &cfg).unwrap();
        let b = solve_resolvent(&graphon_wq(&m), z, &cfg).unwrap();
        assert!((a.s - b.s).norm() < 1e-10);
    }

    #[test]
    fn single_cluster_laws() {
        let one = BlockModel::single_cluster(1.0).unwrap();
        let cfg = SolverConfig::default();
        let n = solve_theorem_n(&one, I, &cfg).unwrap();
        let p = solve_theorem_p(&one, I, &cfg).unwrap();
        assert!((n.s - C64::new(0.0, -0.6180339887498949)).norm() < 1e-10);
        assert!((n.s - p.s).norm() < 1e-13);
    }

    #[test]
    fn signs_hold_on_a_grid() {
        let m = fig1();
        let cfg = SolverConfig::default();
        for sys in [
            ResolventSystem::theorem_n(&m),
            ResolventSystem::theorem_p(&m),
        ] {
            for re in [-4.0, -1.0, 0.0, 0.3, 1.5, 6.0] {
                for im in [1e-3, 0.1, 2.0] {
                    let sol = sys.solve_continued(C64::new(re, im), &cfg).unwrap();
                    assert!(sol.s.im < 0.0);
                    assert!(sol.a.iter().all(|a| a.im <= 0.0));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let sys = ResolventSystem::theorem_n(&fig1());
        assert!(sys
            .solve(C64::new(1.0, 0.0), &SolverConfig::default())
            .is_err());
        let bad = SolverConfig {
            damping: 0.0,
            ..Default::default()
        };
        assert!(sys.solve(I, &bad).is_err());
        let tight = SolverConfig {
            max_iter: 2,
            newton: false,
            ..Default::default()
        };
        assert!(matches!(
            sys.solve(C64::new(0.5, 1e-3), &tight),
            Err(Error::NoConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn quarter_circle_at_origin() {
        let sys = ResolventSystem::theorem_n(&BlockModel::single_cluster(1.0).unwrap());
        let d = invert_density(
            &sys,
            &[0.0, 0.5],
            &Inversion::default(),
            &SolverConfig::default(),
            Sweep::WarmStart,
        )
        .unwrap()
        .fold()
        .unwrap();
        assert!(
            (d.density[0] - 2.0 / std::f64::consts::PI).abs() < 1e-4,
            "{}",
            d.density[0]
        );
    }

    #[test]
    fn density_vanishes_outside_support() {
        let sys = ResolventSystem::theorem_n(&BlockModel::single_cluster(1.0).unwrap());
        let d = invert_density(
            &sys,
            &[9.0, 10.0],
            &Inversion::Fixed(1e-3),
            &SolverConfig::default(),
            Sweep::WarmStart,
        )
        .unwrap();
        assert!(d.density[1] < 1e-3);
    }

    #[test]
    fn symmetrized_density_is_even() {
        let sys = ResolventSystem::theorem_n(&fig1());
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
        let d = invert_density(
            &sys,
            &grid,
            &Inversion::default(),
            &SolverConfig::default(),
            Sweep::WarmStart,
        )
        .unwrap();
        let n = grid.len();
        for i in 0..n {
            assert!((d.density[i] - d.density[n - 1 - i]).abs() < 1e-10);
        }
    }

    #[test]
    fn warm_and_independent_sweeps_agree() {
        let sys = ResolventSystem::theorem_p(&fig1());
        let grid: Vec<f64> = (0..60).map(|i| i as f64 * 0.05).collect();
        let cfg = SolverConfig::default();
        let a = invert_density(&sys, &grid, &Inversion::default(), &cfg, Sweep::WarmStart).unwrap();
        let b =
            invert_density(&sys, &grid, &Inversion::default(), &cfg, Sweep::Independent).unwrap();
        for (x, y) in a.density.iter().zip(&b.density) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn law_cdf_properties() {
        let sys = ResolventSystem::theorem_n(&BlockModel::single_cluster(1.0).unwrap());
        let d = singular_value_density(
            &sys,
            None,
            401,
            &Inversion::default(),
            &SolverConfig::default(),
        )
        .unwrap();
        let f = law_cdf(&d);
        assert!(f(0.0).abs() < 1e-12);
        assert!((f(3.0) - 1.0).abs() < 0.02);
        assert_eq!(f(-1.0), 0.0);
        let mut prev = 0.0;
        for i in 0..500 {
            let v = f(i as f64 * 0.01);
            assert!(v >= prev);
            prev = v;
        }
        let edge = d.support_edge().unwrap();
        assert!((edge - 2.0).abs() < 0.05, "edge {edge}");
    }

    #[test]
    fn fold_and_unfold_round_trip() {
        let d = SpectralDensity::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.0], vec![1e-3], true)
            .unwrap();
        let u = d.unfold().unwrap();
        assert_eq!(u.grid, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!((u.mass() - d.mass()).abs() < 1e-15);
        let back = u.fold().unwrap();
        assert_eq!(back.density, d.density);
    }

    #[test]
    fn intercept_of_exact_line() {
        let xs = [4e-3, 2e-3, 1e-3];
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 - 3.0 * x).collect();
        assert!((line_intercept(&xs, &ys) - 0.7).abs() < 1e-14);
    }
}
