//! Finite-difference solver for the coupled penalized system
//!
//! ```text
//! -L v^i + a1 v^i = lambda max{0, v^j - g^ij - v^i} + h^i,   L = 1/2 sigma^2 x^2 d2/dx2 + b x d/dx
//! ```
//!
//! on a geometric mesh, using nonuniform three-point central differences and
//! active-set iteration on the set where the penalty is switched on.
//!
//! Boundary treatment: at `x_min` the values are pinned to the `x -> 0` limit of
//! the system, where `L` vanishes and only a 2x2 piecewise-linear fixed point
//! remains, corrected by its first-order slope. At `x_max` the second difference is set to zero (values extrapolate
//! linearly), which induces a thin boundary layer; comparisons should drop the
//! outer nodes, see [`Grid::interior_range`].

mod blocktri;
pub mod grid;

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

pub use grid::{build_grid, Grid, GridError};

use crate::model::{ModelSpec, Regime};
use blocktri::{BlockTridiagonal, Mat2};

/// Smallest `x_max / x_min` ratio the solver accepts.
pub const MIN_GRID_RATIO: f64 = 1e3;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grid spans x_max/x_min = {0:.3e}, below the required {MIN_GRID_RATIO:e}")]
    NarrowGrid(f64),
    #[error("discount rate a1 must be positive, got {0}")]
    NonPositiveDiscount(f64),
    #[error("no consistent x -> 0 fixed point (costs g12={g12}, g21={g21})")]
    BoundaryFixedPoint { g12: f64, g21: f64 },
    #[error("frozen-active-set matrix lost diagonal dominance (margin {margin:e} at node {node})")]
    LostDominance { margin: f64, node: usize },
    #[error("singular pivot in the frozen-active-set linear solve")]
    Singular,
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: 1e-8, max_iter: 200 }
    }
}

/// Per-regime values on a grid plus solver diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct ValueSolution {
    pub grid: Grid,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub iterations: usize,
    pub residual_sup: f64,
    /// Nodes where `v2 - g12 - v1 > 0`.
    pub active1: Vec<bool>,
    /// Nodes where `v1 - g21 - v2 > 0`.
    pub active2: Vec<bool>,
    /// Smallest `|diag| - sum |off-diag|` seen over the interior rows; `None`
    /// for solutions that did not come from a linear solve.
    pub dominance_margin: Option<f64>,
    /// Whether the damped fallback was needed to break an active-set cycle.
    pub damped: bool,
}

impl ValueSolution {
    pub fn values(&self, regime: Regime) -> &[f64] {
        match regime {
            Regime::One => &self.v1,
            Regime::Two => &self.v2,
        }
    }

    /// Piecewise-linear interpolation of both value functions at `x > 0`.
    pub fn interpolate(&self, x: f64) -> Result<(f64, f64), GridError> {
        Ok((self.grid.interpolate(&self.v1, x)?, self.grid.interpolate(&self.v2, x)?))
    }

    /// Adds `offsets` back, undoing the `h(0) = 0` normalization.
    pub fn shifted(&self, offsets: [f64; 2]) -> ValueSolution {
        let mut out = self.clone();
        out.v1.iter_mut().for_each(|v| *v += offsets[0]);
        out.v2.iter_mut().for_each(|v| *v += offsets[1]);
        out
    }
}

/// Stencil of `-L` at interior node `i`: coefficients of `v_{i-1}, v_i, v_{i+1}`.
fn stencil(model: &ModelSpec, grid: &Grid, i: usize) -> [f64; 3] {
    let x = grid.nodes();
    let (hm, hp) = (x[i] - x[i - 1], x[i + 1] - x[i]);
    let sum = hm + hp;
    let diff = 0.5 * model.sigma * model.sigma * x[i] * x[i];
    let adv = model.drift * x[i];
    let lower = -(2.0 * diff - adv * hp) / (hm * sum);
    let upper = -(2.0 * diff + adv * hm) / (hp * sum);
    let centre = 2.0 * diff / (hm * hp) - adv * (hp - hm) / (hm * hp);
    [lower, centre, upper]
}

/// The `x -> 0` limit: `a1 v^i = lambda max{0, v^j - g^ij - v^i} + h^i(0)`.
///
/// Tries the four active/inactive combinations and returns the consistent one.
pub fn boundary_fixed_point(model: &ModelSpec) -> Result<[f64; 2], SolveError> {
    boundary_expansion(model).map(|(v0, _)| v0)
}

/// Values at `x = 0` and their first-order slopes `v(x) ~ v(0) + p x`.
///
/// With the penalty pattern of the fixed point frozen near zero, the slopes
/// solve `(a1 - b + lambda s_i) p_i - lambda s_i p_j = h_i'(0)`.
fn boundary_expansion(model: &ModelSpec) -> Result<([f64; 2], [f64; 2]), SolveError> {
    let (a1, lam) = (model.a1, model.lambda);
    let h0 = [model.profit1.at_zero(), model.profit2.at_zero()];
    let dh0 = [model.profit1.slope_at_zero(), model.profit2.slope_at_zero()];
    let g = [model.g12, model.g21];
    let solve2 = |m: [[f64; 2]; 2], r: [f64; 2]| {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [(r[0] * m[1][1] - m[0][1] * r[1]) / det, (m[0][0] * r[1] - m[1][0] * r[0]) / det]
    };
    for s1 in [false, true] {
        for s2 in [false, true] {
            let (l1, l2) = (if s1 { lam } else { 0.0 }, if s2 { lam } else { 0.0 });
            let [v1, v2] = solve2([[a1 + l1, -l1], [-l2, a1 + l2]], [h0[0] - l1 * g[0], h0[1] - l2 * g[1]]);
            if (v2 - g[0] - v1 > 0.0) == s1 && (v1 - g[1] - v2 > 0.0) == s2 {
                let b = model.drift;
                let slopes = solve2([[a1 - b + l1, -l1], [-l2, a1 - b + l2]], dh0);
                return Ok(([v1, v2], slopes));
            }
        }
    }
    Err(SolveError::BoundaryFixedPoint { g12: model.g12, g21: model.g21 })
}

fn active_sets(model: &ModelSpec, v1: &[f64], v2: &[f64]) -> [Vec<bool>; 2] {
    let a1 = v1.iter().zip(v2).map(|(a, b)| b - model.g12 - a > 0.0).collect();
    let a2 = v1.iter().zip(v2).map(|(a, b)| a - model.g21 - b > 0.0).collect();
    [a1, a2]
}

struct FrozenSolve {
    v: [Vec<f64>; 2],
    margin: f64,
}

/// Solves the linear system obtained by freezing the active sets.
fn solve_frozen(
    model: &ModelSpec,
    grid: &Grid,
    boundary: [f64; 2],
    active: &[Vec<bool>; 2],
) -> Result<FrozenSolve, SolveError> {
    let n = grid.len();
    let m = n - 2; // unknown blocks at nodes 1..=n-2
    let x = grid.nodes();
    let lam = model.lambda;
    let g = [model.g12, model.g21];
    let h = [&model.profit1, &model.profit2];
    let zero: Mat2 = [[0.0; 2]; 2];
    let mut sys =
        BlockTridiagonal { lower: vec![zero; m], diag: vec![zero; m], upper: vec![zero; m], rhs: vec![[0.0; 2]; m] };
    let mut margin = f64::INFINITY;
    let mut worst = 0;
    for k in 0..m {
        let i = k + 1;
        let [lo, ce, up] = stencil(model, grid, i);
        let pen = [if active[0][i] { lam } else { 0.0 }, if active[1][i] { lam } else { 0.0 }];
        sys.lower[k] = [[lo, 0.0], [0.0, lo]];
        sys.upper[k] = [[up, 0.0], [0.0, up]];
        sys.diag[k] = [[ce + model.a1 + pen[0], -pen[0]], [-pen[1], ce + model.a1 + pen[1]]];
        for r in 0..2 {
            sys.rhs[k][r] = h[r].eval(x[i]) - pen[r] * g[r];
            let row_margin = sys.diag[k][r][r].abs() - lo.abs() - up.abs() - pen[r];
            if row_margin < margin {
                margin = row_margin;
                worst = i;
            }
        }
    }
    if !(margin > 0.0) {
        return Err(SolveError::LostDominance { margin, node: worst });
    }
    // Dirichlet data at x_min
    for r in 0..2 {
        sys.rhs[0][r] -= sys.lower[0][r][r] * boundary[r];
    }
    // zero second difference at x_max: v_{n-1} = (1 + q) v_{n-2} - q v_{n-3}
    let q = grid.spacing(n - 2) / grid.spacing(n - 3);
    let last = m - 1;
    for r in 0..2 {
        let up = sys.upper[last][r][r];
        sys.diag[last][r][r] += up * (1.0 + q);
        sys.lower[last][r][r] -= up * q;
        sys.upper[last][r][r] = 0.0;
    }
    let z = blocktri::solve(&sys).ok_or(SolveError::Singular)?;
    let mut v = [vec![0.0; n], vec![0.0; n]];
    for r in 0..2 {
        v[r][0] = boundary[r];
        for k in 0..m {
            v[r][k + 1] = z[k][r];
        }
        v[r][n - 1] = (1.0 + q) * v[r][n - 2] - q * v[r][n - 3];
    }
    Ok(FrozenSolve { v, margin })
}

/// Pointwise defect of the penalized system under the solver's discretization.
///
/// Entries at the two boundary nodes are zero: they carry boundary conditions,
/// not the differential equation.
pub fn residual(model: &ModelSpec, grid: &Grid, v1: &[f64], v2: &[f64]) -> [Vec<f64>; 2] {
    let n = grid.len();
    let x = grid.nodes();
    let v = [v1, v2];
    let h = [&model.profit1, &model.profit2];
    let g = [model.g12, model.g21];
    let mut out = [vec![0.0; n], vec![0.0; n]];
    for i in 1..n - 1 {
        let [lo, ce, up] = stencil(model, grid, i);
        for r in 0..2 {
            let (own, other) = (v[r], v[1 - r]);
            let op = lo * own[i - 1] + ce * own[i] + up * own[i + 1];
            let pen = (other[i] - g[r] - own[i]).max(0.0);
            out[r][i] = op + model.a1 * own[i] - model.lambda * pen - h[r].eval(x[i]);
        }
    }
    out
}

pub fn residual_sup(model: &ModelSpec, grid: &Grid, v1: &[f64], v2: &[f64]) -> f64 {
    residual(model, grid, v1, v2).iter().flatten().fold(0.0, |m, r| m.max(r.abs()))
}

/// Active-set iteration for the penalized system.
///
/// Starts from empty active sets (the discrete no-switching values), then
/// alternates between solving the frozen linear system and recomputing the
/// active sets until they stop changing. A repeated set that is not the
/// current one triggers a damped step: the last two iterates are averaged.
pub fn solve_penalized_system(
    model: &ModelSpec,
    grid: &Grid,
    settings: SolverSettings,
) -> Result<ValueSolution, SolveError> {
    let ratio = grid.x_max() / grid.x_min();
    if ratio < MIN_GRID_RATIO {
        return Err(SolveError::NarrowGrid(ratio));
    }
    if !(model.a1 > 0.0) {
        return Err(SolveError::NonPositiveDiscount(model.a1));
    }
    let (v0, slope0) = boundary_expansion(model)?;
    let boundary = [v0[0] + slope0[0] * grid.x_min(), v0[1] + slope0[1] * grid.x_min()];
    let n = grid.len();
    let mut active = [vec![false; n], vec![false; n]];
    let mut seen: HashSet<[Vec<bool>; 2]> = HashSet::new();
    let mut previous: Option<[Vec<f64>; 2]> = None;
    let mut margin = f64::INFINITY;
    let mut damped = false;
    let mut last_residual = f64::INFINITY;

    for iteration in 1..=settings.max_iter {
        let step = solve_frozen(model, grid, boundary, &active)?;
        margin = margin.min(step.margin);
        let mut v = step.v;
        let mut next = active_sets(model, &v[0], &v[1]);
        if next == active {
            let res = residual_sup(model, grid, &v[0], &v[1]);
            last_residual = res;
            if res <= settings.tol {
                let [v1, v2] = v;
                let [active1, active2] = next;
                return Ok(ValueSolution {
                    grid: grid.clone(),
                    v1,
                    v2,
                    iterations: iteration,
                    residual_sup: res,
                    active1,
                    active2,
                    dominance_margin: Some(margin),
                    damped,
                });
            }
        } else if seen.contains(&next) {
            if let Some(prev) = &previous {
                for r in 0..2 {
                    for (a, b) in v[r].iter_mut().zip(&prev[r]) {
                        *a = 0.5 * (*a + b);
                    }
                }
                damped = true;
                next = active_sets(model, &v[0], &v[1]);
            }
        }
        seen.insert(active.clone());
        previous = Some(v);
        active = next;
    }
    if let Some(v) = &previous {
        last_residual = residual_sup(model, grid, &v[0], &v[1]);
    }
    Err(SolveError::NonConvergence { iterations: settings.max_iter, residual: last_residual })
}
