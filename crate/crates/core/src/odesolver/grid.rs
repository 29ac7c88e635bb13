use serde::Serialize;
use thiserror::Error;

use crate::model::ModelSpec;

pub const MIN_NODES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid bounds must satisfy 0 < x_min < x_max (got x_min={x_min}, x_max={x_max})")]
    DegenerateBounds { x_min: f64, x_max: f64 },
    #[error("initial state x0={x0} lies outside ({x_min}, {x_max})")]
    StateOutside { x0: f64, x_min: f64, x_max: f64 },
    #[error("grid needs at least {MIN_NODES} nodes, got {0}")]
    TooFewNodes(usize),
    #[error("interpolation needs x > 0, got {0}")]
    NonPositiveState(f64),
}

/// Geometric mesh on `(0, inf)`: nodes uniform in `ln x`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    nodes: Vec<f64>,
}

impl Grid {
    /// Geometric mesh with `n` nodes between `x_min` and `x_max`.
    pub fn geometric(x_min: f64, x_max: f64, n: usize) -> Result<Grid, GridError> {
        if !(x_min > 0.0 && x_max > x_min && x_max.is_finite()) {
            return Err(GridError::DegenerateBounds { x_min, x_max });
        }
        if n < MIN_NODES {
            return Err(GridError::TooFewNodes(n));
        }
        let (l0, l1) = (x_min.ln(), x_max.ln());
        let step = (l1 - l0) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| (l0 + step * i as f64).exp()).collect();
        // pin the end points exactly
        nodes[0] = x_min;
        nodes[n - 1] = x_max;
        Ok(Grid { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn x_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn x_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Spacing `x_{i+1} - x_i`.
    pub fn spacing(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Uniform step in `ln x`.
    pub fn log_step(&self) -> f64 {
        (self.x_max() / self.x_min()).ln() / (self.len() - 1) as f64
    }

    /// Indices of nodes kept after dropping `fraction` of nodes at each end.
    pub fn interior_range(&self, fraction: f64) -> std::ops::Range<usize> {
        let skip = ((self.len() as f64) * fraction).ceil() as usize;
        skip..self.len().saturating_sub(skip)
    }

    /// Bracketing segment `i` and the weight `t` of node `i + 1`, so the
    /// interpolant is `(1 - t) f_i + t f_{i+1}`. Outside the grid the boundary
    /// segment is reused and `t` leaves `[0, 1]` (linear extrapolation).
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.nodes.len();
        let i = self.nodes.partition_point(|&node| node <= x).clamp(1, n - 1) - 1;
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        (i, (x - a) / (b - a))
    }

    /// Piecewise-linear interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Result<f64, GridError> {
        if !(x > 0.0) {
            return Err(GridError::NonPositiveState(x));
        }
        Ok(self.interpolate_unchecked(values, x))
    }

    pub(crate) fn interpolate_unchecked(&self, values: &[f64], x: f64) -> f64 {
        let (i, t) = self.locate(x);
        values[i] + t * (values[i + 1] - values[i])
    }
}

/// Mesh for `model`, checking that `x0` is strictly inside the bounds.
pub fn build_grid(model: &ModelSpec, x_min: f64, x_max: f64, n: usize) -> Result<Grid, GridError> {
    let grid = Grid::geometric(x_min, x_max, n)?;
    if !(model.x0 > x_min && model.x0 < x_max) {
        return Err(GridError::StateOutside { x0: model.x0, x_min, x_max });
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn ratio_matches_geometry() {
        let g = build_grid(&preset("P1").unwrap(), 0.01, 100.0, 401).unwrap();
        assert_eq!(g.len(), 401);
        let ratio = (100.0f64 / 0.01).powf(1.0 / 400.0);
        for w in g.nodes().windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn log_uniform_step() {
        let g = Grid::geometric(0.1, 10.0, 64).unwrap();
        let step = 100f64.ln() / 63.0;
        assert!((g.log_step() - step).abs() < 1e-15);
        for w in g.nodes().windows(2) {
            assert!(((w[1] / w[0]).ln() - step).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate() {
        assert!(matches!(Grid::geometric(1.0, 1.0, 100), Err(GridError::DegenerateBounds { .. })));
        assert!(matches!(Grid::geometric(2.0, 1.0, 100), Err(GridError::DegenerateBounds { .. })));
        assert!(matches!(Grid::geometric(0.0, 1.0, 100), Err(GridError::DegenerateBounds { .. })));
        assert_eq!(Grid::geometric(0.1, 10.0, 63), Err(GridError::TooFewNodes(63)));
        let p1 = preset("P1").unwrap();
        assert!(matches!(build_grid(&p1, 2.0, 10.0, 64), Err(GridError::StateOutside { .. })));
    }

    #[test]
    fn interpolation_rules() {
        let g = Grid::geometric(0.1, 10.0, 64).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|x| x.ln()).collect();
        for (i, &x) in g.nodes().iter().enumerate() {
            assert_eq!(g.interpolate(&vals, x).unwrap(), vals[i]);
        }
        let mid = 0.5 * (g.nodes()[10] + g.nodes()[11]);
        let avg = 0.5 * (vals[10] + vals[11]);
        assert!((g.interpolate(&vals, mid).unwrap() - avg).abs() < 1e-14);
        // extrapolation uses the boundary segment slope
        let n = g.len();
        let slope = (vals[n - 1] - vals[n - 2]) / g.spacing(n - 2);
        let beyond = g.interpolate(&vals, 20.0).unwrap();
        assert!((beyond - (vals[n - 1] + slope * 10.0)).abs() < 1e-12);
        let below = g.interpolate(&vals, 0.05).unwrap();
        let slope0 = (vals[1] - vals[0]) / g.spacing(0);
        assert!((below - (vals[0] - slope0 * 0.05)).abs() < 1e-12);
        assert!(g.interpolate(&vals, 0.0).is_err());
        assert!(g.interpolate(&vals, -1.0).is_err());
    }
}
