//! Independent value computation from the Poisson-arrival Bellman recursion.
//!
//! Between two intervention times the state follows the GBM and the waiting
//! time is `Exp(lambda)`, so the values solve the stationary fixed point
//!
//! ```text
//! v^i = R_q h^i + lambda R_q[max{v^j - g^ij, v^i}],   q = a1 + lambda,
//! R_q phi(x) = E[ int_0^inf e^{-q s} phi(X_s^x) ds ].
//! ```
//!
//! `R_q` is evaluated by quadrature: composite Gauss-Legendre in `t = sqrt(s)`
//! for the time integral and Gauss-Hermite for the lognormal expectation. No
//! finite-difference code is involved; the only thing shared with the ODE
//! solver is the piecewise-linear interpolation rule used off the grid.

use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLegendre};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::ModelSpec;
use crate::odesolver::{Grid, ValueSolution};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("resolvent diverges: rate {rate} must exceed growth rate {growth} of a power-{power} integrand")]
    Divergent { rate: f64, growth: f64, power: f64 },
    #[error("value iteration did not converge in {iterations} sweeps (last change {change:e})")]
    NonConvergence { iterations: usize, change: f64 },
    #[error("empirical contraction ratio {ratio} exceeds the operator bound {bound} at sweep {sweep}")]
    ContractionViolated { ratio: f64, bound: f64, sweep: usize },
    #[error("solutions live on different grids")]
    GridMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadratureConfig {
    pub hermite_order: usize,
    /// Gauss-Legendre panels in `t = sqrt(s)`.
    pub time_panels: usize,
    pub panel_order: usize,
    /// Truncation `s_max = horizon_factor / (q - growth rate)`.
    pub horizon_factor: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { hermite_order: 32, time_panels: 32, panel_order: 8, horizon_factor: 40.0 }
    }
}

/// Quadrature for `E[ int_0^inf e^{-q s} phi(X_s^x) ds ]` under GBM.
#[derive(Clone, Debug, Serialize)]
pub struct QuadratureScheme {
    pub rate: f64,
    pub s_max: f64,
    /// `e^{-(q - growth) s_max} / (q - growth)`, the truncated tail per unit
    /// of the integrand's growth envelope.
    pub tail_bound: f64,
    /// Time nodes `s_k` and weights, with `e^{-q s}` folded into the weight.
    pub time: Vec<(f64, f64)>,
    /// Standard-normal nodes `z_m` and probability weights.
    pub space: Vec<(f64, f64)>,
    drift: f64,
    sigma: f64,
}

impl QuadratureScheme {
    /// Scheme for rate `q` applied to integrands growing like `x^power`.
    pub fn new(drift: f64, sigma: f64, rate: f64, power: f64, cfg: QuadratureConfig) -> Result<Self, OracleError> {
        // E[X_s^p] = x^p exp((p b + p(p-1) sigma^2 / 2) s)
        let growth = power * drift + 0.5 * power * (power - 1.0) * sigma * sigma;
        let envelope = growth.max(0.0);
        if !(rate > envelope) {
            return Err(OracleError::Divergent { rate, growth: envelope, power });
        }
        let s_max = cfg.horizon_factor / (rate - envelope);
        let tail_bound = (-(rate - envelope) * s_max).exp() / (rate - envelope);

        let legendre = GaussLegendre::new(NonZeroUsize::new(cfg.panel_order).expect("panel order > 0"));
        let t_max = s_max.sqrt();
        let width = t_max / cfg.time_panels as f64;
        let mut time = Vec::with_capacity(cfg.time_panels * cfg.panel_order);
        for p in 0..cfg.time_panels {
            let (a, b) = (p as f64 * width, (p + 1) as f64 * width);
            for &(node, weight) in legendre.as_node_weight_pairs() {
                let t = 0.5 * (a + b) + 0.5 * (b - a) * node;
                let w = 0.5 * (b - a) * weight;
                let s = t * t;
                // ds = 2 t dt
                time.push((s, w * 2.0 * t * (-rate * s).exp()));
            }
        }
        let hermite = GaussHermite::new(NonZeroUsize::new(cfg.hermite_order).expect("hermite order > 0"));
        let norm = std::f64::consts::PI.sqrt();
        let space =
            hermite.as_node_weight_pairs().iter().map(|&(t, w)| (std::f64::consts::SQRT_2 * t, w / norm)).collect();
        Ok(QuadratureScheme { rate, s_max, tail_bound, time, space, drift, sigma })
    }

    /// Visits every quadrature point `(X_s^x sample, weight)`.
    fn for_each_point(&self, x: f64, mut f: impl FnMut(f64, f64)) {
        let mu = self.drift - 0.5 * self.sigma * self.sigma;
        for &(s, ws) in &self.time {
            let (m, sd) = (mu * s, self.sigma * s.sqrt());
            for &(z, wz) in &self.space {
                f(x * (m + sd * z).exp(), ws * wz);
            }
        }
    }

    pub fn apply(&self, phi: impl Fn(f64) -> f64, x: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_point(x, |y, w| acc += w * phi(y));
        acc
    }
}

/// One application of the Bellman map to arbitrary functions, evaluated
/// pointwise without a grid. Used to check the contraction property.
pub fn bellman_map(model: &ModelSpec, scheme: &QuadratureScheme, v: [&dyn Fn(f64) -> f64; 2], x: f64) -> [f64; 2] {
    let g = [model.g12, model.g21];
    let h = [&model.profit1, &model.profit2];
    [0, 1].map(|r| scheme.apply(|y| h[r].eval(y) + model.lambda * v[r](y).max(v[1 - r](y) - g[r]), x))
}

/// `E[ int_0^inf e^{-q s} phi(X_s^x) ds ]` for GBM with the model's drift and
/// volatility, where `phi` grows at most like `x^power`.
pub fn resolvent(
    model: &ModelSpec,
    rate: f64,
    power: f64,
    phi: impl Fn(f64) -> f64,
    x: f64,
) -> Result<f64, OracleError> {
    let scheme = QuadratureScheme::new(model.drift, model.sigma, rate, power, QuadratureConfig::default())?;
    Ok(scheme.apply(phi, x))
}

/// `R_q` acting on nodal values through piecewise-linear interpolation,
/// stored row by row as a dense band `[start, start + coeffs.len())`.
struct NodalResolvent {
    rows: Vec<(usize, Vec<f64>)>,
}

impl NodalResolvent {
    fn build(scheme: &QuadratureScheme, grid: &Grid) -> Self {
        let rows = grid
            .nodes()
            .par_iter()
            .map(|&x| {
                let mut hits: Vec<(usize, f64)> = Vec::with_capacity(2 * scheme.time.len() * scheme.space.len());
                scheme.for_each_point(x, |y, w| {
                    let (i, t) = grid.locate(y);
                    hits.push((i, w * (1.0 - t)));
                    hits.push((i + 1, w * t));
                });
                let lo = hits.iter().map(|h| h.0).min().unwrap_or(0);
                let hi = hits.iter().map(|h| h.0).max().unwrap_or(0);
                let mut coeffs = vec![0.0; hi - lo + 1];
                for (i, w) in hits {
                    coeffs[i - lo] += w;
                }
                (lo, coeffs)
            })
            .collect();
        NodalResolvent { rows }
    }

    /// Induced sup norm: largest absolute row sum.
    fn sup_norm(&self) -> f64 {
        self.rows.iter().map(|(_, c)| c.iter().map(|w| w.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|(start, c)| c.iter().zip(&values[*start..]).map(|(a, b)| a * b).sum()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleSettings {
    pub tol: f64,
    pub max_sweeps: usize,
    pub quadrature: QuadratureConfig,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings { tol: 1e-10, max_sweeps: 500, quadrature: QuadratureConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRun {
    /// Fixed point on the grid; `residual_sup` holds the final sup-norm change.
    pub solution: ValueSolution,
    /// Ratio of successive sup-norm changes per sweep.
    pub contraction_ratios: Vec<f64>,
    /// `lambda / (a1 + lambda)`, the contraction factor on bounded functions.
    pub kappa: f64,
    /// Sup-norm Lipschitz constant of the discretized map on nodal values.
    pub discrete_bound: f64,
    pub tail_bound: f64,
}

/// Growth power of the model's profits for the quadrature guard.
fn profit_power(model: &ModelSpec) -> f64 {
    if model.profits_bounded() {
        0.0
    } else {
        1.0
    }
}

pub fn value_iteration(model: &ModelSpec, grid: &Grid, settings: OracleSettings) -> Result<OracleRun, OracleError> {
    value_iteration_from(model, grid, settings, None)
}

/// Iterates the Bellman map from `start` (zeros if `None`) until the sup-norm
/// change drops below `tol (1 - kappa) / kappa`, `kappa = lambda / (a1 + lambda)`.
pub fn value_iteration_from(
    model: &ModelSpec,
    grid: &Grid,
    settings: OracleSettings,
    start: Option<[&[f64]; 2]>,
) -> Result<OracleRun, OracleError> {
    let q = model.a1 + model.lambda;
    let kappa = model.lambda / q;
    let scheme = QuadratureScheme::new(model.drift, model.sigma, q, profit_power(model), settings.quadrature)?;
    let nodes = grid.nodes();
    let base: [Vec<f64>; 2] =
        [&model.profit1, &model.profit2].map(|h| nodes.par_iter().map(|&x| scheme.apply(|y| h.eval(y), x)).collect());
    let op = NodalResolvent::build(&scheme, grid);
    // linear extrapolation past the grid ends gives some rows negative
    // weights, so the nodal map is Lipschitz with this constant rather than kappa
    let discrete_bound = model.lambda * op.sup_norm();
    let g = [model.g12, model.g21];

    let mut v: [Vec<f64>; 2] = match start {
        Some([a, b]) => [a.to_vec(), b.to_vec()],
        None => [vec![0.0; nodes.len()], vec![0.0; nodes.len()]],
    };
    let stop = settings.tol * (1.0 - kappa) / kappa;
    let mut ratios = Vec::new();
    let mut prev_change: Option<f64> = None;
    for sweep in 1..=settings.max_sweeps {
        let next: [Vec<f64>; 2] = [0, 1].map(|r| {
            let best: Vec<f64> = v[r].iter().zip(&v[1 - r]).map(|(own, other)| own.max(other - g[r])).collect();
            let cont = op.apply(&best);
            base[r].iter().zip(cont).map(|(b, c)| b + model.lambda * c).collect()
        });
        let change = (0..2).flat_map(|r| next[r].iter().zip(&v[r]).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if let Some(pc) = prev_change {
            // below this floor the ratio only measures rounding
            if pc > 1e-11 {
                let ratio = change / pc;
                ratios.push(ratio);
                if ratio > discrete_bound * (1.0 + 1e-9) + 1e-12 {
                    return Err(OracleError::ContractionViolated { ratio, bound: discrete_bound, sweep });
                }
            }
        }
        prev_change = Some(change);
        v = next;
        if change <= stop {
            let [v1, v2] = v;
            let active1 = v1.iter().zip(&v2).map(|(a, b)| b - g[0] - a > 0.0).collect();
            let active2 = v1.iter().zip(&v2).map(|(a, b)| a - g[1] - b > 0.0).collect();
            return Ok(OracleRun {
                solution: ValueSolution {
                    grid: grid.clone(),
                    v1,
                    v2,
                    iterations: sweep,
                    residual_sup: change,
                    active1,
                    active2,
                    dominance_margin: None,
                    damped: false,
                },
                contraction_ratios: ratios,
                kappa,
                discrete_bound,
                tail_bound: scheme.tail_bound,
            });
        }
    }
    Err(OracleError::NonConvergence { iterations: settings.max_sweeps, change: prev_change.unwrap_or(f64::NAN) })
}

/// Differences between two solutions on the same grid, with the outer
/// `boundary_fraction` of nodes at each end excluded.
#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub sup_abs: [f64; 2],
    pub mean_abs: [f64; 2],
    /// `max(sup_abs) / max(1, sup |reference|)` over the compared nodes.
    pub sup_rel: f64,
    pub compared: std::ops::Range<usize>,
    /// Per-node `candidate - reference`, full grid length.
    pub diff: [Vec<f64>; 2],
}

pub const BOUNDARY_FRACTION: f64 = 0.05;

pub fn compare(candidate: &ValueSolution, reference: &ValueSolution) -> Result<Comparison, OracleError> {
    compare_with(candidate, reference, BOUNDARY_FRACTION)
}

pub fn compare_with(
    candidate: &ValueSolution,
    reference: &ValueSolution,
    boundary_fraction: f64,
) -> Result<Comparison, OracleError> {
    if candidate.grid != reference.grid {
        return Err(OracleError::GridMismatch);
    }
    let range = candidate.grid.interior_range(boundary_fraction);
    let pairs = [(&candidate.v1, &reference.v1), (&candidate.v2, &reference.v2)];
    let diff = pairs.map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x - y).collect::<Vec<f64>>());
    let count = range.len().max(1) as f64;
    let sup_abs = [0, 1].map(|r| diff[r][range.clone()].iter().fold(0.0f64, |m, d| m.max(d.abs())));
    let mean_abs = [0, 1].map(|r| diff[r][range.clone()].iter().map(|d| d.abs()).sum::<f64>() / count);
    let scale = pairs.iter().flat_map(|(_, b)| b[range.clone()].iter()).fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(Comparison { sup_abs, mean_abs, sup_rel: sup_abs[0].max(sup_abs[1]) / scale, compared: range, diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProfitSpec, Regime};
    use crate::odesolver::{build_grid, solve_penalized_system, SolverSettings};
    use crate::presets::preset;

    fn market() -> ModelSpec {
        ModelSpec {
            drift: 0.05,
            sigma: 0.3,
            a1: 1.0,
            lambda: 0.3,
            g12: 1e4,
            g21: 1e4,
            profit1: ProfitSpec::Linear { slope: 0.1 },
            profit2: ProfitSpec::Linear { slope: 0.2 },
            x0: 1.0,
            regime0: Regime::One,
        }
    }

    #[test]
    fn resolvent_of_identity() {
        let r = resolvent(&market(), 1.0, 1.0, |x| x, 2.0).unwrap();
        assert!((r - 2.0 / 0.95).abs() < 1e-4, "{r}");
    }

    #[test]
    fn resolvent_of_constant() {
        for q in [0.3, 1.0, 1.3, 4.0] {
            let r = resolvent(&market(), q, 0.0, |_| 1.0, 0.7).unwrap();
            assert!((r - 1.0 / q).abs() < 1e-10, "q={q}: {r}");
        }
    }

    #[test]
    fn resolvent_of_square() {
        // E[X_s^2] = x^2 e^{(2b + sigma^2) s}
        let m = market();
        let q = 1.0;
        let r = resolvent(&m, q, 2.0, |x| x * x, 1.5).unwrap();
        let exact = 2.25 / (q - 2.0 * m.drift - m.sigma * m.sigma);
        assert!((r - exact).abs() < 1e-6 * exact, "{r} vs {exact}");
    }

    #[test]
    fn divergence_guard() {
        let m = market();
        assert!(matches!(resolvent(&m, 0.04, 1.0, |x| x, 1.0), Err(OracleError::Divergent { .. })));
        assert!(matches!(resolvent(&m, 0.1, 2.0, |x| x * x, 1.0), Err(OracleError::Divergent { .. })));
        assert!(resolvent(&m, 0.04, 0.0, |_| 1.0, 1.0).is_ok());
    }

    #[test]
    fn first_arrival_discount() {
        // lambda R_{a1+lambda} 1 = E[e^{-a1 T1}] for T1 ~ Exp(lambda)
        let m = preset("P1").unwrap();
        let r = m.lambda * resolvent(&m, m.a1 + m.lambda, 0.0, |_| 1.0, 1.0).unwrap();
        assert!((r - 0.3 / 1.3).abs() < 1e-8);
    }

    #[test]
    fn no_switch_fixed_point_is_closed_form() {
        let m = market();
        let grid = build_grid(&m, 1e-3, 1e3, 401).unwrap();
        let run = value_iteration(&m, &grid, OracleSettings::default()).unwrap();
        for i in grid.interior_range(BOUNDARY_FRACTION) {
            let x = grid.nodes()[i];
            assert!((run.solution.v1[i] - 0.1 * x / 0.95).abs() <= 5e-3 * 0.1 * x / 0.95);
            assert!((run.solution.v2[i] - 0.2 * x / 0.95).abs() <= 5e-3 * 0.2 * x / 0.95);
        }
        // linear growth: successive changes shrink by lambda / (a1 + lambda - b)
        let last = *run.contraction_ratios.last().unwrap();
        assert!((last - 0.3 / 1.25).abs() < 1e-3, "{last}");
    }

    #[test]
    fn bounded_iterates_contract_at_kappa() {
        let m = preset("P5").unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 201).unwrap();
        let run = value_iteration(&m, &grid, OracleSettings::default()).unwrap();
        assert!(run.contraction_ratios.iter().all(|&r| r <= run.discrete_bound));
        // from a zero start the changes stay smooth and contract at about kappa
        let first = run.contraction_ratios[0];
        assert!(first <= run.kappa * 1.01, "{first}");
    }

    proptest::proptest! {
        #[test]
        fn gridless_map_is_kappa_contraction(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in 0.1f64..3.0, d in -1.0f64..1.0, x in 0.01f64..50.0,
        ) {
            let m = preset("P5").unwrap();
            let q = m.a1 + m.lambda;
            let scheme = QuadratureScheme::new(m.drift, m.sigma, q, 0.0, QuadratureConfig::default()).unwrap();
            let v1 = |y: f64| a * (c * y).sin();
            let v2 = |y: f64| b / (1.0 + y);
            let w1 = |y: f64| a * (c * y).sin() + d * (y / (1.0 + y));
            let w2 = |y: f64| b / (1.0 + y) - 0.5 * d;
            let tv = bellman_map(&m, &scheme, [&v1, &v2], x);
            let tw = bellman_map(&m, &scheme, [&w1, &w2], x);
            // sup |v - w| <= |d|
            let kappa = m.lambda / q;
            for r in 0..2 {
                proptest::prop_assert!((tv[r] - tw[r]).abs() <= kappa * d.abs() * (1.0 + 1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn p1_never_switches() {
        let m = preset("P1").unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 401).unwrap();
        let run = value_iteration(&m, &grid, OracleSettings::default()).unwrap();
        let s = &run.solution;
        for i in 0..grid.len() {
            assert_eq!((s.v2[i] - m.g12 - s.v1[i]).max(0.0), 0.0);
        }
    }

    #[test]
    fn limit_independent_of_start() {
        let m = preset("P5").unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 201).unwrap();
        let fd = solve_penalized_system(&m, &grid, SolverSettings::default()).unwrap();
        let settings = OracleSettings { tol: 1e-11, ..Default::default() };
        let from_zero = value_iteration(&m, &grid, settings).unwrap();
        let from_fd = value_iteration_from(&m, &grid, settings, Some([&fd.v1, &fd.v2])).unwrap();
        let c = compare_with(&from_zero.solution, &from_fd.solution, 0.0).unwrap();
        assert!(c.sup_abs[0].max(c.sup_abs[1]) < 1e-10);
    }

    #[test]
    fn compare_identical_and_mismatched() {
        let m = preset("P4").unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 201).unwrap();
        let fd = solve_penalized_system(&m, &grid, SolverSettings::default()).unwrap();
        let c = compare(&fd, &fd).unwrap();
        assert_eq!(c.sup_abs, [0.0, 0.0]);
        assert_eq!(c.sup_rel, 0.0);
        let other = build_grid(&m, 1e-3, 1e3, 203).unwrap();
        let fd2 = solve_penalized_system(&m, &other, SolverSettings::default()).unwrap();
        assert_eq!(compare(&fd, &fd2).unwrap_err(), OracleError::GridMismatch);
    }
}
