//! Closed-form values for affine profits, and a-priori bounds on the value functions.

use serde::Serialize;
use thiserror::Error;

use crate::model::{normalize, ModelSpec, ProfitSpec, Regime};
use crate::odesolver::ValueSolution;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("closed form needs a1 > b (a1={a1}, b={b})")]
    NotDiscounted { a1: f64, b: f64 },
    #[error("closed form needs an affine net profit F(x) = c x")]
    NotLinear,
    #[error("closed form needs x > 0, got {0}")]
    NonPositiveState(f64),
}

/// `E[int e^{-a1 t} c X_t dt] = c x / (a1 - b)`.
pub fn no_switch_value(c: f64, x: f64, a1: f64, b: f64) -> Result<f64, AnalyticError> {
    if a1 <= b {
        return Err(AnalyticError::NotDiscounted { a1, b });
    }
    Ok(c * x / (a1 - b))
}

fn linear_slope(p: &ProfitSpec) -> Option<f64> {
    match p {
        ProfitSpec::Zero => Some(0.0),
        ProfitSpec::Linear { slope } => Some(*slope),
        _ => None,
    }
}

/// Slope `c` when both profits are linear through the origin.
pub fn linear_net_slope(model: &ModelSpec) -> Option<f64> {
    Some(linear_slope(&model.profit2)? - linear_slope(&model.profit1)?)
}

/// `G1` when neither regime ever switches: `g12 - c x / (a1 - b)`.
pub fn never_switch_g(model: &ModelSpec, x: f64) -> Result<f64, AnalyticError> {
    let c = linear_net_slope(model).ok_or(AnalyticError::NotLinear)?;
    Ok(model.g12 - no_switch_value(c, x, model.a1, model.drift)?)
}

/// Root of [`never_switch_g`]: `g12 (a1 - b) / c`, an upper bound for `x1`.
pub fn never_switch_root(model: &ModelSpec) -> Result<f64, AnalyticError> {
    let c = linear_net_slope(model).ok_or(AnalyticError::NotLinear)?;
    if model.a1 <= model.drift {
        return Err(AnalyticError::NotDiscounted { a1: model.a1, b: model.drift });
    }
    Ok(model.g12 * (model.a1 - model.drift) / c)
}

/// `G2` on a region where regime 2 always switches back:
/// `a1 g21 / (a1 + lambda) + c x / (a1 + lambda - b)`.
pub fn case3_g2(model: &ModelSpec, x: f64) -> Result<f64, AnalyticError> {
    let c = linear_net_slope(model).ok_or(AnalyticError::NotLinear)?;
    let q = model.a1 + model.lambda;
    Ok(model.a1 * model.g21 / q + no_switch_value(c, x, q, model.drift)?)
}

/// A named closed form with its applicability test.
pub struct ClosedForm {
    pub name: &'static str,
    pub applies: fn(&ModelSpec) -> bool,
    pub eval: fn(&ModelSpec, f64) -> Result<f64, AnalyticError>,
}

impl ClosedForm {
    pub fn evaluate(&self, model: &ModelSpec, x: f64) -> Result<f64, AnalyticError> {
        if !(x > 0.0) {
            return Err(AnalyticError::NonPositiveState(x));
        }
        if !(self.applies)(model) {
            return Err(AnalyticError::NotLinear);
        }
        (self.eval)(model, x)
    }
}

pub const CLOSED_FORMS: [ClosedForm; 2] = [
    ClosedForm {
        name: "never_switch_G",
        applies: |m| linear_net_slope(m).is_some() && m.a1 > m.drift,
        eval: never_switch_g,
    },
    ClosedForm {
        name: "case3_G2",
        applies: |m| linear_net_slope(m).is_some() && m.a1 + m.lambda > m.drift,
        eval: case3_g2,
    },
];

/// Worst slack of each a-priori bound; negative means violated.
#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    /// `min (C x/(a1-b) + max(0, -g) - v)`.
    pub upper_slack: f64,
    /// `min (v - lambda/(a1+lambda) max(0, -g))`.
    pub lower_slack: f64,
    /// `min (C/(a1-b) - |dv/dx|)` over neighbouring nodes.
    pub lipschitz_slack: f64,
    pub tolerance: f64,
    pub ok: bool,
}

/// Checks the growth, positivity and Lipschitz bounds on nodal values.
///
/// The bounds hold for the problem normalized to `h(0) = 0`, so the offsets
/// from [`normalize`] are removed first.
pub fn check_bounds(
    model: &ModelSpec,
    solution: &ValueSolution,
    tolerance: f64,
) -> Result<BoundsReport, AnalyticError> {
    let (m, offsets) = normalize(model);
    if m.a1 <= m.drift {
        return Err(AnalyticError::NotDiscounted { a1: m.a1, b: m.drift });
    }
    let c = m.profit_lipschitz();
    let lip = c / (m.a1 - m.drift);
    let x = solution.grid.nodes();
    let mut upper_slack = f64::INFINITY;
    let mut lower_slack = f64::INFINITY;
    let mut lipschitz_slack = f64::INFINITY;
    for regime in [Regime::One, Regime::Two] {
        let off = offsets.0[regime.index()];
        let v: Vec<f64> = solution.values(regime).iter().map(|v| v - off).collect();
        let gain = (-m.cost(regime)).max(0.0);
        let floor = m.lambda / (m.a1 + m.lambda) * gain;
        for (xi, vi) in x.iter().zip(&v) {
            upper_slack = upper_slack.min(lip * xi + gain - vi);
            lower_slack = lower_slack.min(vi - floor);
        }
        for i in 1..x.len() {
            let q = ((v[i] - v[i - 1]) / (x[i] - x[i - 1])).abs();
            lipschitz_slack = lipschitz_slack.min(lip - q);
        }
    }
    let ok = upper_slack >= -tolerance && lower_slack >= -tolerance && lipschitz_slack >= -tolerance;
    Ok(BoundsReport { upper_slack, lower_slack, lipschitz_slack, tolerance, ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odesolver::{build_grid, solve_penalized_system, SolverSettings};
    use crate::presets::{preset, PRESET_NAMES};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_model(c: f64, g12: f64, g21: f64) -> ModelSpec {
        ModelSpec { profit2: ProfitSpec::Linear { slope: c }, g12, g21, ..preset("P1").unwrap() }
    }

    #[test]
    fn no_switch_examples() {
        assert_relative_eq!(no_switch_value(0.2, 2.0, 1.0, 0.05).unwrap(), 0.4 / 0.95, max_relative = 1e-15);
        assert_relative_eq!(no_switch_value(0.2, 2.0, 1.0, 0.05).unwrap(), 0.42105, epsilon = 1e-5);
        assert_eq!(no_switch_value(0.0, 3.0, 1.0, 0.05).unwrap(), 0.0);
        let v = |x| no_switch_value(0.2, x, 1.0, 0.05).unwrap();
        assert_relative_eq!(v(4.0), 2.0 * v(2.0), max_relative = 1e-15);
        assert!(matches!(no_switch_value(1.0, 1.0, 0.05, 0.05), Err(AnalyticError::NotDiscounted { .. })));
    }

    #[test]
    fn never_switch_examples() {
        let m = linear_model(0.2, 0.4, 0.2);
        assert_relative_eq!(never_switch_g(&m, 1.0).unwrap(), 0.18948, epsilon = 1e-5);
        assert_relative_eq!(never_switch_g(&m, 1e-12).unwrap(), 0.4, epsilon = 1e-12);
        let root = never_switch_root(&m).unwrap();
        assert!(never_switch_g(&m, root).unwrap().abs() < 1e-14);
        assert_eq!(never_switch_g(&preset("P1").unwrap(), 1.0), Err(AnalyticError::NotLinear));
    }

    #[test]
    fn case3_examples() {
        let m = linear_model(0.2, 1.5, -1.2);
        assert_relative_eq!(case3_g2(&m, 1.0).unwrap(), -0.76308, epsilon = 1e-5);
        assert_relative_eq!(case3_g2(&m, 1e-12).unwrap(), -1.2 / 1.3, epsilon = 1e-12);
        let slope = case3_g2(&m, 2.0).unwrap() - case3_g2(&m, 1.0).unwrap();
        assert_relative_eq!(slope, 0.2 / 1.25, max_relative = 1e-12);
    }

    #[test]
    fn closed_forms_solve_their_equations() {
        // affine u = p + s x: -L u + r u = rhs with -L u = -b s x
        let m = linear_model(0.2, 0.7, -0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = m.drift;
        for _ in 0..100 {
            let x: f64 = rng.random_range(1e-3..1e3);
            let h = 1e-6 * x;
            let deriv = |f: &dyn Fn(f64) -> f64| (f(x + h) - f(x - h)) / (2.0 * h);
            let g = |y: f64| never_switch_g(&m, y).unwrap();
            let r = m.a1;
            let lhs = -b * x * deriv(&g) + r * g(x);
            assert_relative_eq!(lhs, m.a1 * m.g12 - m.net_profit(x), max_relative = 1e-9, epsilon = 1e-9);
            let g2 = |y: f64| case3_g2(&m, y).unwrap();
            let r = m.a1 + m.lambda;
            let lhs = -b * x * deriv(&g2) + r * g2(x);
            assert_relative_eq!(lhs, m.a1 * m.g21 + m.net_profit(x), max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn closed_form_table() {
        let m = linear_model(0.2, 0.4, 0.2);
        for cf in &CLOSED_FORMS {
            assert!((cf.applies)(&m), "{}", cf.name);
            assert!(cf.evaluate(&m, 1.0).unwrap().is_finite());
            assert!(cf.evaluate(&m, 0.0).is_err());
            assert!(cf.evaluate(&preset("P2").unwrap(), 1.0).is_err());
        }
    }

    #[test]
    fn presets_satisfy_bounds() {
        for name in PRESET_NAMES {
            let m = preset(name).unwrap();
            let grid = build_grid(&m, 1e-3, 1e3, 401).unwrap();
            let s = solve_penalized_system(&m, &grid, SolverSettings::default()).unwrap();
            let r = check_bounds(&m, &s, 1e-8).unwrap();
            assert!(r.ok, "{name}: {r:?}");
        }
    }

    #[test]
    fn bounds_flag_violation() {
        let m = preset("P4").unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 101).unwrap();
        let mut s = solve_penalized_system(&m, &grid, SolverSettings::default()).unwrap();
        s.v1[50] += 100.0;
        let r = check_bounds(&m, &s, 1e-8).unwrap();
        assert!(!r.ok && r.upper_slack < 0.0 && r.lipschitz_slack < 0.0);
    }
}
