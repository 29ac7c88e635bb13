//! Switching regions, thresholds and the five-case classification.
//!
//! `G1 = v1 - v2 + g12` and `G2 = v2 - v1 + g21`; regime `i` switches at an
//! arrival iff `G_i <= 0`. Under the standing assumptions `S1 = {G1 <= 0}` is
//! empty or a half-line `[x1, inf)` and `S2 = {G2 <= 0}` is empty, `(0, x2]`
//! or everything; which one is decided by `a1 g12` and `a1 g21` against `F(inf)`.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{f_limit, ModelSpec};
use crate::odesolver::{Grid, ValueSolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(into = "u8")]
pub enum Case {
    /// `S1` and `S2` empty.
    NoSwitching = 1,
    /// `S1` empty, `S2 = (0, x2]`.
    LowerSwitchBack = 2,
    /// `S1` empty, `S2 = (0, inf)`.
    AlwaysSwitchBack = 3,
    /// `S1 = [x1, inf)`, `S2` empty.
    UpperSwitch = 4,
    /// `S1 = [x1, inf)`, `S2 = (0, x2]`.
    TwoSided = 5,
}

impl Case {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Case> {
        Some(match n {
            1 => Case::NoSwitching,
            2 => Case::LowerSwitchBack,
            3 => Case::AlwaysSwitchBack,
            4 => Case::UpperSwitch,
            5 => Case::TwoSided,
            _ => return None,
        })
    }
}

impl From<Case> for u8 {
    fn from(c: Case) -> u8 {
        c.number()
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("a1*g12={a1g12} < F(inf)={f_inf} together with a1*g21={a1g21} <= -F(inf) contradicts g12+g21>0")]
    Unreachable { a1g12: f64, a1g21: f64, f_inf: f64 },
    #[error("F(inf) must be positive for the classification, got {0}")]
    NonPositiveLimit(f64),
}

/// Predicted case from `a1 g12`, `a1 g21` and `F(inf)` (extended reals).
pub fn classify(model: &ModelSpec) -> Result<Case, ClassifyError> {
    classify_values(model.a1 * model.g12, model.a1 * model.g21, f_limit(model))
}

pub fn classify_values(a1g12: f64, a1g21: f64, f_inf: f64) -> Result<Case, ClassifyError> {
    if !(f_inf > 0.0) {
        return Err(ClassifyError::NonPositiveLimit(f_inf));
    }
    let no_upper = a1g12 >= f_inf;
    Ok(match (no_upper, a1g21) {
        (true, g) if g >= 0.0 => Case::NoSwitching,
        (true, g) if g > -f_inf => Case::LowerSwitchBack,
        (true, _) => Case::AlwaysSwitchBack,
        (false, g) if g >= 0.0 => Case::UpperSwitch,
        (false, g) if g > -f_inf => Case::TwoSided,
        (false, _) => return Err(ClassifyError::Unreachable { a1g12, a1g21, f_inf }),
    })
}

/// Cases whose defining inequalities hold within `rel_tol` of equality, for
/// flagging classifications that sit on a boundary.
fn tie_candidates(a1g12: f64, a1g21: f64, f_inf: f64, rel_tol: f64) -> Vec<Case> {
    let near =
        |a: f64, b: f64| a.is_finite() && b.is_finite() && (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0);
    let mut out = Vec::new();
    let g12_options: Vec<f64> =
        if near(a1g12, f_inf) { vec![f_inf, f_inf * (1.0 - 2.0 * rel_tol)] } else { vec![a1g12] };
    let mut g21_options = vec![a1g21];
    if near(a1g21, 0.0) {
        g21_options = vec![0.0, -2.0 * rel_tol];
    } else if near(a1g21, -f_inf) {
        g21_options = vec![-f_inf, -f_inf * (1.0 - 2.0 * rel_tol)];
    }
    for &a in &g12_options {
        for &b in &g21_options {
            if let Ok(c) = classify_values(a, b, f_inf) {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// `(G1, G2)` on the solution's grid.
pub fn g_functions(solution: &ValueSolution, model: &ModelSpec) -> (Vec<f64>, Vec<f64>) {
    let g1 = solution.v1.iter().zip(&solution.v2).map(|(a, b)| a - b + model.g12).collect();
    let g2 = solution.v1.iter().zip(&solution.v2).map(|(a, b)| b - a + model.g21).collect();
    (g1, g2)
}

/// A detected threshold: the interpolated crossing plus its bracketing nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Threshold {
    /// `+inf` or `0` when the region does not cross inside the grid.
    pub value: f64,
    pub bracket: Option<(f64, f64)>,
}

impl Threshold {
    fn at(value: f64) -> Threshold {
        Threshold { value, bracket: None }
    }

    pub fn is_finite_positive(&self) -> bool {
        self.value.is_finite() && self.value > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub x_lower1: Threshold,
    pub x_upper2: Threshold,
    pub structure_ok: bool,
    /// Human-readable notes about broken structure.
    pub diagnostics: Vec<String>,
}

fn crossing(grid: &Grid, g: &[f64], lo: usize) -> Threshold {
    let x = grid.nodes();
    let (a, b) = (g[lo], g[lo + 1]);
    let t = a / (a - b);
    Threshold { value: x[lo] + t * (x[lo + 1] - x[lo]), bracket: Some((x[lo], x[lo + 1])) }
}

/// Sign-change clusters of `{g <= 0}` membership along the grid.
fn membership_runs(g: &[f64]) -> usize {
    let mut runs = 0;
    let mut inside = false;
    for &v in g {
        let now = v <= 0.0;
        if now && !inside {
            runs += 1;
        }
        inside = now;
    }
    runs
}

/// Thresholds `x1 = inf S1` and `x2 = sup S2` from nodal G values.
pub fn detect_regions(g1: &[f64], g2: &[f64], grid: &Grid) -> Detection {
    let n = grid.len();
    let mut diagnostics = Vec::new();

    let x_lower1 = match g1.iter().position(|&v| v <= 0.0) {
        None => Threshold::at(f64::INFINITY),
        Some(0) => Threshold { value: grid.x_min(), bracket: Some((0.0, grid.x_min())) },
        Some(k) => crossing(grid, g1, k - 1),
    };
    let x_upper2 = match g2.iter().rposition(|&v| v <= 0.0) {
        None => Threshold::at(0.0),
        Some(k) if k == n - 1 => {
            if g2.iter().all(|&v| v <= 0.0) {
                Threshold::at(f64::INFINITY)
            } else {
                Threshold { value: grid.x_max(), bracket: Some((grid.x_max(), f64::INFINITY)) }
            }
        }
        Some(k) => crossing(grid, g2, k),
    };

    let runs1 = membership_runs(g1);
    let suffix1 = runs1 == 0 || (runs1 == 1 && g1[n - 1] <= 0.0);
    if !suffix1 {
        diagnostics.push(format!("{{G1<=0}} is not a suffix of the grid ({runs1} cluster(s))"));
    }
    let runs2 = membership_runs(g2);
    let prefix2 = runs2 == 0 || (runs2 == 1 && g2[0] <= 0.0);
    if !prefix2 {
        diagnostics.push(format!("{{G2<=0}} is not a prefix of the grid ({runs2} cluster(s))"));
    }
    Detection { x_lower1, x_upper2, structure_ok: suffix1 && prefix2, diagnostics }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RegionShape {
    Empty,
    /// `[x1, inf)` for S1, `(0, x2]` for S2, with a finite positive threshold.
    HalfLine,
    Everything,
}

fn observed_case(d: &Detection, g1: &[f64], g2: &[f64]) -> (RegionShape, RegionShape, Option<Case>) {
    let s1 = if g1.iter().all(|&v| v > 0.0) {
        RegionShape::Empty
    } else if g1.iter().all(|&v| v <= 0.0) {
        RegionShape::Everything
    } else {
        RegionShape::HalfLine
    };
    let s2 = if g2.iter().all(|&v| v > 0.0) {
        RegionShape::Empty
    } else if g2.iter().all(|&v| v <= 0.0) {
        RegionShape::Everything
    } else {
        RegionShape::HalfLine
    };
    let case = if !d.structure_ok {
        None
    } else {
        match (s1, s2) {
            (RegionShape::Empty, RegionShape::Empty) => Some(Case::NoSwitching),
            (RegionShape::Empty, RegionShape::HalfLine) => Some(Case::LowerSwitchBack),
            (RegionShape::Empty, RegionShape::Everything) => Some(Case::AlwaysSwitchBack),
            (RegionShape::HalfLine, RegionShape::Empty) => Some(Case::UpperSwitch),
            (RegionShape::HalfLine, RegionShape::HalfLine) => Some(Case::TwoSided),
            _ => None,
        }
    };
    (s1, s2, case)
}

/// Region analysis of a converged solution against the predicted case.
#[derive(Clone, Debug, Serialize)]
pub struct RegionReport {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub case_predicted: Option<Case>,
    /// `None` when the detected regions match no case (inconsistent).
    pub case_observed: Option<Case>,
    pub shape1: RegionShape,
    pub shape2: RegionShape,
    pub x_lower1: Threshold,
    pub x_upper2: Threshold,
    pub structure_ok: bool,
    /// Largest upward step of G1 and downward step of G2.
    pub monotonicity_violation: [f64; 2],
    pub epsilon_grid: f64,
    pub monotone_ok: bool,
    /// Set when the parameters sit on a case boundary; the comparison is then
    /// only advisory and `candidates` lists the cases consistent with a tie.
    pub advisory: bool,
    pub candidates: Vec<Case>,
    pub diagnostics: Vec<String>,
}

impl RegionReport {
    /// Predicted and observed agree (or disagree only on a flagged tie), the
    /// half-line structure holds and G is monotone.
    pub fn consistent(&self) -> bool {
        let case_ok = match (self.case_predicted, self.case_observed) {
            (Some(p), Some(o)) => p == o || (self.advisory && self.candidates.contains(&o)),
            _ => false,
        };
        case_ok && self.structure_ok && self.monotone_ok
    }
}

/// Relative width of the band treated as a tie between cases.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Slack for discrete monotonicity: `10 * residual * step`, plus a rounding
/// floor relative to the size of G.
pub fn epsilon_grid(solution: &ValueSolution, g1: &[f64]) -> f64 {
    let scale = g1.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    10.0 * solution.residual_sup * solution.grid.max_spacing() + 64.0 * f64::EPSILON * scale
}

pub fn verify(model: &ModelSpec, solution: &ValueSolution) -> RegionReport {
    let (g1, g2) = g_functions(solution, model);
    let detection = detect_regions(&g1, &g2, &solution.grid);
    let (shape1, shape2, case_observed) = observed_case(&detection, &g1, &g2);
    let mut diagnostics = detection.diagnostics.clone();
    let case_predicted = match classify(model) {
        Ok(c) => Some(c),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    let (a1g12, a1g21, f_inf) = (model.a1 * model.g12, model.a1 * model.g21, f_limit(model));
    let candidates = tie_candidates(a1g12, a1g21, f_inf, TIE_TOLERANCE);
    let advisory = candidates.len() > 1;

    let up1 = g1.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
    let down2 = g2.windows(2).map(|w| w[0] - w[1]).fold(0.0f64, f64::max);
    let eps = epsilon_grid(solution, &g1);
    let monotone_ok = up1 <= eps && down2 <= eps;
    if !monotone_ok {
        diagnostics.push(format!("monotonicity violated: G1 rises by {up1:e}, G2 falls by {down2:e} (eps {eps:e})"));
    }
    if let (Some(p), Some(o)) = (case_predicted, case_observed) {
        if p != o {
            diagnostics.push(format!("predicted case {p} but observed case {o}"));
        }
    }
    RegionReport {
        g1,
        g2,
        case_predicted,
        case_observed,
        shape1,
        shape2,
        x_lower1: detection.x_lower1,
        x_upper2: detection.x_upper2,
        structure_ok: detection.structure_ok,
        monotonicity_violation: [up1, down2],
        epsilon_grid: eps,
        monotone_ok,
        advisory,
        candidates,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProfitSpec;
    use crate::odesolver::{build_grid, solve_penalized_system, SolverSettings};
    use crate::oracle::resolvent;
    use crate::presets::{preset, PRESET_NAMES};

    fn solved(name: &str) -> (ModelSpec, ValueSolution) {
        let m = preset(name).unwrap();
        let grid = build_grid(&m, 1e-3, 1e3, 401).unwrap();
        let s = solve_penalized_system(&m, &grid, SolverSettings::default()).unwrap();
        (m, s)
    }

    #[test]
    fn classify_presets() {
        let expected = [1u8, 2, 3, 4, 5];
        for (name, want) in PRESET_NAMES.iter().zip(expected) {
            assert_eq!(classify(&preset(name).unwrap()).unwrap().number(), want, "{name}");
        }
    }

    #[test]
    fn classify_linear_net_profit() {
        let m = ModelSpec { profit2: ProfitSpec::Linear { slope: 0.2 }, ..preset("P1").unwrap() };
        assert_eq!(classify(&m).unwrap(), Case::UpperSwitch);
        let m = ModelSpec { g12: 1e6, g21: 0.0, ..m };
        assert_eq!(classify(&m).unwrap(), Case::UpperSwitch);
    }

    #[test]
    fn sixth_combination_contradicts_cost_sum() {
        // a1 g12 < F and a1 g21 <= -F imply a1 (g12 + g21) < 0
        let f = 1.0;
        for (a, b) in [(0.9, -1.0), (0.5, -1.5), (-0.1, -1.0)] {
            assert!(a < f && b <= -f);
            assert!(a + b < 0.0);
            assert!(matches!(classify_values(a, b, f), Err(ClassifyError::Unreachable { .. })));
        }
    }

    #[test]
    fn tie_candidates_at_boundaries() {
        assert_eq!(tie_candidates(1.5, 0.1, 1.0, TIE_TOLERANCE), vec![Case::NoSwitching]);
        let c = tie_candidates(1.0, 0.1, 1.0, TIE_TOLERANCE);
        assert!(c.contains(&Case::NoSwitching) && c.contains(&Case::UpperSwitch));
        let c = tie_candidates(1.5, 0.0, 1.0, TIE_TOLERANCE);
        assert!(c.contains(&Case::NoSwitching) && c.contains(&Case::LowerSwitchBack));
    }

    #[test]
    fn g_functions_sum_to_total_cost() {
        for name in PRESET_NAMES {
            let (m, s) = solved(name);
            let (g1, g2) = g_functions(&s, &m);
            for (a, b) in g1.iter().zip(&g2) {
                assert!((a + b - (m.g12 + m.g21)).abs() <= 4.0 * f64::EPSILON * (1.0 + a.abs() + b.abs()));
            }
        }
    }

    #[test]
    fn g_at_origin_matches_degenerate_equation() {
        // At x -> 0 the profits vanish and the penalized system reduces to two scalars.
        // S2 contains 0 exactly when g21 < 0; S1 never does since g12 > 0 in every preset.
        for name in PRESET_NAMES {
            let (m, s) = solved(name);
            let (g1, g2) = g_functions(&s, &m);
            let q = m.a1 + m.lambda;
            let (want1, want2) = if m.g21 < 0.0 {
                ((m.a1 * m.g12 + m.lambda * (m.g12 + m.g21)) / q, m.a1 * m.g21 / q)
            } else {
                (m.g12, m.g21)
            };
            assert!((g1[0] - want1).abs() < 1e-2, "{name}: G1(0) {} vs {want1}", g1[0]);
            assert!((g2[0] - want2).abs() < 1e-2, "{name}: G2(0) {} vs {want2}", g2[0]);
        }
    }

    #[test]
    fn detects_empty_regions() {
        let grid = build_grid(&preset("P1").unwrap(), 1e-3, 1e3, 64).unwrap();
        let pos = vec![1.0; 64];
        let d = detect_regions(&pos, &pos, &grid);
        assert_eq!(d.x_lower1.value, f64::INFINITY);
        assert_eq!(d.x_upper2.value, 0.0);
        assert!(d.structure_ok);
        let neg = vec![-1.0; 64];
        let d = detect_regions(&pos, &neg, &grid);
        assert_eq!(d.x_upper2.value, f64::INFINITY);
    }

    #[test]
    fn detects_broken_structure() {
        let grid = build_grid(&preset("P1").unwrap(), 1e-3, 1e3, 64).unwrap();
        let mut g1 = vec![1.0; 64];
        g1[10] = -1.0;
        g1[40] = -1.0;
        let d = detect_regions(&g1, &vec![1.0; 64], &grid);
        assert!(!d.structure_ok);
        assert_eq!(d.diagnostics.len(), 1);
    }

    #[test]
    fn interpolated_crossing() {
        let grid = build_grid(&preset("P1").unwrap(), 1e-3, 1e3, 64).unwrap();
        let x = grid.nodes();
        let g1: Vec<f64> = x.iter().map(|&v| 2.0 - v).collect();
        let d = detect_regions(&g1, &vec![1.0; 64], &grid);
        let (a, b) = d.x_lower1.bracket.unwrap();
        assert!(a < 2.0 && 2.0 <= b);
        assert!((d.x_lower1.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn verify_presets() {
        for (name, want) in PRESET_NAMES.iter().zip([1u8, 2, 3, 4, 5]) {
            let (m, s) = solved(name);
            let r = verify(&m, &s);
            assert_eq!(r.case_predicted.map(Case::number), Some(want), "{name}");
            assert_eq!(r.case_observed, r.case_predicted, "{name}: {:?}", r.diagnostics);
            assert!(r.consistent(), "{name}: {:?}", r.diagnostics);
        }
        let (m, s) = solved("P5");
        let r = verify(&m, &s);
        assert!(r.x_lower1.is_finite_positive() && r.x_upper2.is_finite_positive());
        assert!(r.x_upper2.value < r.x_lower1.value);
        let (m, s) = solved("P3");
        assert_eq!(verify(&m, &s).x_upper2.value, f64::INFINITY);
    }

    #[test]
    fn case3_g2_is_killed_resolvent() {
        // where S2 is everything, G2 = R_{a1+lambda}(a1 g21 + F)
        let (m, s) = solved("P3");
        let (_, g2) = g_functions(&s, &m);
        let q = m.a1 + m.lambda;
        for i in s.grid.interior_range(0.05).step_by(20) {
            let x = s.grid.nodes()[i];
            let expected = resolvent(&m, q, 0.0, |y| m.a1 * m.g21 + m.net_profit(y), x).unwrap();
            assert!((g2[i] - expected).abs() < 2e-3, "x={x}: {} vs {expected}", g2[i]);
        }
    }
}
