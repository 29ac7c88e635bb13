//! Problem specification: market and control parameters, profit families,
//! assumption checks and the `h(0) = 0` normalization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Operating regime. Only two regimes are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Regime {
    One,
    Two,
}

impl Regime {
    pub fn other(self) -> Regime {
        match self {
            Regime::One => Regime::Two,
            Regime::Two => Regime::One,
        }
    }

    /// Zero-based index, for array access.
    pub fn index(self) -> usize {
        match self {
            Regime::One => 0,
            Regime::Two => 1,
        }
    }
}

impl TryFrom<u8> for Regime {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Regime::One),
            2 => Ok(Regime::Two),
            other => Err(format!("regime must be 1 or 2, got {other}")),
        }
    }
}

impl From<Regime> for u8 {
    fn from(r: Regime) -> u8 {
        r.index() as u8 + 1
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Running profit of one regime, as a function of the state.
///
/// Text form (used by config files): `zero`, `linear(c)`, `saturating(c,k)`
/// and `piecewise(x0:y0;x1:y1;...)` with the first knot at `x = 0`. Beyond the
/// last knot a piecewise profit continues with its last slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProfitSpec {
    Zero,
    /// `h(x) = c x`
    Linear {
        slope: f64,
    },
    /// `h(x) = c x / (1 + k x)`
    Saturating {
        scale: f64,
        rate: f64,
    },
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

/// Affine asymptote `h(x) = slope * x + intercept + o(1)` as `x -> inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Asymptote {
    slope: f64,
    intercept: f64,
}

/// A derivative piece `c / (1 + k x)^2` valid from `start` up to the next
/// piece. Every supported family has derivatives of this form.
#[derive(Clone, Copy, Debug, PartialEq)]
struct SlopePiece {
    start: f64,
    c: f64,
    k: f64,
}

impl ProfitSpec {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ProfitSpec::Zero => 0.0,
            ProfitSpec::Linear { slope } => slope * x,
            ProfitSpec::Saturating { scale, rate } => scale * x / (1.0 + rate * x),
            ProfitSpec::PiecewiseLinear { knots } => {
                let seg = segment_index(knots, x);
                let (x0, y0) = knots[seg];
                y0 + piecewise_slope(knots, seg) * (x - x0)
            }
        }
    }

    pub fn at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// Right derivative at zero.
    pub fn slope_at_zero(&self) -> f64 {
        match self {
            ProfitSpec::Zero => 0.0,
            ProfitSpec::Linear { slope } => *slope,
            ProfitSpec::Saturating { scale, .. } => *scale,
            ProfitSpec::PiecewiseLinear { knots } => piecewise_slope(knots, 0),
        }
    }

    /// Lipschitz constant on `[0, inf)`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ProfitSpec::Zero => 0.0,
            ProfitSpec::Linear { slope } => slope.abs(),
            ProfitSpec::Saturating { scale, .. } => scale.abs(),
            ProfitSpec::PiecewiseLinear { knots } => {
                (0..knots.len()).map(|s| piecewise_slope(knots, s).abs()).fold(0.0, f64::max)
            }
        }
    }

    /// Exact limit of `h(x)` as `x -> inf`; `+inf` for unbounded growth.
    pub fn limit_at_infinity(&self) -> f64 {
        let a = self.asymptote();
        if a.slope > 0.0 {
            f64::INFINITY
        } else if a.slope < 0.0 {
            f64::NEG_INFINITY
        } else {
            a.intercept
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.asymptote().slope == 0.0
    }

    fn asymptote(&self) -> Asymptote {
        match self {
            ProfitSpec::Zero => Asymptote { slope: 0.0, intercept: 0.0 },
            ProfitSpec::Linear { slope } => Asymptote { slope: *slope, intercept: 0.0 },
            ProfitSpec::Saturating { scale, rate } => {
                if *rate > 0.0 {
                    Asymptote { slope: 0.0, intercept: scale / rate }
                } else {
                    Asymptote { slope: *scale, intercept: 0.0 }
                }
            }
            ProfitSpec::PiecewiseLinear { knots } => {
                let last = knots.len() - 1;
                let s = piecewise_slope(knots, last);
                let (xl, yl) = knots[last];
                Asymptote { slope: s, intercept: yl - s * xl }
            }
        }
    }

    fn slope_pieces(&self) -> Vec<SlopePiece> {
        match self {
            ProfitSpec::Zero => vec![SlopePiece { start: 0.0, c: 0.0, k: 0.0 }],
            ProfitSpec::Linear { slope } => vec![SlopePiece { start: 0.0, c: *slope, k: 0.0 }],
            ProfitSpec::Saturating { scale, rate } => {
                vec![SlopePiece { start: 0.0, c: *scale, k: *rate }]
            }
            ProfitSpec::PiecewiseLinear { knots } => (0..knots.len())
                .map(|s| SlopePiece { start: knots[s].0, c: piecewise_slope(knots, s), k: 0.0 })
                .collect(),
        }
    }

    /// The same profit shifted down by its value at zero.
    pub fn shifted_to_zero(&self) -> ProfitSpec {
        match self {
            ProfitSpec::PiecewiseLinear { knots } => {
                let y0 = knots[0].1;
                ProfitSpec::PiecewiseLinear { knots: knots.iter().map(|&(x, y)| (x, y - y0)).collect() }
            }
            other => other.clone(),
        }
    }

    fn parameter_problem(&self) -> Option<String> {
        let finite = |v: &[f64]| v.iter().all(|p| p.is_finite());
        match self {
            ProfitSpec::Zero => None,
            ProfitSpec::Linear { slope } if !finite(&[*slope]) => Some("non-finite slope".into()),
            ProfitSpec::Saturating { scale, rate } if !finite(&[*scale, *rate]) => {
                Some("non-finite saturating parameters".into())
            }
            ProfitSpec::Saturating { rate, .. } if *rate < 0.0 => Some("saturating rate k must be >= 0".into()),
            ProfitSpec::PiecewiseLinear { knots } => check_knots(knots).err(),
            _ => None,
        }
    }

    fn is_nonnegative(&self) -> bool {
        match self {
            ProfitSpec::Zero => true,
            ProfitSpec::Linear { slope } => *slope >= 0.0,
            ProfitSpec::Saturating { scale, .. } => *scale >= 0.0,
            ProfitSpec::PiecewiseLinear { knots } => {
                knots.iter().all(|&(_, y)| y >= 0.0) && piecewise_slope(knots, knots.len() - 1) >= 0.0
            }
        }
    }
}

fn check_knots(knots: &[(f64, f64)]) -> Result<(), String> {
    if knots.len() < 2 {
        return Err("piecewise profit needs at least two knots".into());
    }
    if knots[0].0 != 0.0 {
        return Err("piecewise profit must start at x = 0".into());
    }
    if knots.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err("piecewise profit has non-finite knots".into());
    }
    if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err("piecewise knots must be strictly increasing in x".into());
    }
    Ok(())
}

fn segment_index(knots: &[(f64, f64)], x: f64) -> usize {
    // segment s spans [x_s, x_{s+1}); the last segment extends to infinity
    let last = knots.len() - 1;
    match knots.partition_point(|&(kx, _)| kx <= x) {
        0 => 0,
        p => (p - 1).min(last.saturating_sub(1)),
    }
}

/// Slope of segment `s`; the final knot index reuses the last segment's slope.
fn piecewise_slope(knots: &[(f64, f64)], s: usize) -> f64 {
    let s = s.min(knots.len() - 2);
    let (x0, y0) = knots[s];
    let (x1, y1) = knots[s + 1];
    (y1 - y0) / (x1 - x0)
}

impl fmt::Display for ProfitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfitSpec::Zero => write!(f, "zero"),
            ProfitSpec::Linear { slope } => write!(f, "linear({slope})"),
            ProfitSpec::Saturating { scale, rate } => write!(f, "saturating({scale},{rate})"),
            ProfitSpec::PiecewiseLinear { knots } => {
                write!(f, "piecewise(")?;
                for (i, (x, y)) in knots.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{x}:{y}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("cannot parse profit `{input}`: {reason}")]
pub struct ProfitParseError {
    input: String,
    reason: String,
}

impl FromStr for ProfitSpec {
    type Err = ProfitParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| ProfitParseError { input: s.to_string(), reason: reason.into() };
        let t = s.trim();
        if t == "zero" {
            return Ok(ProfitSpec::Zero);
        }
        let open = t.find('(').ok_or_else(|| err("expected family(args)"))?;
        if !t.ends_with(')') {
            return Err(err("missing closing parenthesis"));
        }
        let family = t[..open].trim();
        let body = &t[open + 1..t.len() - 1];
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| err("bad number"));
        match family {
            "linear" => Ok(ProfitSpec::Linear { slope: num(body)? }),
            "saturating" => {
                let parts: Vec<&str> = body.split(',').collect();
                if parts.len() != 2 {
                    return Err(err("saturating takes two arguments"));
                }
                Ok(ProfitSpec::Saturating { scale: num(parts[0])?, rate: num(parts[1])? })
            }
            "piecewise" => {
                let knots = body
                    .split(';')
                    .map(|kv| {
                        let (x, y) = kv.split_once(':').ok_or_else(|| err("knot must be x:y"))?;
                        Ok((num(x)?, num(y)?))
                    })
                    .collect::<Result<Vec<_>, ProfitParseError>>()?;
                check_knots(&knots).map_err(|r| err(&r))?;
                Ok(ProfitSpec::PiecewiseLinear { knots })
            }
            _ => Err(err("unknown family")),
        }
    }
}

impl TryFrom<String> for ProfitSpec {
    type Error = ProfitParseError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ProfitSpec> for String {
    fn from(p: ProfitSpec) -> String {
        p.to_string()
    }
}

/// Market and control parameters of the two-regime switching problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// GBM drift `b`.
    pub drift: f64,
    pub sigma: f64,
    /// Discount rate.
    pub a1: f64,
    /// Poisson intensity of intervention times.
    pub lambda: f64,
    /// Cost of switching from regime 1 to regime 2.
    pub g12: f64,
    pub g21: f64,
    pub profit1: ProfitSpec,
    pub profit2: ProfitSpec,
    pub x0: f64,
    #[serde(rename = "regime0")]
    pub regime0: Regime,
}

impl ModelSpec {
    pub fn profit(&self, regime: Regime) -> &ProfitSpec {
        match regime {
            Regime::One => &self.profit1,
            Regime::Two => &self.profit2,
        }
    }

    /// Cost of leaving `from` for the other regime.
    pub fn cost(&self, from: Regime) -> f64 {
        match from {
            Regime::One => self.g12,
            Regime::Two => self.g21,
        }
    }

    /// Net running profit `F(x) = h2(x) - h1(x)`.
    pub fn net_profit(&self, x: f64) -> f64 {
        self.profit2.eval(x) - self.profit1.eval(x)
    }

    /// Lipschitz constant shared by both profits.
    pub fn profit_lipschitz(&self) -> f64 {
        self.profit1.lipschitz().max(self.profit2.lipschitz())
    }

    /// `a = -a1 + 2.5 lambda`, the exponent in the integrability requirement.
    pub fn integrability_exponent(&self) -> f64 {
        -self.a1 + 2.5 * self.lambda
    }

    pub fn profits_bounded(&self) -> bool {
        self.profit1.is_bounded() && self.profit2.is_bounded()
    }
}

/// One violated assumption.
#[derive(Clone, Debug, PartialEq, Error, Serialize)]
#[serde(tag = "code")]
pub enum Violation {
    #[error("parameter `{name}` must be finite")]
    NonFinite { name: &'static str },
    #[error("sigma>0 violated (sigma={sigma})")]
    Volatility { sigma: f64 },
    #[error("lambda>0 violated (lambda={lambda})")]
    Intensity { lambda: f64 },
    #[error("x0>0 violated (x0={x0})")]
    InitialState { x0: f64 },
    #[error("a1>max(b,0) violated (a1={a1}, b={b})")]
    Discount { a1: f64, b: f64 },
    #[error("g12+g21>0 violated (g12+g21={sum})")]
    CostSum { sum: f64 },
    #[error("g12>0 violated (g12={g12})")]
    PositiveG12 { g12: f64 },
    #[error("profit{regime}: {reason}")]
    ProfitParameters { regime: u8, reason: String },
    #[error("profit{regime} must be nonnegative on (0,inf)")]
    NegativeProfit { regime: u8 },
    #[error("F=h2-h1>=0 violated (F(0)={f0})")]
    NegativeNetProfit { f0: f64 },
    #[error("F=h2-h1 strictly increasing on (0,inf) violated")]
    NetProfitNotIncreasing,
    #[error("integrability for bounded profits needs a=-a1+2.5*lambda<0 (a={a})")]
    BoundedIntegrability { a: f64 },
    #[error("integrability for linear-growth profits needs 2a+2b+sigma^2<0 (value={value})")]
    LinearIntegrability { value: f64 },
}

impl Violation {
    fn is_integrability(&self) -> bool {
        matches!(self, Violation::BoundedIntegrability { .. } | Violation::LinearIntegrability { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("model validation failed: {}", list(.violations))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ValidateOptions {
    /// Downgrade integrability violations to warnings.
    pub allow_integrability_override: bool,
}

/// A model that passed [`validate`]. Immutable.
#[derive(Clone, Debug)]
pub struct ValidatedModel {
    spec: ModelSpec,
    warnings: Vec<Violation>,
}

impl ValidatedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn warnings(&self) -> &[Violation] {
        &self.warnings
    }

    /// Normalized copy with `h(0) = 0`, plus the offsets `h^i(0)/a1`.
    pub fn normalized(&self) -> (ModelSpec, Offsets) {
        normalize(&self.spec)
    }
}

pub fn validate(spec: &ModelSpec) -> Result<ValidatedModel, ValidationError> {
    validate_with(spec, ValidateOptions::default())
}

/// Checks every assumption and reports all violated rules at once.
pub fn validate_with(spec: &ModelSpec, opts: ValidateOptions) -> Result<ValidatedModel, ValidationError> {
    let violations = collect_violations(spec);
    let (warnings, errors): (Vec<_>, Vec<_>) =
        violations.into_iter().partition(|v| opts.allow_integrability_override && v.is_integrability());
    if errors.is_empty() {
        Ok(ValidatedModel { spec: spec.clone(), warnings })
    } else {
        Err(ValidationError { violations: errors })
    }
}

fn collect_violations(spec: &ModelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let scalars = [
        ("drift", spec.drift),
        ("sigma", spec.sigma),
        ("a1", spec.a1),
        ("lambda", spec.lambda),
        ("g12", spec.g12),
        ("g21", spec.g21),
        ("x0", spec.x0),
    ];
    for (name, v) in scalars {
        if !v.is_finite() {
            out.push(Violation::NonFinite { name });
        }
    }
    if !out.is_empty() {
        return out;
    }
    if spec.sigma <= 0.0 {
        out.push(Violation::Volatility { sigma: spec.sigma });
    }
    if spec.lambda <= 0.0 {
        out.push(Violation::Intensity { lambda: spec.lambda });
    }
    if spec.x0 <= 0.0 {
        out.push(Violation::InitialState { x0: spec.x0 });
    }
    if spec.a1 <= spec.drift.max(0.0) {
        out.push(Violation::Discount { a1: spec.a1, b: spec.drift });
    }
    if spec.g12 + spec.g21 <= 0.0 {
        out.push(Violation::CostSum { sum: spec.g12 + spec.g21 });
    }
    if spec.g12 <= 0.0 {
        out.push(Violation::PositiveG12 { g12: spec.g12 });
    }

    let mut profits_ok = true;
    for (regime, p) in [(1u8, &spec.profit1), (2u8, &spec.profit2)] {
        if let Some(reason) = p.parameter_problem() {
            out.push(Violation::ProfitParameters { regime, reason });
            profits_ok = false;
        } else if !p.is_nonnegative() {
            out.push(Violation::NegativeProfit { regime });
        }
    }
    if !profits_ok {
        return out;
    }

    let f0 = spec.net_profit(0.0);
    if f0 < 0.0 {
        out.push(Violation::NegativeNetProfit { f0 });
    }
    if !net_profit_strictly_increasing(&spec.profit1, &spec.profit2) {
        out.push(Violation::NetProfitNotIncreasing);
    }

    let a = spec.integrability_exponent();
    if spec.profits_bounded() {
        if a >= 0.0 {
            out.push(Violation::BoundedIntegrability { a });
        }
    } else {
        let value = 2.0 * a + 2.0 * spec.drift + spec.sigma * spec.sigma;
        if value >= 0.0 {
            out.push(Violation::LinearIntegrability { value });
        }
    }
    out
}

/// Decides analytically whether `h2 - h1` is strictly increasing on `(0, inf)`.
///
/// Both derivatives are piecewise of the form `c/(1+kx)^2`, so on each common
/// interval the sign of their difference reduces to the sign of an affine
/// function of `x`.
fn net_profit_strictly_increasing(h1: &ProfitSpec, h2: &ProfitSpec) -> bool {
    let p1 = h1.slope_pieces();
    let p2 = h2.slope_pieces();
    let mut breaks: Vec<f64> = p1.iter().chain(p2.iter()).map(|p| p.start).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let active = |pieces: &[SlopePiece], x: f64| *pieces.iter().rev().find(|p| p.start <= x).unwrap_or(&pieces[0]);
    breaks.iter().enumerate().all(|(i, &l)| {
        let r = breaks.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let a = active(&p2, l);
        let b = active(&p1, l);
        difference_positive(a, b, l, r)
    })
}

/// `a.c/(1+a.k x)^2 - b.c/(1+b.k x)^2 > 0` on `(l, r)` except at isolated points.
fn difference_positive(a: SlopePiece, b: SlopePiece, l: f64, r: f64) -> bool {
    let (ac, bc) = (a.c, b.c);
    if ac == 0.0 && bc == 0.0 {
        return false;
    }
    if ac >= 0.0 && bc <= 0.0 {
        return true;
    }
    if ac <= 0.0 && bc >= 0.0 {
        return false;
    }
    // same sign: compare square roots, giving an affine criterion
    let (intercept, slope) = if ac > 0.0 {
        let (sa, sb) = (ac.sqrt(), bc.sqrt());
        (sa - sb, sa * b.k - sb * a.k)
    } else {
        let (sa, sb) = ((-ac).sqrt(), (-bc).sqrt());
        (sb - sa, sb * a.k - sa * b.k)
    };
    let at_l = intercept + slope * l;
    let right_ok = if r.is_finite() { intercept + slope * r >= 0.0 } else { slope >= 0.0 };
    at_l >= 0.0 && right_ok && !(at_l == 0.0 && slope == 0.0)
}

/// `h^i(0)/a1` for each regime, so that `v^i = v_normalized^i + offset_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Offsets(pub [f64; 2]);

/// Shifts profits to vanish at zero and compensates the switching costs.
pub fn normalize(spec: &ModelSpec) -> (ModelSpec, Offsets) {
    let h10 = spec.profit1.at_zero();
    let h20 = spec.profit2.at_zero();
    let mut out = spec.clone();
    out.profit1 = spec.profit1.shifted_to_zero();
    out.profit2 = spec.profit2.shifted_to_zero();
    out.g12 = spec.g12 + (h10 - h20) / spec.a1;
    out.g21 = spec.g21 + (h20 - h10) / spec.a1;
    (out, Offsets([h10 / spec.a1, h20 / spec.a1]))
}

/// Exact `F(inf) = lim (h2 - h1)`, possibly infinite.
pub fn f_limit(spec: &ModelSpec) -> f64 {
    let a1 = spec.profit1.asymptote();
    let a2 = spec.profit2.asymptote();
    let ds = a2.slope - a1.slope;
    if ds > 0.0 {
        f64::INFINITY
    } else if ds < 0.0 {
        f64::NEG_INFINITY
    } else {
        a2.intercept - a1.intercept
    }
}
