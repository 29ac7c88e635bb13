//! Monte Carlo execution of switching policies at Poisson intervention times.
//!
//! Every path is driven by its own ChaCha stream (`seed`, stream = path
//! index), so results do not depend on thread count, and all policies in one
//! run see the same state path and arrival times.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunSettings;
use crate::model::{ModelSpec, Regime};
use crate::odesolver::ValueSolution;
use crate::oracle::{resolvent, OracleError};
use crate::regions::verify;

/// Residual above which a solution is not accepted as an optimal policy.
pub const MAX_POLICY_RESIDUAL: f64 = 1e-6;

/// Paths handled by one parallel task; fixed so the reduction order is too.
const CHUNK: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error("truncation bound {bound:e} exceeds requested accuracy {accuracy:e}; use t_max >= {suggested_t_max:.3}")]
    Budget { bound: f64, accuracy: f64, suggested_t_max: f64 },
    #[error("time step {dt} exceeds 1/(10 (a1 + lambda)) = {max}")]
    StepTooLarge { dt: f64, max: f64 },
    #[error("simulation needs a1 > b (a1={a1}, b={b})")]
    NotDiscounted { a1: f64, b: f64 },
    #[error("invalid path configuration: {0}")]
    InvalidConfig(String),
    #[error("threshold policy needs x2 <= x1, got x1={x1}, x2={x2}")]
    Unordered { x1: f64, x2: f64 },
    #[error("optimal policy needs a converged solution (residual {0:e})")]
    Unconverged(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Debug)]
pub enum PolicySpec<'a> {
    /// Switch at an arrival iff `v^i <= v^j - g^ij` at the current state.
    Optimal(&'a ValueSolution),
    Never,
    Always,
    /// Regime 1 switches when `X >= x1`, regime 2 when `X <= x2`.
    Threshold {
        x1: f64,
        x2: f64,
    },
}

impl PolicySpec<'_> {
    fn check(&self) -> Result<(), SimulationError> {
        match *self {
            PolicySpec::Optimal(s) if !(s.residual_sup <= MAX_POLICY_RESIDUAL) => {
                Err(SimulationError::Unconverged(s.residual_sup))
            }
            PolicySpec::Threshold { x1, x2 } if !(x2 <= x1) => Err(SimulationError::Unordered { x1, x2 }),
            _ => Ok(()),
        }
    }

    fn switches(&self, model: &ModelSpec, regime: Regime, x: f64) -> bool {
        match *self {
            PolicySpec::Never => false,
            PolicySpec::Always => true,
            PolicySpec::Threshold { x1, x2 } => match regime {
                Regime::One => x >= x1,
                Regime::Two => x <= x2,
            },
            PolicySpec::Optimal(s) => {
                let v1 = s.grid.interpolate_unchecked(&s.v1, x);
                let v2 = s.grid.interpolate_unchecked(&s.v2, x);
                match regime {
                    Regime::One => v1 <= v2 - model.g12,
                    Regime::Two => v2 <= v1 - model.g21,
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            PolicySpec::Optimal(_) => "optimal".into(),
            PolicySpec::Never => "never".into(),
            PolicySpec::Always => "always".into(),
            PolicySpec::Threshold { x1, x2 } => format!("threshold(x1={x1:.6},x2={x2:.6})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathConfig {
    pub x0: f64,
    pub regime0: Regime,
    pub t_max: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Largest admissible step `1 / (10 (a1 + lambda))`.
pub fn max_step(model: &ModelSpec) -> f64 {
    1.0 / (10.0 * (model.a1 + model.lambda))
}

/// Default horizon `40 / (a1 - max(b, 0))`.
pub fn default_horizon(model: &ModelSpec) -> f64 {
    40.0 / (model.a1 - model.drift.max(0.0))
}

/// `C x0 e^{(b - a1) T} / (a1 - b)`: discounted profit beyond the horizon.
pub fn truncation_bound(model: &ModelSpec, x0: f64, t_max: f64) -> f64 {
    let gap = model.a1 - model.drift;
    model.profit_lipschitz() * x0 * (-gap * t_max).exp() / gap
}

impl PathConfig {
    /// Configuration from the model's start state and run settings.
    pub fn from_settings(model: &ModelSpec, settings: &RunSettings) -> PathConfig {
        PathConfig {
            x0: model.x0,
            regime0: model.regime0,
            t_max: settings.t_max.unwrap_or_else(|| default_horizon(model)),
            dt: settings.dt.unwrap_or_else(|| max_step(model)),
            n_paths: settings.paths,
            seed: settings.seed,
        }
    }

    /// Checks the step and horizon against the model; returns the truncation bound.
    pub fn check(&self, model: &ModelSpec, accuracy: f64) -> Result<f64, SimulationError> {
        if model.a1 <= model.drift {
            return Err(SimulationError::NotDiscounted { a1: model.a1, b: model.drift });
        }
        if !(self.x0 > 0.0) || !(self.t_max > 0.0) || !(self.dt > 0.0) || self.n_paths < 2 {
            return Err(SimulationError::InvalidConfig(format!(
                "x0={}, t_max={}, dt={}, n_paths={}",
                self.x0, self.t_max, self.dt, self.n_paths
            )));
        }
        let max = max_step(model);
        if self.dt > max * (1.0 + 1e-12) {
            return Err(SimulationError::StepTooLarge { dt: self.dt, max });
        }
        let bound = truncation_bound(model, self.x0, self.t_max);
        if bound > accuracy {
            let gap = model.a1 - model.drift;
            let need = (model.profit_lipschitz() * self.x0 / (gap * accuracy)).ln() / gap;
            return Err(SimulationError::Budget { bound, accuracy, suggested_t_max: need.max(self.t_max) });
        }
        Ok(bound)
    }
}

/// Running mean and second central moment, mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn se(&self) -> f64 {
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

#[derive(Clone, Debug, Default)]
struct Tally {
    payoff: Vec<Moments>,
    /// Paired `payoff[0] - payoff[k]`.
    diff: Vec<Moments>,
    switches: Vec<BTreeMap<usize, u64>>,
    arrivals: Moments,
}

impl Tally {
    fn new(policies: usize) -> Tally {
        Tally {
            payoff: vec![Moments::default(); policies],
            diff: vec![Moments::default(); policies],
            switches: vec![BTreeMap::new(); policies],
            arrivals: Moments::default(),
        }
    }

    fn merge(&mut self, o: &Tally) {
        for k in 0..self.payoff.len() {
            self.payoff[k].merge(&o.payoff[k]);
            self.diff[k].merge(&o.diff[k]);
            for (&c, &n) in &o.switches[k] {
                *self.switches[k].entry(c).or_default() += n;
            }
        }
        self.arrivals.merge(&o.arrivals);
    }
}

struct PolicyState {
    regime: Regime,
    payoff: f64,
    switches: usize,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulates one path, evaluating every policy on it.
fn run_path(model: &ModelSpec, policies: &[PolicySpec], cfg: &PathConfig, path: usize, tally: &mut Tally) {
    let mut rng = path_rng(cfg.seed, path);
    let arrival = Exp::new(model.lambda).expect("lambda > 0");
    let mu = model.drift - 0.5 * model.sigma * model.sigma;
    let a1 = model.a1;
    let mut states: Vec<PolicyState> =
        policies.iter().map(|_| PolicyState { regime: cfg.regime0, payoff: 0.0, switches: 0 }).collect();

    let steps = (cfg.t_max / cfg.dt).ceil() as usize;
    let (mut t, mut x) = (0.0f64, cfg.x0);
    let mut next_arrival: f64 = rng.sample(arrival);
    let mut arrivals = 0usize;
    let mut h = [model.profit1.eval(x), model.profit2.eval(x)];
    let mut disc = 1.0f64;
    for k in 1..=steps {
        let t_grid = (k as f64 * cfg.dt).min(cfg.t_max);
        loop {
            let is_arrival = next_arrival <= t_grid;
            let t_next = if is_arrival { next_arrival } else { t_grid };
            let tau = t_next - t;
            let z: f64 = rng.sample(StandardNormal);
            let x_next = x * (mu * tau + model.sigma * tau.sqrt() * z).exp();
            let h_next = [model.profit1.eval(x_next), model.profit2.eval(x_next)];
            let disc_next = (-a1 * t_next).exp();
            for st in states.iter_mut() {
                let r = st.regime.index();
                st.payoff += 0.5 * tau * (disc * h[r] + disc_next * h_next[r]);
            }
            t = t_next;
            x = x_next;
            h = h_next;
            disc = disc_next;
            if !is_arrival {
                break;
            }
            arrivals += 1;
            for (st, p) in states.iter_mut().zip(policies) {
                if p.switches(model, st.regime, x) {
                    st.payoff -= disc * model.cost(st.regime);
                    st.regime = st.regime.other();
                    st.switches += 1;
                }
            }
            next_arrival += rng.sample(arrival);
        }
    }

    let base = states[0].payoff;
    for (k, st) in states.iter().enumerate() {
        tally.payoff[k].push(st.payoff);
        tally.diff[k].push(base - st.payoff);
        *tally.switches[k].entry(st.switches).or_default() += 1;
    }
    tally.arrivals.push(arrivals as f64);
}

fn run_all(model: &ModelSpec, policies: &[PolicySpec], cfg: &PathConfig) -> Tally {
    let chunks = cfg.n_paths.div_ceil(CHUNK);
    let partial: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut tally = Tally::new(policies.len());
            for p in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_paths) {
                run_path(model, policies, cfg, p, &mut tally);
            }
            tally
        })
        .collect();
    let mut total = Tally::new(policies.len());
    for t in &partial {
        total.merge(t);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyRow {
    pub policy: String,
    pub mean: f64,
    pub se: f64,
    /// `mean - mean of the first policy` (the optimal one in a tournament).
    pub mean_minus_first: f64,
    /// Standard error of the paired difference to the first policy.
    pub se_diff: f64,
    pub switch_histogram: BTreeMap<usize, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArrivalStats {
    pub mean: f64,
    pub se: f64,
    /// `lambda * t_max`.
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationReport {
    pub config: PathConfig,
    pub truncation_bound: f64,
    pub arrivals: ArrivalStats,
    pub rows: Vec<PolicyRow>,
}

impl SimulationReport {
    pub fn row(&self, policy: &str) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

/// Runs `policies` on common paths; the first policy is the comparison base.
pub fn simulate_policies(
    model: &ModelSpec,
    policies: &[PolicySpec],
    cfg: &PathConfig,
    accuracy: f64,
) -> Result<SimulationReport, SimulationError> {
    let truncation_bound = cfg.check(model, accuracy)?;
    if policies.is_empty() {
        return Err(SimulationError::InvalidConfig("no policies".into()));
    }
    for p in policies {
        p.check()?;
    }
    let tally = run_all(model, policies, cfg);
    let rows = policies
        .iter()
        .enumerate()
        .map(|(k, p)| PolicyRow {
            policy: p.label(),
            mean: tally.payoff[k].mean,
            se: tally.payoff[k].se(),
            mean_minus_first: -tally.diff[k].mean,
            se_diff: if k == 0 { 0.0 } else { tally.diff[k].se() },
            switch_histogram: tally.switches[k].clone(),
        })
        .collect();
    Ok(SimulationReport {
        config: cfg.clone(),
        truncation_bound,
        arrivals: ArrivalStats {
            mean: tally.arrivals.mean,
            se: tally.arrivals.se(),
            expected: model.lambda * cfg.t_max,
        },
        rows,
    })
}

pub fn simulate_policy(
    model: &ModelSpec,
    policy: &PolicySpec,
    cfg: &PathConfig,
    accuracy: f64,
) -> Result<SimulationReport, SimulationError> {
    simulate_policies(model, std::slice::from_ref(policy), cfg, accuracy)
}

/// Optimal, never, always and threshold policies with each finite threshold
/// scaled by `1 + p` for every `p` in `perturbations`.
pub fn policy_tournament(
    model: &ModelSpec,
    solution: &ValueSolution,
    cfg: &PathConfig,
    perturbations: &[f64],
    accuracy: f64,
) -> Result<SimulationReport, SimulationError> {
    let report = verify(model, solution);
    let (x1, x2) = (report.x_lower1.value, report.x_upper2.value);
    let mut policies = vec![PolicySpec::Optimal(solution), PolicySpec::Never, PolicySpec::Always];
    for &p in perturbations {
        if x1.is_finite() && x1 > 0.0 {
            let x1p = x1 * (1.0 + p);
            policies.push(PolicySpec::Threshold { x1: x1p, x2: x2.min(x1p) });
        }
        if x2.is_finite() && x2 > 0.0 {
            let x2p = x2 * (1.0 + p);
            policies.push(PolicySpec::Threshold { x1: x1.max(x2p), x2: x2p });
        }
    }
    simulate_policies(model, &policies, cfg, accuracy)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscountEstimate {
    pub mean: f64,
    pub se: f64,
    pub exact: f64,
    /// `lambda R_{a1+lambda}[1]` by the oracle quadrature.
    pub quadrature: f64,
}

/// `E[e^{-a1 T1}]` for the first arrival `T1 ~ Exp(lambda)`.
pub fn estimate_first_arrival_discount(
    model: &ModelSpec,
    n_paths: usize,
    seed: u64,
) -> Result<DiscountEstimate, SimulationError> {
    if n_paths < 2 {
        return Err(SimulationError::InvalidConfig(format!("n_paths={n_paths}")));
    }
    let arrival = Exp::new(model.lambda).map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;
    let chunks = n_paths.div_ceil(CHUNK);
    let partial: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = Moments::default();
            for p in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                let t1: f64 = path_rng(seed, p).sample(arrival);
                m.push((-model.a1 * t1).exp());
            }
            m
        })
        .collect();
    let mut total = Moments::default();
    partial.iter().for_each(|m| total.merge(m));
    let q = model.a1 + model.lambda;
    let quadrature = model.lambda * resolvent(model, q, 0.0, |_| 1.0, model.x0)?;
    Ok(DiscountEstimate { mean: total.mean, se: total.se(), exact: model.lambda / q, quadrature })
}
