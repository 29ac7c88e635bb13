//! Command-line front end and the solve/verify pipeline it drives.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 solver
//! non-convergence, 3 verification mismatch, 4 I/O error.

pub mod output;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::analytic::{check_bounds, AnalyticError, BoundsReport};
use crate::config::{ConfigError, OutputFormat, RunConfig, RunSettings};
use crate::model::{validate_with, ModelSpec, Regime, ValidateOptions, ValidatedModel, ValidationError};
use crate::odesolver::{build_grid, solve_penalized_system, SolveError, SolverSettings, ValueSolution};
use crate::oracle::{compare, value_iteration, OracleError, OracleSettings};
use crate::presets::{preset_config, PRESET_NAMES};
use crate::regions::{classify, verify, ClassifyError, RegionReport};
use crate::simulate::{policy_tournament, PathConfig, SimulationError, SimulationReport};

/// Largest FD-vs-oracle relative sup difference `verify` accepts.
pub const AGREEMENT_TOL: f64 = 2e-3;
/// Slack allowed in the a-priori bound checks.
pub const BOUNDS_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("verification failed: {0}")]
    Mismatch(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Validation(_) | RunError::Classify(_) | RunError::Analytic(_) => 1,
            RunError::Solve(e) => match e {
                SolveError::Grid(_) | SolveError::NarrowGrid(_) | SolveError::NonPositiveDiscount(_) => 1,
                _ => 2,
            },
            RunError::Oracle(e) => match e {
                OracleError::Divergent { .. } => 1,
                _ => 2,
            },
            RunError::Simulation(e) => match e {
                SimulationError::Oracle(_) => 2,
                _ => 1,
            },
            RunError::Mismatch(_) => 3,
            RunError::Io(_) | RunError::Csv(_) => 4,
        }
    }
}

pub fn validate_config(cfg: &RunConfig) -> Result<ValidatedModel, ValidationError> {
    validate_with(
        &cfg.model,
        ValidateOptions { allow_integrability_override: cfg.settings.allow_integrability_override },
    )
}

/// Finite-difference solve on the configured grid.
pub fn solve_model(model: &ModelSpec, settings: &RunSettings) -> Result<ValueSolution, RunError> {
    let grid = build_grid(model, settings.x_min, settings.x_max, settings.nodes).map_err(SolveError::from)?;
    Ok(solve_penalized_system(model, &grid, SolverSettings { tol: settings.tol, max_iter: settings.max_iter })?)
}

/// Outcome of solve + oracle comparison + region and bound checks.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub solution: ValueSolution,
    pub regions: RegionReport,
    pub bounds: BoundsReport,
    pub oracle_sweeps: usize,
    pub oracle_sup_rel: f64,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn verify_model(model: &ModelSpec, settings: &RunSettings) -> Result<VerifyReport, RunError> {
    let solution = solve_model(model, settings)?;
    let oracle = value_iteration(
        model,
        &solution.grid,
        OracleSettings { tol: settings.oracle_tol, ..OracleSettings::default() },
    )?;
    let cmp = compare(&solution, &oracle.solution)?;
    let regions = verify(model, &solution);
    let bounds = check_bounds(model, &solution, BOUNDS_TOL)?;
    let mut failures = Vec::new();
    if !(cmp.sup_rel <= AGREEMENT_TOL) {
        failures.push(format!("FD and oracle differ by {:e} (relative), above {AGREEMENT_TOL:e}", cmp.sup_rel));
    }
    if !regions.consistent() {
        failures.push(format!(
            "regions inconsistent: predicted {:?}, observed {:?}; {}",
            regions.case_predicted.map(|c| c.number()),
            regions.case_observed.map(|c| c.number()),
            regions.diagnostics.join("; ")
        ));
    }
    if !bounds.ok {
        failures.push(format!(
            "a-priori bounds violated: upper slack {:e}, lower slack {:e}, Lipschitz slack {:e}",
            bounds.upper_slack, bounds.lower_slack, bounds.lipschitz_slack
        ));
    }
    Ok(VerifyReport {
        oracle_sweeps: oracle.contraction_ratios.len() + 1,
        oracle_sup_rel: cmp.sup_rel,
        solution,
        regions,
        bounds,
        failures,
    })
}

#[derive(Parser, Debug)]
#[command(name = "optswitch", version, about = "Two-regime optimal switching at Poisson intervention times")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the model assumptions.
    Validate(CommonArgs),
    /// Finite-difference solve; writes the value CSV.
    Solve(CommonArgs),
    /// Predicted region case from the parameters alone.
    Classify(CommonArgs),
    /// Solve, compare with the quadrature oracle, check regions and bounds.
    Verify(CommonArgs),
    /// Monte Carlo tournament of the optimal policy against alternatives.
    Simulate(SimulateArgs),
    /// Vary one parameter and report case and thresholds.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// Built-in preset (P1..P5), or a file in $OPTSWITCH_PRESET_DIR.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// TOML config file with model and run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GridArgs {
    #[arg(long)]
    pub x_min: Option<f64>,
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Output formats, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Vec<OutputFormat>,
    /// Report integrability violations as warnings only.
    #[arg(long)]
    pub allow_integrability_override: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub regime0: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    G12,
    G21,
    Lambda,
    A1,
    Drift,
    Sigma,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::G12 => "g12",
            SweepParam::G21 => "g21",
            SweepParam::Lambda => "lambda",
            SweepParam::A1 => "a1",
            SweepParam::Drift => "drift",
            SweepParam::Sigma => "sigma",
        }
    }

    fn set(self, m: &mut ModelSpec, v: f64) {
        match self {
            SweepParam::G12 => m.g12 = v,
            SweepParam::G21 => m.g21 = v,
            SweepParam::Lambda => m.lambda = v,
            SweepParam::A1 => m.a1 = v,
            SweepParam::Drift => m.drift = v,
            SweepParam::Sigma => m.sigma = v,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, allow_hyphen_values = true)]
    pub from: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub to: f64,
    #[arg(long, default_value_t = 9)]
    pub steps: usize,
    #[arg(long = "preset-base", conflicts_with = "config")]
    pub preset_base: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
}

pub fn load_config(source: &SourceArgs) -> Result<RunConfig, RunError> {
    match (&source.preset, &source.config) {
        (Some(name), None) => preset_config(name).unwrap_or_else(|| {
            Err(ConfigError::new(format!("unknown preset `{name}` (built-in: {})", PRESET_NAMES.join(", "))))
        }),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
            Ok(RunConfig::from_toml_str(&text)?)
        }
        _ => Err(ConfigError::new("give exactly one of --preset or --config".into())),
    }
    .map_err(RunError::from)
}

fn apply_grid(cfg: &mut RunConfig, g: &GridArgs) {
    let s = &mut cfg.settings;
    s.x_min = g.x_min.unwrap_or(s.x_min);
    s.x_max = g.x_max.unwrap_or(s.x_max);
    s.nodes = g.nodes.unwrap_or(s.nodes);
    s.tol = g.tol.unwrap_or(s.tol);
    if let Some(d) = &g.output_dir {
        s.output_dir = d.clone();
    }
    if !g.format.is_empty() {
        s.formats = g.format.clone();
    }
    s.allow_integrability_override |= g.allow_integrability_override;
}

fn prepare(args: &CommonArgs) -> Result<RunConfig, RunError> {
    let mut cfg = load_config(&args.source)?;
    apply_grid(&mut cfg, &args.grid);
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn solution_summary(model: &ModelSpec, s: &ValueSolution) -> Value {
    let r = verify(model, s);
    json!({
        "case_predicted": r.case_predicted.map(|c| c.number()),
        "case_observed": r.case_observed.map(|c| c.number()),
        "x_lower1": output::ext(r.x_lower1.value),
        "x_upper2": output::ext(r.x_upper2.value),
        "advisory": r.advisory,
        "iterations": s.iterations,
        "residual": s.residual_sup,
        "damped": s.damped,
        "nodes": s.grid.len(),
    })
}

/// Writes the value CSV, SVG and JSON summary in the configured formats.
fn emit_solution(cfg: &RunConfig, s: &ValueSolution, summary: &Value) -> Result<(), RunError> {
    let dir = &cfg.settings.output_dir;
    for f in &cfg.settings.formats {
        match f {
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                output::write_csv(&output::value_rows(&cfg.model, s), &mut buf)?;
                write_file(dir, "values.csv", &buf)?;
            }
            OutputFormat::Json => {
                write_file(dir, "summary.json", serde_json::to_string_pretty(summary).unwrap().as_bytes())?
            }
            OutputFormat::Svg => write_file(dir, "regions.svg", output::region_svg(&cfg.model, s).as_bytes())?,
        }
    }
    Ok(())
}

fn cmd_validate(args: &CommonArgs) -> Result<Value, RunError> {
    let cfg = prepare(args)?;
    let v = validate_config(&cfg)?;
    Ok(json!({
        "valid": true,
        "warnings": v.warnings().iter().map(|w| w.to_string()).collect::<Vec<_>>(),
        "integrability_exponent": cfg.model.integrability_exponent(),
        "profits_bounded": cfg.model.profits_bounded(),
    }))
}

fn cmd_classify(args: &CommonArgs) -> Result<Value, RunError> {
    let cfg = prepare(args)?;
    validate_config(&cfg)?;
    let case = classify(&cfg.model)?;
    let m = &cfg.model;
    Ok(json!({
        "case": case.number(),
        "a1_g12": m.a1 * m.g12,
        "a1_g21": m.a1 * m.g21,
        "F_inf": output::ext(crate::model::f_limit(m)),
    }))
}

fn cmd_solve(args: &CommonArgs) -> Result<Value, RunError> {
    let cfg = prepare(args)?;
    validate_config(&cfg)?;
    let s = solve_model(&cfg.model, &cfg.settings)?;
    let summary = solution_summary(&cfg.model, &s);
    emit_solution(&cfg, &s, &summary)?;
    Ok(summary)
}

fn verify_summary(report: &VerifyReport) -> Value {
    let r = &report.regions;
    json!({
        "case_predicted": r.case_predicted.map(|c| c.number()),
        "case_observed": r.case_observed.map(|c| c.number()),
        "x_lower1": output::ext(r.x_lower1.value),
        "x_upper2": output::ext(r.x_upper2.value),
        "advisory": r.advisory,
        "iterations": report.solution.iterations,
        "residual": report.solution.residual_sup,
        "oracle_sweeps": report.oracle_sweeps,
        "oracle_sup_rel": report.oracle_sup_rel,
        "monotone": r.monotone_ok,
        "bounds": report.bounds,
        "passed": report.passed(),
        "failures": report.failures,
    })
}

fn cmd_verify(args: &CommonArgs) -> Result<Value, RunError> {
    let cfg = prepare(args)?;
    validate_config(&cfg)?;
    let report = verify_model(&cfg.model, &cfg.settings)?;
    let summary = verify_summary(&report);
    emit_solution(&cfg, &report.solution, &summary)?;
    if !report.passed() {
        println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        return Err(RunError::Mismatch(report.failures.join("; ")));
    }
    Ok(summary)
}

#[derive(Serialize)]
struct TournamentRow<'a> {
    policy: &'a str,
    mean: f64,
    se: f64,
    mean_minus_optimal: f64,
    se_diff: f64,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<SimulationReport, RunError> {
    let mut cfg = prepare(&args.common)?;
    let s = &mut cfg.settings;
    s.paths = args.paths.unwrap_or(s.paths);
    s.seed = args.seed.unwrap_or(s.seed);
    s.dt = args.dt.or(s.dt);
    s.t_max = args.t_max.or(s.t_max);
    cfg.model.x0 = args.x0.unwrap_or(cfg.model.x0);
    if let Some(r) = args.regime0 {
        cfg.model.regime0 = Regime::try_from(r).map_err(|e| RunError::Config(e.to_string()))?;
    }
    validate_config(&cfg)?;
    let solution = solve_model(&cfg.model, &cfg.settings)?;
    let paths = PathConfig::from_settings(&cfg.model, &cfg.settings);
    let report = policy_tournament(&cfg.model, &solution, &paths, &cfg.settings.perturbations, cfg.settings.accuracy)?;
    let dir = &cfg.settings.output_dir;
    for f in &cfg.settings.formats {
        match f {
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                output::write_csv(&tournament_rows(&report), &mut buf)?;
                write_file(dir, "tournament.csv", &buf)?;
            }
            OutputFormat::Json => {
                write_file(dir, "tournament.json", serde_json::to_string_pretty(&report).unwrap().as_bytes())?
            }
            OutputFormat::Svg => {}
        }
    }
    Ok(report)
}

fn tournament_rows(r: &SimulationReport) -> Vec<TournamentRow<'_>> {
    r.rows
        .iter()
        .map(|row| TournamentRow {
            policy: &row.policy,
            mean: row.mean,
            se: row.se,
            mean_minus_optimal: row.mean_minus_first,
            se_diff: row.se_diff,
        })
        .collect()
}

/// One row of the sweep CSV; thresholds use `inf` when a region is unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub case_predicted: u8,
    /// 0 when the observed regions match no case.
    pub case_observed: u8,
    pub x_lower1: f64,
    pub x_upper2: f64,
    pub passed: bool,
}

pub fn sweep_values(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        n => (0..n).map(|k| from + (to - from) * k as f64 / (n - 1) as f64).collect(),
    }
}

pub fn run_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>, RunError> {
    let source = SourceArgs { preset: args.preset_base.clone(), config: args.config.clone() };
    let mut cfg = load_config(&source)?;
    apply_grid(&mut cfg, &args.grid);
    if args.steps == 0 {
        return Err(RunError::Config("--steps must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for v in sweep_values(args.from, args.to, args.steps) {
        let mut c = cfg.clone();
        args.param.set(&mut c.model, v);
        validate_config(&c).map_err(|e| RunError::Config(format!("{}={v}: {e}", args.param.name())))?;
        let report = verify_model(&c.model, &c.settings)?;
        let r = &report.regions;
        rows.push(SweepRow {
            value: v,
            case_predicted: r.case_predicted.map_or(0, |c| c.number()),
            case_observed: r.case_observed.map_or(0, |c| c.number()),
            x_lower1: r.x_lower1.value,
            x_upper2: r.x_upper2.value,
            passed: report.passed(),
        });
    }
    let dir = &cfg.settings.output_dir;
    for f in &cfg.settings.formats {
        match f {
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                output::write_csv(&rows, &mut buf)?;
                write_file(dir, "sweep.csv", &buf)?;
            }
            OutputFormat::Json => {
                let doc: Vec<Value> = rows
                    .iter()
                    .map(|r| {
                        json!({
                            args.param.name(): r.value,
                            "case_predicted": r.case_predicted,
                            "case_observed": r.case_observed,
                            "x_lower1": output::ext(r.x_lower1),
                            "x_upper2": output::ext(r.x_upper2),
                            "passed": r.passed,
                        })
                    })
                    .collect();
                write_file(dir, "sweep.json", serde_json::to_string_pretty(&doc).unwrap().as_bytes())?
            }
            OutputFormat::Svg => {}
        }
    }
    Ok(rows)
}

fn dispatch(cli: &Cli) -> Result<(), RunError> {
    let print = |v: &Value| println!("{}", serde_json::to_string_pretty(v).unwrap());
    match &cli.command {
        Command::Validate(a) => print(&cmd_validate(a)?),
        Command::Classify(a) => print(&cmd_classify(a)?),
        Command::Solve(a) => print(&cmd_solve(a)?),
        Command::Verify(a) => print(&cmd_verify(a)?),
        Command::Simulate(a) => {
            let report = cmd_simulate(a)?;
            output::write_csv(&tournament_rows(&report), std::io::stdout())?;
        }
        Command::Sweep(a) => {
            let rows = run_sweep(a)?;
            output::write_csv(&rows, std::io::stdout())?;
            if let Some(bad) = rows.iter().find(|r| !r.passed) {
                return Err(RunError::Mismatch(format!("{}={} failed verification", a.param.name(), bad.value)));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs it and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_hits_endpoints() {
        let v = sweep_values(-1.3, 0.3, 9);
        assert_eq!(v.len(), 9);
        assert_eq!(v[0], -1.3);
        assert!((v[8] - 0.3).abs() < 1e-15);
        assert!((v[1] + 1.1).abs() < 1e-12);
        assert_eq!(sweep_values(2.0, 5.0, 1), vec![2.0]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Config("x".into()).exit_code(), 1);
        assert_eq!(RunError::Solve(SolveError::NonConvergence { iterations: 1, residual: 1.0 }).exit_code(), 2);
        assert_eq!(RunError::Mismatch("x".into()).exit_code(), 3);
        assert_eq!(RunError::Io(std::io::Error::other("x")).exit_code(), 4);
    }

    #[test]
    fn verify_passes_on_presets() {
        for name in PRESET_NAMES {
            let cfg = preset_config(name).unwrap().unwrap();
            let r = verify_model(&cfg.model, &cfg.settings).unwrap();
            assert!(r.passed(), "{name}: {:?}", r.failures);
        }
    }
}
