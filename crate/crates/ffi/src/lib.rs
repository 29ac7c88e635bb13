//! C ABI over the optswitch solver.
//!
//! Models and solutions are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`OsStatus`]; on failure the
//! message is available from [`os_last_error_message`] on the same thread.
//! Status values 1..=4 match the command-line exit codes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use optswitch::cli::{solve_model, validate_config, verify_model, RunError};
use optswitch::config::RunConfig;
use optswitch::odesolver::ValueSolution;
use optswitch::presets::preset_config;
use optswitch::regions::classify;
use optswitch::simulate::{simulate_policy, PathConfig, PolicySpec};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OsStatus {
    Ok = 0,
    ConfigError = 1,
    NonConvergence = 2,
    VerificationMismatch = 3,
    IoError = 4,
    NullPointer = 5,
    Panic = 6,
}

impl OsStatus {
    fn from_exit_code(code: i32) -> OsStatus {
        match code {
            0 => OsStatus::Ok,
            2 => OsStatus::NonConvergence,
            3 => OsStatus::VerificationMismatch,
            4 => OsStatus::IoError,
            _ => OsStatus::ConfigError,
        }
    }
}

/// Validated model plus grid, tolerance and simulation settings.
pub struct OsModel {
    config: RunConfig,
}

pub struct OsSolution {
    solution: ValueSolution,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OsVerifySummary {
    pub case_predicted: u8,
    /// 0 when the detected regions match no case.
    pub case_observed: u8,
    /// `INFINITY` when the upper switching region is empty.
    pub x_lower1: f64,
    /// 0 when the lower switching region is empty, `INFINITY` when it is everything.
    pub x_upper2: f64,
    pub oracle_sup_rel: f64,
    pub residual: f64,
    pub iterations: usize,
    pub passed: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OsSimulationSummary {
    pub mean: f64,
    pub standard_error: f64,
    pub truncation_bound: f64,
    pub n_paths: usize,
}

struct Failure {
    status: OsStatus,
    message: String,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure { status: OsStatus::from_exit_code(e.exit_code()), message: e.to_string() }
    }
}

impl Failure {
    fn null(what: &str) -> Failure {
        Failure { status: OsStatus::NullPointer, message: format!("null pointer: {what}") }
    }

    fn config(message: impl Into<String>) -> Failure {
        Failure { status: OsStatus::ConfigError, message: message.into() }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OsStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            OsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::config(format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(p: *const OsModel) -> Result<&'a OsModel, Failure> {
    p.as_ref().ok_or_else(|| Failure::null("model"))
}

unsafe fn solution_ref<'a>(p: *const OsSolution) -> Result<&'a OsSolution, Failure> {
    p.as_ref().ok_or_else(|| Failure::null("solution"))
}

fn new_model(config: RunConfig) -> Result<*mut OsModel, Failure> {
    validate_config(&config).map_err(|e| Failure::config(e.to_string()))?;
    Ok(Box::into_raw(Box::new(OsModel { config })))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn os_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn os_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a built-in preset (`"P1"` .. `"P5"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn os_model_from_preset(name: *const c_char, out: *mut *mut OsModel) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let name = text(name, "name")?;
        let cfg = preset_config(name)
            .ok_or_else(|| Failure::config(format!("unknown preset `{name}`")))?
            .map_err(|e| Failure::config(e.to_string()))?;
        *out = new_model(cfg)?;
        Ok(())
    })
}

/// Parses a TOML configuration document (the same format as the CLI's `--config`).
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn os_model_from_config(toml: *const c_char, out: *mut *mut OsModel) -> OsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let cfg = RunConfig::from_toml_str(text(toml, "toml")?).map_err(|e| Failure::config(e.to_string()))?;
        *out = new_model(cfg)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn os_model_free(model: *mut OsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Replaces the grid used by subsequent solves.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn os_model_set_grid(model: *mut OsModel, x_min: f64, x_max: f64, nodes: usize) -> OsStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| Failure::null("model"))?;
        if !(x_min > 0.0 && x_max > x_min) || nodes < 2 {
            return Err(Failure::config(format!("invalid grid x_min={x_min}, x_max={x_max}, nodes={nodes}")));
        }
        m.config.settings.x_min = x_min;
        m.config.settings.x_max = x_max;
        m.config.settings.nodes = nodes;
        Ok(())
    })
}

/// Predicted case number 1..=5 from the parameters alone.
///
/// # Safety
/// `model` must be a live handle and `case_out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_classify(model: *const OsModel, case_out: *mut u8) -> OsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = case_out.as_mut().ok_or_else(|| Failure::null("case_out"))?;
        *out = classify(&m.config.model).map_err(|e| Failure::config(e.to_string()))?.number();
        Ok(())
    })
}

/// Finite-difference solve on the model's grid.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_solve(model: *const OsModel, out: *mut *mut OsSolution) -> OsStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let solution = solve_model(&m.config.model, &m.config.settings)?;
        *out = Box::into_raw(Box::new(OsSolution { solution }));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from [`os_solve`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn os_solution_free(solution: *mut OsSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Number of grid nodes; 0 for NULL.
///
/// # Safety
/// `solution` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn os_solution_len(solution: *const OsSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.solution.grid.len())
}

/// Copies nodes and values into caller buffers of length `len`, which must
/// equal [`os_solution_len`]. Any of `x`, `v1`, `v2` may be NULL to skip it.
///
/// # Safety
/// Non-NULL buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn os_solution_copy(
    solution: *const OsSolution,
    x: *mut f64,
    v1: *mut f64,
    v2: *mut f64,
    len: usize,
) -> OsStatus {
    guard(|| {
        let s = &solution_ref(solution)?.solution;
        if len != s.grid.len() {
            return Err(Failure::config(format!("buffer length {len} != {} nodes", s.grid.len())));
        }
        for (dst, src) in [(x, s.grid.nodes()), (v1, &s.v1[..]), (v2, &s.v2[..])] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
            }
        }
        Ok(())
    })
}

/// Piecewise-linear values at `x > 0` (linear extrapolation outside the grid).
///
/// # Safety
/// `solution` must be a live handle; `v1` and `v2` writable.
#[no_mangle]
pub unsafe extern "C" fn os_solution_interpolate(
    solution: *const OsSolution,
    x: f64,
    v1: *mut f64,
    v2: *mut f64,
) -> OsStatus {
    guard(|| {
        let s = &solution_ref(solution)?.solution;
        if v1.is_null() || v2.is_null() {
            return Err(Failure::null("v1/v2"));
        }
        let (a, b) = s.interpolate(x).map_err(|e| Failure::config(e.to_string()))?;
        *v1 = a;
        *v2 = b;
        Ok(())
    })
}

/// Solve, oracle comparison, region and bound checks. The summary is filled
/// even when the status is `VerificationMismatch`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_verify(model: *const OsModel, out: *mut OsVerifySummary) -> OsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        let r = verify_model(&m.config.model, &m.config.settings)?;
        *out = OsVerifySummary {
            case_predicted: r.regions.case_predicted.map_or(0, |c| c.number()),
            case_observed: r.regions.case_observed.map_or(0, |c| c.number()),
            x_lower1: r.regions.x_lower1.value,
            x_upper2: r.regions.x_upper2.value,
            oracle_sup_rel: r.oracle_sup_rel,
            residual: r.solution.residual_sup,
            iterations: r.solution.iterations,
            passed: r.passed(),
        };
        if !r.passed() {
            return Err(Failure { status: OsStatus::VerificationMismatch, message: r.failures.join("; ") });
        }
        Ok(())
    })
}

/// Monte Carlo payoff of the optimal policy from the model's `x0` and start regime.
///
/// # Safety
/// `model` and `solution` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn os_simulate_optimal(
    model: *const OsModel,
    solution: *const OsSolution,
    n_paths: usize,
    seed: u64,
    out: *mut OsSimulationSummary,
) -> OsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let s = &solution_ref(solution)?.solution;
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        let cfg = PathConfig { n_paths, seed, ..PathConfig::from_settings(&m.config.model, &m.config.settings) };
        let r = simulate_policy(&m.config.model, &PolicySpec::Optimal(s), &cfg, m.config.settings.accuracy)
            .map_err(RunError::from)?;
        *out = OsSimulationSummary {
            mean: r.rows[0].mean,
            standard_error: r.rows[0].se,
            truncation_bound: r.truncation_bound,
            n_paths,
        };
        Ok(())
    })
}
