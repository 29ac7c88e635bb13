use std::ffi::{CStr, CString};
use std::ptr;

use optswitch_ffi::*;

fn preset(name: &str) -> *mut OsModel {
    let name = CString::new(name).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { os_model_from_preset(name.as_ptr(), &mut m) }, OsStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = os_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn classify_presets() {
    for (name, want) in [("P1", 1), ("P2", 2), ("P3", 3), ("P4", 4), ("P5", 5)] {
        let m = preset(name);
        let mut case = 0u8;
        assert_eq!(unsafe { os_classify(m, &mut case) }, OsStatus::Ok);
        assert_eq!(case, want);
        unsafe { os_model_free(m) };
    }
}

#[test]
fn solve_copy_and_interpolate() {
    let m = preset("P5");
    assert_eq!(unsafe { os_model_set_grid(m, 1e-3, 1e3, 201) }, OsStatus::Ok);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { os_solve(m, &mut s) }, OsStatus::Ok);
    let n = unsafe { os_solution_len(s) };
    assert_eq!(n, 201);
    let (mut x, mut v1) = (vec![0.0; n], vec![0.0; n]);
    assert_eq!(unsafe { os_solution_copy(s, x.as_mut_ptr(), v1.as_mut_ptr(), ptr::null_mut(), n) }, OsStatus::Ok);
    assert_eq!(x[0], 1e-3);
    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { os_solution_interpolate(s, x[100], &mut a, &mut b) }, OsStatus::Ok);
    assert_eq!(a, v1[100]);
    assert_eq!(
        unsafe { os_solution_copy(s, x.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 7) },
        OsStatus::ConfigError
    );
    assert!(last_error().contains("buffer length"));
    assert_eq!(unsafe { os_solution_interpolate(s, -1.0, &mut a, &mut b) }, OsStatus::ConfigError);
    unsafe {
        os_solution_free(s);
        os_model_free(m);
    }
}

#[test]
fn verify_reports_thresholds() {
    let m = preset("P5");
    let mut summary = OsVerifySummary::default();
    assert_eq!(unsafe { os_verify(m, &mut summary) }, OsStatus::Ok, "{}", last_error_or_empty());
    assert!(summary.passed);
    assert_eq!((summary.case_predicted, summary.case_observed), (5, 5));
    assert!(0.0 < summary.x_upper2 && summary.x_upper2 < summary.x_lower1 && summary.x_lower1.is_finite());
    assert!(os_last_error_message().is_null());
    unsafe { os_model_free(m) };

    let m = preset("P3");
    assert_eq!(unsafe { os_verify(m, &mut summary) }, OsStatus::Ok);
    assert_eq!(summary.x_upper2, f64::INFINITY);
    unsafe { os_model_free(m) };
}

fn last_error_or_empty() -> String {
    let p = os_last_error_message();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

#[test]
fn config_document_and_validation_errors() {
    let good = CString::new(
        "drift = 0.05\nsigma = 0.3\na1 = 1.0\nlambda = 0.3\ng12 = 0.4\ng21 = 0.2\n\
         profit1 = \"zero\"\nprofit2 = \"saturating(1,1)\"\nx0 = 1.0\nregime0 = 2\nnodes = 101\n",
    )
    .unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { os_model_from_config(good.as_ptr(), &mut m) }, OsStatus::Ok);
    let mut case = 0;
    assert_eq!(unsafe { os_classify(m, &mut case) }, OsStatus::Ok);
    assert_eq!(case, 4);
    unsafe { os_model_free(m) };

    let bad = CString::new(
        "drift = 0.05\nsigma = 0.3\na1 = 1.0\nlambda = 0.3\ng12 = 0.4\ng21 = -0.5\n\
         profit1 = \"zero\"\nprofit2 = \"saturating(1,1)\"\nx0 = 1.0\nregime0 = 1\n",
    )
    .unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { os_model_from_config(bad.as_ptr(), &mut m) }, OsStatus::ConfigError);
    assert!(m.is_null());
    assert!(last_error().contains("g12+g21>0 violated"));

    let junk = CString::new("drift = [").unwrap();
    assert_eq!(unsafe { os_model_from_config(junk.as_ptr(), &mut m) }, OsStatus::ConfigError);
    let unknown = CString::new("P9").unwrap();
    assert_eq!(unsafe { os_model_from_preset(unknown.as_ptr(), &mut m) }, OsStatus::ConfigError);
    assert!(last_error().contains("unknown preset"));
}

#[test]
fn null_handles_are_rejected() {
    let mut case = 0;
    assert_eq!(unsafe { os_classify(ptr::null(), &mut case) }, OsStatus::NullPointer);
    assert!(last_error().contains("null pointer"));
    assert_eq!(unsafe { os_model_from_preset(ptr::null(), ptr::null_mut()) }, OsStatus::NullPointer);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { os_solve(ptr::null(), &mut s) }, OsStatus::NullPointer);
    assert_eq!(unsafe { os_solution_len(ptr::null()) }, 0);
    unsafe {
        os_model_free(ptr::null_mut());
        os_solution_free(ptr::null_mut());
    }
}

#[test]
fn invalid_and_narrow_grids() {
    let m = preset("P4");
    assert_eq!(unsafe { os_model_set_grid(m, 1.0, 0.5, 101) }, OsStatus::ConfigError);
    assert_eq!(unsafe { os_model_set_grid(m, 0.1, 10.0, 101) }, OsStatus::Ok);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { os_solve(m, &mut s) }, OsStatus::ConfigError);
    assert!(last_error().contains("x_max/x_min"));
    unsafe { os_model_free(m) };
}

#[test]
fn simulate_matches_value() {
    let m = preset("P4");
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { os_solve(m, &mut s) }, OsStatus::Ok);
    let mut out = OsSimulationSummary::default();
    assert_eq!(unsafe { os_simulate_optimal(m, s, 20_000, 11, &mut out) }, OsStatus::Ok);
    let (mut v1, mut v2) = (0.0, 0.0);
    assert_eq!(unsafe { os_solution_interpolate(s, 1.0, &mut v1, &mut v2) }, OsStatus::Ok);
    assert!((out.mean - v1).abs() < 3.0 * out.standard_error, "{out:?} vs {v1}");
    assert_eq!(out.n_paths, 20_000);
    unsafe {
        os_solution_free(s);
        os_model_free(m);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(os_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
