//! Compiles and runs a C program against the generated header and static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "optswitch.h"

int main(void) {
    OsModel *model = NULL;
    if (os_model_from_preset("P4", &model) != OS_STATUS_OK) return 10;
    uint8_t c = 0;
    if (os_classify(model, &c) != OS_STATUS_OK || c != 4) return 11;
    OsSolution *sol = NULL;
    if (os_solve(model, &sol) != OS_STATUS_OK) return 12;
    double v1 = 0, v2 = 0;
    if (os_solution_interpolate(sol, 1.0, &v1, &v2) != OS_STATUS_OK) return 13;
    if (!(v1 > 0 && isfinite(v2))) return 14;
    if (os_classify(NULL, &c) != OS_STATUS_NULL_POINTER) return 15;
    if (os_last_error_message() == NULL) return 16;
    printf("%zu %.6f %.6f\n", os_solution_len(sol), v1, v2);
    os_solution_free(sol);
    os_model_free(model);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests/<name> lives in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn header_is_current() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/optswitch.h");
    let text = std::fs::read_to_string(header).unwrap();
    for symbol in [
        "os_model_from_preset",
        "os_model_from_config",
        "os_solve",
        "os_verify",
        "os_simulate_optimal",
        "os_last_error_message",
        "OS_STATUS_VERIFICATION_MISMATCH = 3",
        "typedef struct OsModel OsModel;",
    ] {
        assert!(text.contains(symbol), "missing {symbol}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    let lib = target_dir().join("liboptswitch_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("smoke.c");
    let exe = work.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("401 "), "{text}");
}
