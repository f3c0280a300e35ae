//! The generated header declares the exported API and compiles as C.

use std::path::PathBuf;
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

const FUNCTIONS: [&str; 10] = [
    "sr_fit_trend",
    "sr_fit_dimension",
    "sr_fit_predict",
    "sr_fit_confidence_band",
    "sr_fit_to_json",
    "sr_string_free",
    "sr_fit_free",
    "sr_last_error_message",
    "sr_normal_quantile",
    "sr_version",
];

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(crate_dir().join("include/spatial_ridge.h")).unwrap();
    for f in FUNCTIONS {
        assert!(header.contains(&format!("{f}(")), "missing {f}");
    }
    assert!(header.contains("typedef struct SrFit SrFit;"));
    assert!(header.contains("SR_STATUS_SINGULAR_GRAM = 4"));
}

/// Compiles and runs a small C program against the static library, when a
/// C compiler and the library are available.
#[test]
fn c_program_links_and_runs() {
    let target =
        std::env::var_os("CARGO_TARGET_DIR").map(PathBuf::from).unwrap_or_else(|| crate_dir().join("../../target"));
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = target.join(profile).join("libspatial_ridge_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <math.h>
#include "spatial_ridge.h"
int main(void) {
    double s[40], y[40];
    for (int i = 0; i < 40; i++) { s[i] = -4.9 + 0.25 * i; y[i] = 2.0 + 0.5 * s[i]; }
    double scale = 10.0;
    size_t knots = 2;
    SrFit *fit = NULL;
    if (sr_fit_trend(s, 40, 1, y, &scale, NULL, 3, &knots, 0.0, &fit) != SR_STATUS_OK) {
        fprintf(stderr, "%s\n", sr_last_error_message());
        return 1;
    }
    double q = 1.0, v = 0.0;
    if (sr_fit_predict(fit, &q, 1, &v) != SR_STATUS_OK) return 2;
    if (fabs(v - 2.5) > 1e-9) return 3;
    if (sr_fit_dimension(fit) != 6) return 4;
    sr_fit_free(fit);
    printf("ok\n");
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program failed: {out:?}");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
