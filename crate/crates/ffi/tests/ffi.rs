use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use slowfast_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        sf_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn preset(name: &str, n: usize, coupling: f64) -> Result<*mut SfProblem, (SfStatus, String)> {
    let name = CString::new(name).unwrap();
    let mut p = ptr::null_mut();
    let s = unsafe { sf_problem_preset(name.as_ptr(), n, coupling, 64, &mut p) };
    if s == SfStatus::Ok {
        Ok(p)
    } else {
        Err((s, last_error()))
    }
}

#[test]
fn free_abp_coefficients_are_half_identity() {
    let p = preset("free_abp", 2, 0.0).unwrap();
    let mut dim = 0usize;
    let mut d = [0.0; 4];
    let mut s = [0.0; 4];
    unsafe {
        assert_eq!(sf_problem_dim(p, &mut dim), SfStatus::Ok);
        assert_eq!(sf_problem_diffusivity(p, d.as_mut_ptr(), 4), SfStatus::Ok);
        assert_eq!(sf_problem_mobility(p, s.as_mut_ptr(), 4), SfStatus::Ok);
        sf_problem_free(p);
    }
    assert_eq!(dim, 2);
    for (k, want) in [0.5, 0.0, 0.0, 0.5].into_iter().enumerate() {
        assert!((d[k] - want).abs() < 1e-10, "D = {d:?}");
        assert!((s[k] - want).abs() < 1e-10, "sigma = {s:?}");
    }
}

#[test]
fn von_mises_equilibrium_and_margin() {
    let p = preset("von_mises", 1, 0.0).unwrap();
    let mut m = 0usize;
    let mut kappa = 0.0;
    unsafe {
        assert_eq!(sf_problem_nodes(p, &mut m), SfStatus::Ok);
        let mut g = vec![0.0; m];
        assert_eq!(sf_problem_equilibrium(p, g.as_mut_ptr(), m), SfStatus::Ok);
        assert_eq!(sf_problem_kappa(p, &mut kappa), SfStatus::Ok);
        sf_problem_free(p);
        let mass: f64 = g.iter().sum::<f64>() * std::f64::consts::TAU / m as f64;
        assert!((mass - 1.0).abs() < 1e-12);
        // e^{-cos θ} peaks at θ = ±π, node 0
        let argmax = g.iter().enumerate().fold(0, |a, (i, x)| if *x > g[a] { i } else { a });
        assert_eq!(argmax, 0);
    }
    assert!(kappa > 0.0);
}

#[test]
fn errors_carry_status_and_message() {
    let (s, msg) = preset("no_such_model", 1, 0.0).unwrap_err();
    assert_eq!(s, SfStatus::Config);
    assert!(msg.contains("no_such_model"), "{msg}");

    let (s, _) = preset("free_abp", 3, 0.0).unwrap_err();
    assert_eq!(s, SfStatus::InvalidArgument);

    let mut p = ptr::null_mut();
    assert_eq!(unsafe { sf_problem_preset(ptr::null(), 1, 0.0, 64, &mut p) }, SfStatus::NullPointer);

    let p = preset("free_abp", 2, 0.0).unwrap();
    let mut d = [0.0; 3];
    unsafe {
        assert_eq!(sf_problem_diffusivity(p, d.as_mut_ptr(), 3), SfStatus::BufferTooSmall);
        assert_eq!(sf_problem_diffusivity(ptr::null(), d.as_mut_ptr(), 3), SfStatus::NullPointer);
        sf_problem_free(p);
        sf_problem_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_reports_full_length() {
    let _ = preset("no_such_model", 1, 0.0);
    let full = unsafe { sf_last_error(ptr::null_mut(), 0) };
    let mut buf = [1 as c_char; 8];
    let n = unsafe { sf_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full);
    assert!(n > 8);
    assert_eq!(buf[7], 0);
    let _ = preset("free_abp", 1, 0.0).unwrap();
    assert_eq!(unsafe { sf_last_error(ptr::null_mut(), 0) }, 0);
}

#[test]
fn toml_config_builds_problem() {
    let good = CString::new("[model]\npreset = \"von_mises\"\nn = 1\n[grid]\nm = 32\nnodes = 16\n").unwrap();
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(sf_problem_from_toml(good.as_ptr(), &mut p), SfStatus::Ok);
        let mut m = 0;
        sf_problem_nodes(p, &mut m);
        assert_eq!(m, 32);
        sf_problem_free(p);
    }
    let bad = CString::new("[model]\ngamma = -1.0\n").unwrap();
    assert_eq!(unsafe { sf_problem_from_toml(bad.as_ptr(), &mut p) }, SfStatus::Config);
    assert!(last_error().contains("model.gamma"));
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(sf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/slowfast.h")
}

#[test]
fn header_declares_the_interface() {
    let h = std::fs::read_to_string(header()).unwrap();
    for decl in [
        "typedef struct SfProblem SfProblem",
        "SF_STATUS_OK = 0",
        "SF_STATUS_PANIC",
        "sf_problem_preset(",
        "sf_problem_from_toml(",
        "sf_problem_diffusivity(",
        "sf_problem_kappa(",
        "sf_last_error(",
        "void sf_problem_free(",
    ] {
        assert!(h.contains(decl), "header lacks `{decl}`");
    }
}

/// The static library of this build: in `deps/` next to the test binary, or one level up.
fn static_lib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    [deps, deps.parent().unwrap()].iter().map(|d| d.join("libslowfast_ffi.a")).find(|p| p.exists()).expect("libslowfast_ffi.a not built")
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = static_lib();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "slowfast.h"

int main(void) {
    SfProblem *p = NULL;
    if (sf_problem_preset("free_abp", 2, 0.0, 64, &p) != SF_STATUS_OK) return 10;
    double d[4];
    if (sf_problem_diffusivity(p, d, 4) != SF_STATUS_OK) return 11;
    sf_problem_free(p);
    printf("%.12f %.12f\n", d[0], d[3]);
    if (sf_problem_preset("bogus", 1, 0.0, 64, &p) != SF_STATUS_CONFIG) return 12;
    char msg[256];
    sf_last_error(msg, sizeof msg);
    printf("%s\n", msg);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap_or_else(|e| panic!("running {cc}: {e}"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&run.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("0.500000000000 0.500000000000"));
    assert!(lines.next().unwrap().contains("bogus"));
}
