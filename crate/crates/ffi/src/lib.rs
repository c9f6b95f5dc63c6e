//! C interface: build a problem from a preset or a TOML config, then read its equilibrium,
//! transport matrices and dissipativity margin.
//!
//! Every function returns an [`SfStatus`]. On failure the message is kept per thread and can be
//! copied out with [`sf_last_error`]. Panics are caught at the boundary and reported as
//! `SF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slowfast::config::RunConfig;
use slowfast::equilibrium::EquilibriumOptions;
use slowfast::grid::SpatialGrid;
use slowfast::linops::dissipativity_margin;
use slowfast::model::ModelSpec;
use slowfast::problem::Problem;
use slowfast::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque handle to a solved problem: equilibrium, linearized operators and coefficients.
pub struct SfProblem {
    inner: Problem,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

type Failure = (SfStatus, String);

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn from_core(e: Error) -> Failure {
    let status = match e {
        Error::Config { .. } | Error::InvalidModel { .. } | Error::InvalidGrid(_) => SfStatus::Config,
        Error::Io(_) | Error::Serialization(_) => SfStatus::Io,
        _ => SfStatus::Numerical,
    };
    (status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (SfStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| (SfStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a>(p: *const SfProblem) -> Result<&'a Problem, Failure> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("problem"))
}

unsafe fn write_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < values.len() {
        return Err((SfStatus::BufferTooSmall, format!("need {} values, buffer holds {len}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn store(p: Problem, out: *mut *mut SfProblem) {
    *out = Box::into_raw(Box::new(SfProblem { inner: p }));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated, always NUL-terminated
/// when `len > 0`) and returns its full length in bytes without the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a preset model (`free_abp`, `von_mises` or `active_2d`) with `n` spatial dimensions
/// on `m` angular nodes. `coupling` is the pair-interaction strength.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer. On success `*out` owns a
/// handle to be released with [`sf_problem_free`].
#[no_mangle]
pub unsafe extern "C" fn sf_problem_preset(name: *const c_char, n: usize, coupling: f64, m: usize, out: *mut *mut SfProblem) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        if !(1..=2).contains(&n) {
            return Err((SfStatus::InvalidArgument, format!("dimension must be 1 or 2, got {n}")));
        }
        let spec = ModelSpec::builtin(name, n, coupling).map_err(from_core)?;
        let space = SpatialGrid::cube(n, std::f64::consts::TAU, 16).map_err(from_core)?;
        let p = Problem::build(&spec, m, space, &EquilibriumOptions::default()).map_err(from_core)?;
        store(p, out);
        Ok(())
    })
}

/// Builds the problem described by a TOML configuration (same schema as the command line tool).
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer. On success `*out` owns a
/// handle to be released with [`sf_problem_free`].
#[no_mangle]
pub unsafe extern "C" fn sf_problem_from_toml(toml: *const c_char, out: *mut *mut SfProblem) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::from_toml_str(str_arg(toml, "toml")?).map_err(from_core)?;
        store(cfg.problem().map_err(from_core)?, out);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sf_problem_free(p: *mut SfProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Spatial dimension n; the matrices below are n×n, row-major.
///
/// # Safety
/// `p` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_problem_dim(p: *const SfProblem, out: *mut usize) -> SfStatus {
    guard(|| {
        let p = handle(p)?;
        out.as_mut().ok_or_else(|| null("out")).map(|o| *o = p.dim())
    })
}

/// Number of angular nodes, the length of the equilibrium density.
///
/// # Safety
/// `p` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_problem_nodes(p: *const SfProblem, out: *mut usize) -> SfStatus {
    guard(|| {
        let p = handle(p)?;
        out.as_mut().ok_or_else(|| null("out")).map(|o| *o = p.model.m())
    })
}

/// Equilibrium density G at the angular nodes θ_j = -π + 2πj/m.
///
/// # Safety
/// `p` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_problem_equilibrium(p: *const SfProblem, out: *mut f64, len: usize) -> SfStatus {
    guard(|| write_out(&handle(p)?.eq.g, out, len))
}

/// Diffusivity matrix D.
///
/// # Safety
/// `p` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_problem_diffusivity(p: *const SfProblem, out: *mut f64, len: usize) -> SfStatus {
    guard(|| write_out(&handle(p)?.coeffs.dmat.concat(), out, len))
}

/// Mobility matrix σ.
///
/// # Safety
/// `p` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_problem_mobility(p: *const SfProblem, out: *mut f64, len: usize) -> SfStatus {
    guard(|| write_out(&handle(p)?.coeffs.sigma.concat(), out, len))
}

/// Dissipativity margin κ of the linearized operator.
///
/// # Safety
/// `p` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_problem_kappa(p: *const SfProblem, out: *mut f64) -> SfStatus {
    guard(|| {
        let p = handle(p)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = dissipativity_margin(&p.model, &p.ops).map_err(from_core)?;
        Ok(())
    })
}
