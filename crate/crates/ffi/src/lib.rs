//! C interface to `monohom`.
//!
//! Every function returns a [`MonohomStatus`]; on failure the message is
//! available from [`monohom_last_error`]. Handles are opaque and must be
//! released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use monohom::cli::runner::{self, Threads};
use monohom::cli::ExperimentConfig;
use monohom::corrector::{solve_corrector, solve_flux_corrector, CorrectorBundle};
use monohom::field::CoefficientRecipe;
use monohom::grid::{Grid, Mat3, Vec3, ZERO3, ZERO33};
use monohom::operator::OperatorSpec;
use monohom::rng::SampleSeed;
use monohom::solver::SolverConfig;
use monohom::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonohomStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotConverged = 3,
    Invariant = 4,
    Config = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

pub struct MonohomGrid(Grid);

pub struct MonohomOperator(OperatorSpec);

pub struct MonohomCorrector(CorrectorBundle);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> MonohomStatus {
    match e {
        Error::NotConverged { .. } | Error::LineSearchStagnation { .. } | Error::OutOfTable { .. } => {
            MonohomStatus::NotConverged
        }
        Error::Invariant(_) => MonohomStatus::Invariant,
        Error::Config(_) => MonohomStatus::Config,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => MonohomStatus::Io,
        Error::Sample { source, .. } => status_of(source),
        _ => MonohomStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MonohomStatus>) -> MonohomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MonohomStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            MonohomStatus::Panic
        }
    }
}

fn fail(e: Error) -> MonohomStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(name: &str) -> MonohomStatus {
    set_error(format!("{name} is null"));
    MonohomStatus::NullPointer
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, MonohomStatus> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn read_vec(p: *const f64, d: usize, name: &str) -> Result<Vec3, MonohomStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    let mut v = ZERO3;
    v[..d].copy_from_slice(std::slice::from_raw_parts(p, d));
    Ok(v)
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, MonohomStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        MonohomStatus::InvalidArgument
    })
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), MonohomStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn monohom_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn monohom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Torus `[0, length)^d` with `n` points per axis.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn monohom_grid_new(d: usize, length: f64, n: usize, out: *mut *mut MonohomGrid) -> MonohomStatus {
    guard(|| {
        let g = Grid::new(d, length, n).map_err(fail)?;
        put(out, MonohomGrid(g))
    })
}

/// # Safety
/// `grid` must come from [`monohom_grid_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn monohom_grid_free(grid: *mut MonohomGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of lattice points, or 0 for a null handle.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn monohom_grid_len(grid: *const MonohomGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// Operator with the constant matrix `m` (`d * d` entries, row-major).
///
/// # Safety
/// `grid` must be live, `m` must hold `d * d` values, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn monohom_operator_constant(
    grid: *const MonohomGrid,
    p: f64,
    lambda: f64,
    m: *const f64,
    out: *mut *mut MonohomOperator,
) -> MonohomStatus {
    guard(|| {
        let g = as_ref(grid, "grid")?.0;
        let d = g.dim();
        if m.is_null() {
            return Err(null("m"));
        }
        let vals = std::slice::from_raw_parts(m, d * d);
        let mut mat: Mat3 = ZERO33;
        for i in 0..d {
            mat[i][..d].copy_from_slice(&vals[i * d..(i + 1) * d]);
        }
        let op = OperatorSpec::constant(g, p, lambda, &mat).map_err(fail)?;
        put(out, MonohomOperator(op))
    })
}

/// Sample `index` of the isotropic Gaussian recipe with correlation length
/// `ell_c`, seeded by `root`.
///
/// # Safety
/// `grid` must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn monohom_operator_random(
    grid: *const MonohomGrid,
    p: f64,
    lambda: f64,
    ell_c: f64,
    root: u64,
    index: u64,
    out: *mut *mut MonohomOperator,
) -> MonohomStatus {
    guard(|| {
        let g = as_ref(grid, "grid")?.0;
        let recipe = CoefficientRecipe::isotropic_tanh(lambda, ell_c);
        recipe.validate(g.dim()).map_err(fail)?;
        let (_, a) = recipe.sample(&g, SampleSeed::new(root, index)).map_err(fail)?;
        let op = OperatorSpec::new(p, lambda, a).map_err(fail)?;
        put(out, MonohomOperator(op))
    })
}

/// # Safety
/// `op` must come from a `monohom_operator_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn monohom_operator_free(op: *mut MonohomOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Corrector and flux corrector for slope `xi` (`d` values).
///
/// # Safety
/// `op` must be live, `xi` must hold `d` values, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn monohom_corrector_solve(
    op: *const MonohomOperator,
    xi: *const f64,
    tol: f64,
    out: *mut *mut MonohomCorrector,
) -> MonohomStatus {
    guard(|| {
        let op = &as_ref(op, "op")?.0;
        let xi = read_vec(xi, op.grid().dim(), "xi")?;
        let cfg = SolverConfig::with_tol(tol);
        cfg.validate().map_err(fail)?;
        let b = solve_corrector(op, &xi, &cfg).and_then(solve_flux_corrector).map_err(fail)?;
        put(out, MonohomCorrector(b))
    })
}

/// # Safety
/// `c` must come from [`monohom_corrector_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn monohom_corrector_free(c: *mut MonohomCorrector) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Spatial average of the flux, `d` values written to `out`.
///
/// # Safety
/// `c` must be live and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn monohom_corrector_abar(c: *const MonohomCorrector, out: *mut f64, len: usize) -> MonohomStatus {
    guard(|| {
        let b = &as_ref(c, "corrector")?.0;
        let d = b.grad_phi.grid().dim();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < d {
            set_error(format!("need {d} values, buffer holds {len}"));
            return Err(MonohomStatus::BufferTooSmall);
        }
        std::slice::from_raw_parts_mut(out, d).copy_from_slice(&b.abar_sample[..d]);
        Ok(())
    })
}

/// Component `axis` of `grad phi` in lattice order.
///
/// # Safety
/// `c` must be live and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn monohom_corrector_gradient(
    c: *const MonohomCorrector,
    axis: usize,
    out: *mut f64,
    len: usize,
) -> MonohomStatus {
    guard(|| {
        let b = &as_ref(c, "corrector")?.0;
        let g = *b.grad_phi.grid();
        if axis >= g.dim() {
            set_error(format!("axis {axis} outside 0..{}", g.dim()));
            return Err(MonohomStatus::InvalidArgument);
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if len < g.len() {
            set_error(format!("need {} values, buffer holds {len}", g.len()));
            return Err(MonohomStatus::BufferTooSmall);
        }
        std::slice::from_raw_parts_mut(out, g.len()).copy_from_slice(b.grad_phi.component(axis));
        Ok(())
    })
}

/// Newton iterations, final relative residual and flux identity residual.
///
/// # Safety
/// `c` must be live; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn monohom_corrector_stats(
    c: *const MonohomCorrector,
    iterations: *mut usize,
    residual: *mut f64,
    flux_identity: *mut f64,
) -> MonohomStatus {
    guard(|| {
        let b = &as_ref(c, "corrector")?.0;
        if let Some(v) = iterations.as_mut() {
            *v = b.stats.iterations;
        }
        if let Some(v) = residual.as_mut() {
            *v = b.stats.final_residual;
        }
        if let Some(v) = flux_identity.as_mut() {
            *v = b.flux_identity_residual.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Runs a JSON experiment config into `out_dir` with `threads` workers
/// (0 picks the default). `exit_code` receives the CLI exit code.
///
/// # Safety
/// `config_json` and `out_dir` must be NUL-terminated; `exit_code` may be null.
#[no_mangle]
pub unsafe extern "C" fn monohom_run_config(
    config_json: *const c_char,
    out_dir: *const c_char,
    threads: usize,
    exit_code: *mut i32,
) -> MonohomStatus {
    guard(|| {
        let text = read_str(config_json, "config_json")?;
        let dir = read_str(out_dir, "out_dir")?;
        let cfg = ExperimentConfig::from_json(text).map_err(fail)?;
        let threads = if threads == 0 {
            runner::resolve_threads(None, cfg.threads).map_err(fail)?
        } else {
            Threads { count: threads, source: "caller" }
        };
        let report = runner::run(&cfg, Path::new(dir), threads);
        if let Some(c) = exit_code.as_mut() {
            *c = report.status.exit_code();
        }
        if let Some(e) = &report.error {
            set_error(e.clone());
        }
        Ok(())
    })
}
