//! C ABI over `defaultlab`.
//!
//! Conventions:
//! - every fallible function returns a [`DlStatus`] and writes results through
//!   out-pointers, which are left untouched on failure;
//! - the message of the last failure on the calling thread is available from
//!   [`dl_last_error_message`];
//! - handles are opaque, created by `dl_*_new`/`dl_solve` and released by the
//!   matching `dl_*_free`; freeing `NULL` is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use defaultlab::bsde::{generator_f, solve, BsdeSolution, GeneratorSpec, Horizon, SolverMode};
use defaultlab::cli::config::Resolved;
use defaultlab::cli::ExperimentConfig;
use defaultlab::enlargement::azema;
use defaultlab::oracle::{build_tree, tree_dp_optimize, TreeSpec};
use defaultlab::utility::{certainty_equivalent, indifference_price, value_function};
use defaultlab::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlStatus {
    Ok = 0,
    /// A required pointer argument was `NULL`.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration text could not be parsed.
    Config = 3,
    /// Model, claim or argument validation failed.
    Validation = 4,
    /// A solver failed (overflow, rank deficiency, non-convergence).
    Numerical = 5,
    Io = 6,
    /// A panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlSolverMode {
    /// Regression Monte Carlo on the configured number of paths.
    Lsmc = 0,
    /// Deterministic-coefficient ODE reduction.
    Ode = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlHorizon {
    Fixed = 0,
    /// Horizon stopped at default.
    Stopped = 1,
}

/// Resolved model, claim and solver settings.
pub struct DlModel {
    resolved: Resolved,
}

/// A solved BSDE.
pub struct DlSolution {
    solution: BsdeSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type FfiResult<T> = Result<T, (DlStatus, String)>;

fn status_of(e: &Error) -> DlStatus {
    match e {
        Error::Config(_) => DlStatus::Config,
        Error::Validation(_) | Error::Budget { .. } | Error::ClaimBound { .. } | Error::Measurability(_) => {
            DlStatus::Validation
        }
        Error::Io(_) => DlStatus::Io,
        _ => DlStatus::Numerical,
    }
}

fn lib<T>(r: defaultlab::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records failures and converts panics.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> DlStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            DlStatus::Panic
        }
    }
}

fn null(name: &str) -> (DlStatus, String) {
    (DlStatus::NullPointer, format!("`{name}` is NULL"))
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn write<T>(p: *mut T, name: &str, value: T) -> FfiResult<()> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(value);
    Ok(())
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, name: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn mode_of(mode: DlSolverMode) -> SolverMode {
    match mode {
        DlSolverMode::Lsmc => SolverMode::Lsmc,
        DlSolverMode::Ode => SolverMode::Ode,
    }
}

fn horizon_of(h: DlHorizon) -> Horizon {
    match h {
        DlHorizon::Fixed => Horizon::Fixed,
        DlHorizon::Stopped => Horizon::Stopped,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message size including the NUL,
/// or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Builds a model from experiment-configuration TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_model_new(toml: *const c_char, out: *mut *mut DlModel) -> DlStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (DlStatus::InvalidUtf8, e.to_string()))?;
        let config = lib(ExperimentConfig::from_toml(text))?;
        let resolved = lib(config.resolve(0))?;
        let handle = Box::into_raw(Box::new(DlModel { resolved }));
        if out.is_null() {
            drop(Box::from_raw(handle));
            return Err(null("out"));
        }
        out.write(handle);
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`dl_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dl_model_free(model: *mut DlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Brownian dimension `d` and number of jump atoms `m`.
///
/// # Safety
/// `model` must be a live handle; `d` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_model_dims(model: *const DlModel, d: *mut usize, m: *mut usize) -> DlStatus {
    guard(|| {
        let model = &as_ref(model, "model")?.resolved.model;
        write(d, "d", model.dim())?;
        write(m, "m", model.n_atoms())
    })
}

/// Azéma supermartingale `G_t = exp(-int_0^t lambda)`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_azema(model: *const DlModel, t: f64, out: *mut f64) -> DlStatus {
    guard(|| {
        let model = &as_ref(model, "model")?.resolved.model;
        write(out, "out", lib(azema(&model.intensity, t))?)
    })
}

/// Generator `f(t, z, w, w_def)`; `nz` must equal `d` and `nw` must equal `m`.
///
/// # Safety
/// `model` must be a live handle; `z` and `w` must point to `nz` and `nw`
/// readable doubles (may be NULL when the length is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_generator(
    model: *const DlModel,
    horizon: DlHorizon,
    t: f64,
    z: *const f64,
    nz: usize,
    w: *const f64,
    nw: usize,
    w_def: f64,
    pre_default: bool,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        let model = &as_ref(model, "model")?.resolved.model;
        if nz != model.dim() || nw != model.n_atoms() {
            return Err((
                DlStatus::Validation,
                format!("expected {} z and {} w components, got {nz} and {nw}", model.dim(), model.n_atoms()),
            ));
        }
        let z = read_slice(z, nz, "z")?;
        let w = read_slice(w, nw, "w")?;
        let spec = GeneratorSpec::from_model(model, horizon_of(horizon));
        write(out, "out", lib(generator_f(&spec, t, z, w, w_def, pre_default))?)
    })
}

/// Solves the BSDE of the configured claim.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_solve(
    model: *const DlModel,
    mode: DlSolverMode,
    horizon: DlHorizon,
    out: *mut *mut DlSolution,
) -> DlStatus {
    guard(|| {
        let r = &as_ref(model, "model")?.resolved;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = GeneratorSpec::from_model(&r.model, horizon_of(horizon));
        let solution = lib(solve(&spec, &r.claim, &r.model, mode_of(mode), &r.settings))?;
        out.write(Box::into_raw(Box::new(DlSolution { solution })));
        Ok(())
    })
}

/// `Y_0` and its standard error (0 for the ODE solver).
///
/// # Safety
/// `solution` must be a live handle; `y0` must be writable; `se` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dl_solution_y0(solution: *const DlSolution, y0: *mut f64, se: *mut f64) -> DlStatus {
    guard(|| {
        let s = &as_ref(solution, "solution")?.solution;
        write(y0, "y0", s.y0())?;
        if !se.is_null() {
            se.write(s.y0_se());
        }
        Ok(())
    })
}

/// # Safety
/// `solution` must be NULL or a handle from [`dl_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dl_solution_free(solution: *mut DlSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Value function `-exp(-alpha (x - y0))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_value_function(y0: f64, x: f64, alpha: f64, out: *mut f64) -> DlStatus {
    guard(|| write(out, "out", lib(value_function(y0, x, alpha))?))
}

/// Buyer's indifference price of the configured claim and its standard error.
///
/// # Safety
/// `model` must be a live handle; `price` must be writable; `se` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dl_indifference_price(
    model: *const DlModel,
    mode: DlSolverMode,
    price: *mut f64,
    se: *mut f64,
) -> DlStatus {
    guard(|| {
        let r = &as_ref(model, "model")?.resolved;
        let rep = lib(indifference_price(
            &r.claim,
            &r.model,
            mode_of(mode),
            &r.settings,
            r.model.market.x0,
        ))?;
        write(price, "price", rep.pi)?;
        if !se.is_null() {
            se.write(rep.se);
        }
        Ok(())
    })
}

/// Certainty equivalent `(1/alpha) ln E[exp(alpha xi)]` of a claim that
/// depends on default only.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_certainty_equivalent(model: *const DlModel, out: *mut f64) -> DlStatus {
    guard(|| {
        let r = &as_ref(model, "model")?.resolved;
        write(out, "out", lib(certainty_equivalent(&r.claim, &r.model))?)
    })
}

/// Exact dynamic programming on the serial tree of the model: optimal value,
/// its `Y_0` equivalent and the optimal root position.
///
/// # Safety
/// `model` must be a live handle; `value` must be writable; `y0` and
/// `theta0` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dl_tree_dp(
    model: *const DlModel,
    value: *mut f64,
    y0: *mut f64,
    theta0: *mut f64,
) -> DlStatus {
    guard(|| {
        let r = &as_ref(model, "model")?.resolved;
        let tree = lib(TreeSpec::from_model(&r.model).and_then(build_tree))?;
        let leaves = lib(tree.leaf_values(&r.claim))?;
        let dp = lib(tree_dp_optimize(&tree, &leaves, r.model.market.alpha, r.model.market.x0))?;
        write(value, "value", dp.value)?;
        if !y0.is_null() {
            y0.write(dp.y0);
        }
        if !theta0.is_null() {
            theta0.write(dp.theta.first().copied().unwrap_or(f64::NAN));
        }
        Ok(())
    })
}
