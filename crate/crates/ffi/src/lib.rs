//! C ABI for the ifpp solvers.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`IfppStatus`]; on failure the message is available from
//! [`ifpp_last_error`] until the next failing call on the same thread.
//! Panics are caught and reported as `IFPP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ifpp::config::RunConfig;
use ifpp::direct::{direct_lattice, refine_direct, solve_direct_landmark, DirectOptions};
use ifpp::inverse::{inverse_lattice, solve_inverse, InverseOptions};
use ifpp::mc::{estimate_survival, McOptions};
use ifpp::{Boundary, DiffusionSpec, Error, InitialDistribution, Interpolation, SurvivalCurve};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfppStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Coefficient = 3,
    Input = 4,
    Format = 5,
    Config = 6,
    Scheme = 7,
    NonConvergence = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfppInterpolation {
    Linear = 0,
    ConstantLeft = 1,
}

/// A diffusion together with its initial law.
pub struct IfppModel {
    spec: DiffusionSpec,
    init: InitialDistribution,
}

pub struct IfppBoundary(Boundary);

pub struct IfppCurve(SurvivalCurve);

/// Lattice resolution shared by the PDE entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IfppGrid {
    pub dx: f64,
    pub dt: f64,
    /// Start time used in place of a point-mass initial law.
    pub warmup: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IfppStatus {
    match e {
        Error::Domain(_) => IfppStatus::Domain,
        Error::Coefficient(_) => IfppStatus::Coefficient,
        Error::Input(_) => IfppStatus::Input,
        Error::Format(_) | Error::Csv(_) | Error::Json(_) => IfppStatus::Format,
        Error::Config(_) => IfppStatus::Config,
        Error::Scheme(_) => IfppStatus::Scheme,
        Error::NonConvergence { .. } => IfppStatus::NonConvergence,
        Error::Io(_) => IfppStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IfppStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IfppStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            IfppStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IfppStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failing call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ifpp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Brownian motion with constant drift `mu` and volatility `sigma > 0`,
/// started at `x0`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn ifpp_model_brownian(mu: f64, sigma: f64, x0: f64, out: *mut *mut IfppModel) -> IfppStatus {
    guard(|| {
        let spec = DiffusionSpec::brownian_drift(mu, sigma)?;
        let init = InitialDistribution::point_mass(x0)?;
        put(out, IfppModel { spec, init })
    })
}

/// Model from a JSON run configuration (the same format as the CLI).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` as for
/// [`ifpp_model_brownian`].
#[no_mangle]
pub unsafe extern "C" fn ifpp_model_from_json(json: *const c_char, out: *mut *mut IfppModel) -> IfppStatus {
    guard(|| {
        if json.is_null() {
            return Err(Failure::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Error::Format(format!("configuration is not UTF-8: {e}")))?;
        let cfg = RunConfig::from_json(text)?;
        let (spec, init) = cfg.diffusion.build()?;
        put(out, IfppModel { spec, init })
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifpp_model_free(model: *mut IfppModel) {
    free(model)
}

/// Barrier through `n` knots on `[0, horizon]`. Use `-INFINITY` for
/// minus-infinity values.
///
/// # Safety
/// `t` and `b` must point to `n` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_boundary_from_knots(
    t: *const f64,
    b: *const f64,
    n: usize,
    interpolation: IfppInterpolation,
    horizon: f64,
    out: *mut *mut IfppBoundary,
) -> IfppStatus {
    guard(|| {
        let t = slice(t, n, "t")?.to_vec();
        let b = slice(b, n, "b")?.to_vec();
        let interp = match interpolation {
            IfppInterpolation::Linear => Interpolation::Linear,
            IfppInterpolation::ConstantLeft => Interpolation::ConstantLeft,
        };
        put(out, IfppBoundary(Boundary::from_knots(t, b, interp, horizon)?))
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_boundary_constant(value: f64, horizon: f64, out: *mut *mut IfppBoundary) -> IfppStatus {
    guard(|| put(out, IfppBoundary(Boundary::constant(value, horizon)?)))
}

/// # Safety
/// `boundary` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_boundary_eval(boundary: *const IfppBoundary, t: f64, value: *mut f64) -> IfppStatus {
    guard(|| {
        let b = as_ref(boundary, "boundary")?;
        if value.is_null() {
            return Err(Failure::Null("value"));
        }
        *value = b.0.value(t)?;
        Ok(())
    })
}

/// # Safety
/// `boundary` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifpp_boundary_free(boundary: *mut IfppBoundary) {
    free(boundary)
}

/// Survival curve from `n` samples; times start at 0 and increase.
///
/// # Safety
/// `t` and `p` must point to `n` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_curve_from_samples(
    t: *const f64,
    p: *const f64,
    n: usize,
    out: *mut *mut IfppCurve,
) -> IfppStatus {
    guard(|| {
        let t = slice(t, n, "t")?.to_vec();
        let p = slice(p, n, "p")?.to_vec();
        put(out, IfppCurve(SurvivalCurve::new(t, p)?))
    })
}

/// Number of samples in the curve, or 0 for NULL.
///
/// # Safety
/// `curve` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ifpp_curve_len(curve: *const IfppCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.len())
}

/// Copies up to `capacity` sample times and values into the buffers.
///
/// # Safety
/// `curve` must be a live handle; `t` and `p` must have room for
/// `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ifpp_curve_samples(
    curve: *const IfppCurve,
    t: *mut f64,
    p: *mut f64,
    capacity: usize,
) -> IfppStatus {
    guard(|| {
        let c = as_ref(curve, "curve")?;
        if t.is_null() || p.is_null() {
            return Err(Failure::Null("sample buffer"));
        }
        let n = c.0.len().min(capacity);
        ptr::copy_nonoverlapping(c.0.times().as_ptr(), t, n);
        ptr::copy_nonoverlapping(c.0.values().as_ptr(), p, n);
        Ok(())
    })
}

/// # Safety
/// `curve` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_curve_eval(curve: *const IfppCurve, t: f64, value: *mut f64) -> IfppStatus {
    guard(|| {
        let c = as_ref(curve, "curve")?;
        if value.is_null() {
            return Err(Failure::Null("value"));
        }
        *value = c.0.eval(t)?;
        Ok(())
    })
}

/// # Safety
/// `curve` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifpp_curve_free(curve: *mut IfppCurve) {
    free(curve)
}

/// Survival curve at landmark level `level`, sampled at the lattice times.
///
/// # Safety
/// `model` and `boundary` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_direct_solve(
    model: *const IfppModel,
    boundary: *const IfppBoundary,
    level: u32,
    grid: IfppGrid,
    out: *mut *mut IfppCurve,
) -> IfppStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let b = &as_ref(boundary, "boundary")?.0;
        let lat = direct_lattice(&m.spec, &m.init, b, level, grid.dx, grid.dt, grid.warmup)?;
        let sol = solve_direct_landmark(&m.spec, &m.init, b, level, &lat, &DirectOptions::default())?;
        put(out, IfppCurve(sol.survival))
    })
}

/// Levels `min_level..=max_level` on a shared lattice, extrapolated to the
/// continuous-monitoring limit.
///
/// # Safety
/// As for [`ifpp_direct_solve`].
#[no_mangle]
pub unsafe extern "C" fn ifpp_direct_refine(
    model: *const IfppModel,
    boundary: *const IfppBoundary,
    min_level: u32,
    max_level: u32,
    grid: IfppGrid,
    out: *mut *mut IfppCurve,
) -> IfppStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let b = &as_ref(boundary, "boundary")?.0;
        let lat = direct_lattice(&m.spec, &m.init, b, max_level, grid.dx, grid.dt, grid.warmup)?;
        let r = refine_direct(&m.spec, &m.init, b, min_level, max_level, &lat, &DirectOptions::default())?;
        put(out, IfppCurve(r.extrapolated))
    })
}

/// Barrier recovered from a survival curve on `[0, horizon of the curve]`.
///
/// # Safety
/// `model` and `curve` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_inverse_solve(
    model: *const IfppModel,
    curve: *const IfppCurve,
    grid: IfppGrid,
    out: *mut *mut IfppBoundary,
) -> IfppStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let p = &as_ref(curve, "curve")?.0;
        let lat = inverse_lattice(&m.spec, &m.init, p.horizon(), grid.dx, grid.dt, grid.warmup)?;
        let rep = solve_inverse(&m.spec, &m.init, p, &lat, &InverseOptions::default())?;
        put(out, IfppBoundary(rep.b_hat))
    })
}

/// Monte Carlo survival estimate (non-strict crossing rule) on the grid of
/// step `dt` up to the barrier horizon. `ci_half_width` may be NULL; when
/// given it receives the largest 99% half-width over the grid.
///
/// # Safety
/// `model` and `boundary` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ifpp_mc_survival(
    model: *const IfppModel,
    boundary: *const IfppBoundary,
    n_paths: usize,
    dt: f64,
    seed: u64,
    bridge: bool,
    out: *mut *mut IfppCurve,
    ci_half_width: *mut f64,
) -> IfppStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let b = &as_ref(boundary, "boundary")?.0;
        let opts = McOptions {
            n_paths,
            dt,
            seed,
            bridge,
            horizon: b.horizon(),
        };
        let est = estimate_survival(&m.spec, &m.init, b, &opts)?;
        if !ci_half_width.is_null() {
            *ci_half_width = est.ci_half_width.iter().copied().fold(0.0, f64::max);
        }
        put(out, IfppCurve(est.curve()?))
    })
}
