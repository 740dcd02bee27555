//! C ABI over the coupled-wave laboratory.
//!
//! Conventions: every function returns a `CwStatus`; results come back
//! through out-parameters. Handles (`CwScenario`, `CwEnergyTrace`) are opaque
//! and owned by the caller until passed to the matching `_free`. All entry
//! points catch panics and report them as `CW_STATUS_PANIC`; the last error
//! message is kept per thread and read with `cw_last_error`.

use cwlab::control::{self, HumContext};
use cwlab::dynamics::{self, fit_decay, FitKind, SimulationOutput};
use cwlab::geometry::{gcc_check, DEFAULT_RAYS_1D, DEFAULT_RAYS_2D};
use cwlab::scenario::{parse_scenario_str, Scenario};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwStatus {
    CwStatusOk = 0,
    CwStatusNullArgument = 1,
    CwStatusUtf8 = 2,
    CwStatusParse = 3,
    CwStatusValidation = 4,
    CwStatusHypothesis = 5,
    CwStatusSolver = 6,
    CwStatusOutOfRange = 7,
    CwStatusPanic = 8,
}

/// Opaque scenario handle.
pub struct CwScenario {
    inner: Scenario,
}

/// Opaque simulation trace handle.
pub struct CwEnergyTrace {
    inner: SimulationOutput,
}

/// Plain-data decay fit result.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CwDecayFit {
    pub theta: f64,
    pub m_factor: f64,
    pub residual_rms: f64,
    /// 1 when the fitted slope indicates decay.
    pub decay_observed: i32,
}

/// Plain-data ray-check result.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CwGccResult {
    /// 1 when every sampled ray meets the damping region in time.
    pub holds: i32,
    pub max_entry_time: f64,
    pub worst_origin: [f64; 2],
    pub worst_direction: [f64; 2],
    pub rays_traced: usize,
    pub rays_missed: usize,
}

/// Plain-data control synthesis summary.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CwHumSummary {
    pub iterations: usize,
    pub final_residual: f64,
    pub observability_ratio: f64,
    /// Terminal state norm of the verified closed loop, relative to the
    /// initial data norm.
    pub terminal_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Copies the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap`); returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (length query).
#[no_mangle]
pub unsafe extern "C" fn cw_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

fn guard(body: impl FnOnce() -> CwStatus) -> CwStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            CwStatus::CwStatusPanic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, CwStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(CwStatus::CwStatusNullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        CwStatus::CwStatusUtf8
    })
}

fn parse_into(text: &str, out: *mut *mut CwScenario) -> CwStatus {
    match parse_scenario_str(text) {
        Ok(inner) => {
            let handle = Box::into_raw(Box::new(CwScenario { inner }));
            unsafe { *out = handle };
            CwStatus::CwStatusOk
        }
        Err(e) => {
            set_error(e.to_string());
            match e {
                cwlab::scenario::ScenarioError::Validation(_) => CwStatus::CwStatusValidation,
                _ => CwStatus::CwStatusParse,
            }
        }
    }
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_scenario_load(
    path: *const c_char,
    out: *mut *mut CwScenario,
) -> CwStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return CwStatus::CwStatusNullArgument;
        }
        let path = match unsafe { read_str(path) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                set_error(format!("cannot read {path}: {e}"));
                return CwStatus::CwStatusParse;
            }
        };
        parse_into(&text, out)
    })
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_scenario_parse(
    text: *const c_char,
    out: *mut *mut CwScenario,
) -> CwStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return CwStatus::CwStatusNullArgument;
        }
        let text = match unsafe { read_str(text) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        parse_into(text, out)
    })
}

/// Frees a scenario handle; null is a no-op.
///
/// # Safety
/// `scenario` must come from `cw_scenario_load`/`cw_scenario_parse`.
#[no_mangle]
pub unsafe extern "C" fn cw_scenario_free(scenario: *mut CwScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Writes the scenario's canonical hash (16 hex chars + NUL) into `buf`.
///
/// # Safety
/// `scenario` must be a live handle; `buf` must hold at least `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn cw_scenario_hash(
    scenario: *const CwScenario,
    buf: *mut c_char,
    cap: usize,
) -> CwStatus {
    guard(|| {
        if scenario.is_null() || buf.is_null() {
            set_error("null argument");
            return CwStatus::CwStatusNullArgument;
        }
        let hash = unsafe { &*scenario }.inner.hash();
        let bytes = hash.as_bytes();
        if cap < bytes.len() + 1 {
            set_error("buffer too small for the scenario hash");
            return CwStatus::CwStatusOutOfRange;
        }
        unsafe {
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
            *buf.add(bytes.len()) = 0;
        }
        CwStatus::CwStatusOk
    })
}

/// Integrates the damped system from the scenario's initial data and returns
/// the sampled energy trace.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_simulate(
    scenario: *const CwScenario,
    out: *mut *mut CwEnergyTrace,
) -> CwStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            set_error("null argument");
            return CwStatus::CwStatusNullArgument;
        }
        let sc = &unsafe { &*scenario }.inner;
        let setup = sc.build();
        let initial = sc.initial_state(&setup.grid);
        match dynamics::simulate(sc, &initial) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(CwEnergyTrace { inner })) };
                CwStatus::CwStatusOk
            }
            Err(e) => {
                set_error(e.to_string());
                CwStatus::CwStatusSolver
            }
        }
    })
}

/// Number of samples in the trace.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_len(trace: *const CwEnergyTrace) -> usize {
    if trace.is_null() {
        return 0;
    }
    unsafe { &*trace }.inner.trace.times.len()
}

/// Sample times; valid until the handle is freed.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_times(trace: *const CwEnergyTrace) -> *const f64 {
    if trace.is_null() {
        return std::ptr::null();
    }
    unsafe { &*trace }.inner.trace.times.as_ptr()
}

/// Strong energy E per sample; valid until the handle is freed.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_energy(trace: *const CwEnergyTrace) -> *const f64 {
    if trace.is_null() {
        return std::ptr::null();
    }
    unsafe { &*trace }.inner.trace.energy.as_ptr()
}

/// Partial energy e1 per sample.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_e1(trace: *const CwEnergyTrace) -> *const f64 {
    if trace.is_null() {
        return std::ptr::null();
    }
    unsafe { &*trace }.inner.trace.e1.as_ptr()
}

/// Weakened partial energy per sample.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_e2_tilde(trace: *const CwEnergyTrace) -> *const f64 {
    if trace.is_null() {
        return std::ptr::null();
    }
    unsafe { &*trace }.inner.trace.e2_tilde.as_ptr()
}

/// Mixed energy per sample.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_energy_mixed(trace: *const CwEnergyTrace) -> *const f64 {
    if trace.is_null() {
        return std::ptr::null();
    }
    unsafe { &*trace }.inner.trace.energy_mixed.as_ptr()
}

/// Dissipation integral accumulated since the previous sample.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_dissipation(trace: *const CwEnergyTrace) -> *const f64 {
    if trace.is_null() {
        return std::ptr::null();
    }
    unsafe { &*trace }.inner.trace.dissipation.as_ptr()
}

/// Frees a trace handle; null is a no-op.
///
/// # Safety
/// `trace` must come from `cw_simulate`.
#[no_mangle]
pub unsafe extern "C" fn cw_trace_free(trace: *mut CwEnergyTrace) {
    if !trace.is_null() {
        drop(unsafe { Box::from_raw(trace) });
    }
}

/// Least-squares exponential fit of the trace over [t0, t1]; `mixed` nonzero
/// fits the mixed energy instead of the strong one.
///
/// # Safety
/// `trace` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cw_decay_fit(
    trace: *const CwEnergyTrace,
    t0: f64,
    t1: f64,
    mixed: i32,
    out: *mut CwDecayFit,
) -> CwStatus {
    guard(|| {
        if trace.is_null() || out.is_null() {
            set_error("null argument");
            return CwStatus::CwStatusNullArgument;
        }
        let kind = if mixed != 0 { FitKind::Mixed } else { FitKind::Strong };
        match fit_decay(&unsafe { &*trace }.inner.trace, kind, (t0, t1)) {
            Ok(fit) => {
                unsafe {
                    *out = CwDecayFit {
                        theta: fit.theta,
                        m_factor: fit.m_factor,
                        residual_rms: fit.residual_rms,
                        decay_observed: fit.decay_observed as i32,
                    }
                };
                CwStatus::CwStatusOk
            }
            Err(e) => {
                set_error(e.to_string());
                CwStatus::CwStatusOutOfRange
            }
        }
    })
}

/// Sampled ray check of the scenario's damping region.
///
/// # Safety
/// `scenario` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cw_gcc_check(
    scenario: *const CwScenario,
    out: *mut CwGccResult,
) -> CwStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            set_error("null argument");
            return CwStatus::CwStatusNullArgument;
        }
        let sc = &unsafe { &*scenario }.inner;
        let horizon = sc.gcc.time.unwrap_or(sc.horizon);
        let n_rays = sc.gcc.n_rays.unwrap_or(if sc.domain.dim() == 1 {
            DEFAULT_RAYS_1D
        } else {
            DEFAULT_RAYS_2D
        });
        let report = gcc_check(&sc.damping.region(), &sc.domain, sc.a, horizon, n_rays);
        unsafe {
            *out = CwGccResult {
                holds: report.holds as i32,
                max_entry_time: report.max_entry_time,
                worst_origin: report.worst_ray.origin,
                worst_direction: report.worst_ray.direction,
                rays_traced: report.rays_traced,
                rays_missed: report.rays_missed,
            }
        };
        if report.holds {
            CwStatus::CwStatusOk
        } else {
            set_error("a sampled ray never enters the damping region");
            CwStatus::CwStatusHypothesis
        }
    })
}

/// Synthesizes the exact control for the scenario's initial data at tolerance
/// `tol` and verifies the closed loop.
///
/// # Safety
/// `scenario` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cw_hum_solve(
    scenario: *const CwScenario,
    tol: f64,
    out: *mut CwHumSummary,
) -> CwStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            set_error("null argument");
            return CwStatus::CwStatusNullArgument;
        }
        if !(tol > 0.0 && tol < 1.0) {
            set_error("tolerance must lie in (0, 1)");
            return CwStatus::CwStatusOutOfRange;
        }
        let sc = &unsafe { &*scenario }.inner;
        let ctx = HumContext::new(sc);
        let u0 = sc.initial_state(&ctx.setup.grid);
        let report = match control::hum_solve_ctx(&ctx, &u0, tol, sc.tolerances.hum_maxiter) {
            Ok(r) => r,
            Err(e) => {
                set_error(e.to_string());
                return CwStatus::CwStatusSolver;
            }
        };
        let terminal = match control::verify_control_ctx(&ctx, &u0, &report.control) {
            Ok(r) => r,
            Err(e) => {
                set_error(e.to_string());
                return CwStatus::CwStatusSolver;
            }
        };
        unsafe {
            *out = CwHumSummary {
                iterations: report.iterations,
                final_residual: report.residual_history.last().copied().unwrap_or(0.0),
                observability_ratio: report.observability_ratio,
                terminal_residual: terminal,
            }
        };
        CwStatus::CwStatusOk
    })
}
