//! C ABI over the macap library.
//!
//! Every fallible function returns a [`MacapStatus`]; on failure the message
//! is available from [`macap_last_error`] on the same thread. Handles are
//! opaque and released with their matching `_free` function. Panics never
//! cross the boundary; they are reported as `MACAP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use macap::capacity::{effective_capacity, RegionTrace};
use macap::cli::{self, Command};
use macap::constellation::InputModel;
use macap::mmse_mi::{mi_single, ScaledInput};
use macap::quadrature::IntegrationSpec;
use macap::queue::{estimate_decay, simulate_queue};
use macap::scenario::{parse_scenario, Scenario};
use macap::Error;
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Convergence = 4,
    Numeric = 5,
    Estimation = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacapCommand {
    Region = 0,
    Boundary = 1,
    Validate = 2,
    Policy = 3,
}

/// Parsed scenario.
pub struct MacapScenario(Scenario);

/// Region trace of one scenario run.
pub struct MacapRegionTrace(RegionTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MacapStatus {
    match e {
        Error::InvalidArgument(_) => MacapStatus::InvalidArgument,
        Error::Parse(_) => MacapStatus::Parse,
        Error::Convergence { .. } => MacapStatus::Convergence,
        Error::Numeric { .. } => MacapStatus::Numeric,
        Error::Estimation(_) => MacapStatus::Estimation,
        Error::Io(_) => MacapStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MacapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MacapStatus::Ok
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("null pointer passed as `{name}`"));
            MacapStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(format!("{} ({}): {e}", e.category(), e.module()));
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            MacapStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidArgument(format!("`{name}` is not valid UTF-8"))))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn out_arg<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: the caller passes a valid, writable pointer or null.
    unsafe { p.as_mut() }.ok_or(Fail::Null(name))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn macap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a scenario document (TOML text).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn macap_scenario_parse(text: *const c_char, out: *mut *mut MacapScenario) -> MacapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = parse_scenario(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(MacapScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from [`macap_scenario_parse`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn macap_scenario_free(scenario: *mut MacapScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of configurations the scenario expands to.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn macap_scenario_run_count(scenario: *const MacapScenario, out: *mut usize) -> MacapStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or(Fail::Null("scenario"))?;
        *out_arg(out, "out")? = s.0.runs.len();
        Ok(())
    })
}

/// Copies the hex fingerprint (64 characters plus NUL) into `buf`.
///
/// # Safety
/// `buf` must hold at least `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn macap_scenario_fingerprint(
    scenario: *const MacapScenario,
    buf: *mut c_char,
    len: usize,
) -> MacapStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or(Fail::Null("scenario"))?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let fp = s.0.fingerprint();
        if len < fp.len() + 1 {
            return Err(Error::InvalidArgument(format!("buffer needs {} bytes", fp.len() + 1)).into());
        }
        ptr::copy_nonoverlapping(fp.as_ptr() as *const c_char, buf, fp.len());
        *buf.add(fp.len()) = 0;
        Ok(())
    })
}

/// Runs a command over the whole scenario and writes its files to `out_dir`.
///
/// # Safety
/// `scenario` must be a live handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn macap_run(
    scenario: *const MacapScenario,
    command: MacapCommand,
    out_dir: *const c_char,
) -> MacapStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or(Fail::Null("scenario"))?;
        let dir = str_arg(out_dir, "out_dir")?;
        let cmd = match command {
            MacapCommand::Region => Command::Region,
            MacapCommand::Boundary => Command::Boundary,
            MacapCommand::Validate => Command::Validate,
            MacapCommand::Policy => Command::Policy,
        };
        let outcome = cli::run(&s.0, cmd, Path::new(dir))?;
        match outcome.error {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    })
}

/// Traces the region of configuration `run`.
///
/// # Safety
/// `scenario` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn macap_trace_region(
    scenario: *const MacapScenario,
    run: usize,
    out: *mut *mut MacapRegionTrace,
) -> MacapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = scenario.as_ref().ok_or(Fail::Null("scenario"))?;
        let spec = s.0.runs.get(run).ok_or_else(|| {
            Error::InvalidArgument(format!("run index {run} out of range ({} runs)", s.0.runs.len()))
        })?;
        let trace = cli::trace_run(&s.0, spec)?;
        *out = Box::into_raw(Box::new(MacapRegionTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must come from [`macap_trace_region`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn macap_trace_free(trace: *mut MacapRegionTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of λ points in the trace.
///
/// # Safety
/// `trace` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn macap_trace_len(trace: *const MacapRegionTrace, out: *mut usize) -> MacapStatus {
    guard(|| {
        let t = trace.as_ref().ok_or(Fail::Null("trace"))?;
        *out_arg(out, "out")? = t.0.points.len();
        Ok(())
    })
}

/// One trace point. `converged` is 0 for failed points, whose capacities
/// are NaN.
///
/// # Safety
/// `trace` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn macap_trace_point(
    trace: *const MacapRegionTrace,
    index: usize,
    lambda1: *mut f64,
    c1: *mut f64,
    c2: *mut f64,
    converged: *mut i32,
) -> MacapStatus {
    guard(|| {
        let t = trace.as_ref().ok_or(Fail::Null("trace"))?;
        let p = t.0.points.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("point index {index} out of range ({} points)", t.0.points.len()))
        })?;
        *out_arg(lambda1, "lambda1")? = p.lambda1;
        *out_arg(c1, "c1")? = p.c1;
        *out_arg(c2, "c2")? = p.c2;
        *out_arg(converged, "converged")? = p.converged as i32;
        Ok(())
    })
}

/// Single-user mutual information in bits of a preset input at `snr`
/// (linear).
///
/// # Safety
/// `input` must be a NUL-terminated string and `bits` writable.
#[no_mangle]
pub unsafe extern "C" fn macap_mi_single(input: *const c_char, snr: f64, bits: *mut f64) -> MacapStatus {
    guard(|| {
        let model = InputModel::preset(str_arg(input, "input")?)?;
        if !(snr >= 0.0 && snr.is_finite()) {
            return Err(Error::InvalidArgument(format!("snr must be finite and >= 0, got {snr}")).into());
        }
        let s = ScaledInput::new(model, Complex64::new(1.0, 0.0), snr, 1.0)?;
        *out_arg(bits, "bits")? = mi_single(&s, &IntegrationSpec::default())?.bits;
        Ok(())
    })
}

/// Effective capacity of a weighted per-frame rate table; `symbols` is `T·B`.
///
/// # Safety
/// `rates` and `weights` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn macap_effective_capacity(
    rates: *const f64,
    weights: *const f64,
    len: usize,
    theta: f64,
    symbols: f64,
    out: *mut f64,
) -> MacapStatus {
    guard(|| {
        let r = slice_arg(rates, len, "rates")?;
        let w = slice_arg(weights, len, "weights")?;
        *out_arg(out, "out")? = effective_capacity(r, w, theta, symbols)?;
        Ok(())
    })
}

/// Simulates the buffer fed at `arrival` and served by the rate table, then
/// fits the tail decay rate.
///
/// # Safety
/// `rates` and `weights` must point to `len` doubles; outputs must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn macap_queue_decay(
    rates: *const f64,
    weights: *const f64,
    len: usize,
    arrival: f64,
    frames: usize,
    symbols: f64,
    seed: u64,
    theta_hat: *mut f64,
    std_error: *mut f64,
) -> MacapStatus {
    guard(|| {
        let r = slice_arg(rates, len, "rates")?;
        let w = slice_arg(weights, len, "weights")?;
        let trace = simulate_queue(r, w, arrival, frames, symbols, seed)?;
        let est = estimate_decay(&trace)?;
        *out_arg(theta_hat, "theta_hat")? = est.theta;
        *out_arg(std_error, "std_error")? = est.std_error;
        Ok(())
    })
}
