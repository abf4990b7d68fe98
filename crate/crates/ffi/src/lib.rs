//! C ABI for `odefit`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`OdefitStatus`]; after a nonzero status, `odefit_last_error` describes
//! the failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use odefit::estimate::{fit, hiv_fit_spec, EtaMode, FitReport};
use odefit::inference::{aicc, are};
use odefit::io::{read_dataset, write_dataset};
use odefit::models::{hiv_system, simulate_dataset, Dataset, Scenario, ScenarioId};
use odefit::spline::SplineConfig;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdefitStatus {
    Ok = 0,
    /// Invalid input: bad arguments, malformed files, violated preconditions.
    Invalid = 1,
    /// The solver diverged or a linear system could not be used.
    Numerical = 2,
    Io = 3,
    /// A null pointer was passed, or the library panicked.
    Internal = -1,
}

/// Simulation scenarios for the HIV model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdefitScenario {
    I = 1,
    Ii = 2,
    Iii = 3,
    Iv = 4,
    Complex = 5,
}

/// Representation of the infection rate `eta` in a fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdefitEtaMode {
    Constant = 0,
    Spline = 1,
    CenteredSpline = 2,
}

/// Opaque dataset handle.
pub struct OdefitDataset {
    inner: Dataset,
}

/// Opaque fit-result handle.
pub struct OdefitReport {
    inner: FitReport,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &odefit::Error) -> OdefitStatus {
    match e.exit_code() {
        1 => OdefitStatus::Invalid,
        2 => OdefitStatus::Numerical,
        3 => OdefitStatus::Io,
        _ => OdefitStatus::Internal,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (OdefitStatus, String)>) -> OdefitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OdefitStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("internal error: {msg}"));
            OdefitStatus::Internal
        }
    }
}

fn lib(e: odefit::Error) -> (OdefitStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (OdefitStatus, String) {
    (OdefitStatus::Internal, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (OdefitStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (OdefitStatus::Invalid, "path is not valid UTF-8".to_string()))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (OdefitStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (OdefitStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn scenario_id(s: OdefitScenario) -> ScenarioId {
    match s {
        OdefitScenario::I => ScenarioId::I,
        OdefitScenario::Ii => ScenarioId::II,
        OdefitScenario::Iii => ScenarioId::III,
        OdefitScenario::Iv => ScenarioId::IV,
        OdefitScenario::Complex => ScenarioId::Complex,
    }
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn odefit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn odefit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulate the HIV design for `scenario`: 40 times on (0, 20],
/// proportional noise of `noise_fraction`, both outputs stored as logs.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn odefit_simulate(
    scenario: OdefitScenario,
    noise_fraction: f64,
    seed: u64,
    out: *mut *mut OdefitDataset,
) -> OdefitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mut sc = Scenario::hiv(scenario_id(scenario));
        sc.noise_fraction = noise_fraction;
        let inner = simulate_dataset(&hiv_system(), &sc, 0.005, seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(OdefitDataset { inner }));
        Ok(())
    })
}

/// Read a dataset CSV (and its `.meta` sidecar when present).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odefit_dataset_read(path: *const c_char, out: *mut *mut OdefitDataset) -> OdefitStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_arg(out, "out")?;
        let inner = read_dataset(path).map_err(lib)?;
        *out = Box::into_raw(Box::new(OdefitDataset { inner }));
        Ok(())
    })
}

/// Write a dataset CSV and its `.meta` sidecar.
///
/// # Safety
/// `dataset` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn odefit_dataset_write(dataset: *const OdefitDataset, path: *const c_char) -> OdefitStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        write_dataset(path_arg(path)?, &d.inner).map_err(lib)
    })
}

/// Number of observation times, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odefit_dataset_len(dataset: *const OdefitDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn odefit_dataset_free(dataset: *mut OdefitDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fit the HIV model with free (lambda, N, c) and `eta` represented by
/// `mode`. `order` and `interior_knots` are ignored for a constant fit.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odefit_fit(
    dataset: *const OdefitDataset,
    mode: OdefitEtaMode,
    order: usize,
    interior_knots: usize,
    h: f64,
    seed: u64,
    out: *mut *mut OdefitReport,
) -> OdefitStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let out = out_arg(out, "out")?;
        let eta_mode = match mode {
            OdefitEtaMode::Constant => EtaMode::Constant,
            OdefitEtaMode::Spline | OdefitEtaMode::CenteredSpline => {
                let (t0, t_end) = (0.0, 20.0);
                let sc = SplineConfig::new(t0, t_end, interior_knots, order).map_err(lib)?;
                if mode == OdefitEtaMode::Spline {
                    EtaMode::Spline(sc)
                } else {
                    EtaMode::CenteredSpline(sc)
                }
            }
        };
        let spec = hiv_fit_spec(d.inner.clone(), eta_mode, h, seed).map_err(lib)?;
        let inner = fit(&spec).map_err(lib)?;
        let labels = inner
            .labels
            .iter()
            .map(|l| CString::new(l.as_str()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(OdefitReport { inner, labels }));
        Ok(())
    })
}

/// Number of estimated scalars, or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_n_params(report: *const OdefitReport) -> usize {
    report.as_ref().map_or(0, |r| r.labels.len())
}

/// Name of estimate `i`; null when out of range. Owned by the report.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_param_name(report: *const OdefitReport, i: usize) -> *const c_char {
    report
        .as_ref()
        .and_then(|r| r.labels.get(i))
        .map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Estimate `i`.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_param(report: *const OdefitReport, i: usize, out: *mut f64) -> OdefitStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let out = out_arg(out, "out")?;
        let theta = r.inner.theta();
        *out = *theta
            .get(i)
            .ok_or_else(|| (OdefitStatus::Invalid, format!("parameter index {i} out of range")))?;
        Ok(())
    })
}

/// Residual sum of squares on the fitting scale.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_rss(report: *const OdefitReport, out: *mut f64) -> OdefitStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(report, "report")?.inner.rss;
        Ok(())
    })
}

/// AICc of the fit.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_aicc(report: *const OdefitReport, out: *mut f64) -> OdefitStatus {
    guard(|| {
        let r = &handle(report, "report")?.inner;
        let out = out_arg(out, "out")?;
        *out = aicc(r.rss, r.n_values(), r.k).map_err(lib)?;
        Ok(())
    })
}

/// Number of points on the fitted `eta` curve.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_eta_len(report: *const OdefitReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.eta_curve.len())
}

/// Point `i` of the fitted `eta` curve.
///
/// # Safety
/// `report` must be a live handle; `t` and `eta` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_eta_point(
    report: *const OdefitReport,
    i: usize,
    t: *mut f64,
    eta: *mut f64,
) -> OdefitStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let (t, eta) = (out_arg(t, "t")?, out_arg(eta, "eta")?);
        let &(ti, ei) = r
            .inner
            .eta_curve
            .get(i)
            .ok_or_else(|| (OdefitStatus::Invalid, format!("curve index {i} out of range")))?;
        *t = ti;
        *eta = ei;
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn odefit_report_free(report: *mut OdefitReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// `n ln(rss / n) + 2nk / (n - k - 1)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odefit_aicc(rss: f64, n: usize, k: usize, out: *mut f64) -> OdefitStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = aicc(rss, n, k).map_err(lib)?;
        Ok(())
    })
}

/// Average relative error in percent for each of `dim` coordinates over
/// `m` estimates stored row-major in `estimates` (`m * dim` values).
///
/// # Safety
/// `estimates` must hold `m * dim` values, `truth` and `out` `dim` values each.
#[no_mangle]
pub unsafe extern "C" fn odefit_are(
    estimates: *const f64,
    m: usize,
    dim: usize,
    truth: *const f64,
    out: *mut f64,
) -> OdefitStatus {
    guard(|| {
        if estimates.is_null() || truth.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let est = std::slice::from_raw_parts(estimates, m * dim);
        let rows: Vec<Vec<f64>> = est.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        let truth = std::slice::from_raw_parts(truth, dim);
        let r = are(&rows, truth).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&r);
        Ok(())
    })
}
