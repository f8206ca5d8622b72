//! C ABI for running convergence studies.
//!
//! Handles are opaque pointers created and destroyed by this library. Every
//! fallible call returns an [`AsgsStatus`]; on failure the message is kept
//! per thread and can be read with [`asgs_last_error`]. Panics never cross
//! the boundary: they are reported as [`AsgsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use asgs::config::RunConfig;
use asgs::study::{run_convergence_study, ConvergenceReport};
use asgs::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    /// Solver breakdown, singular matrix or divergent subscale series.
    Numerical = 5,
    Panic = 6,
}

/// Run configuration; starts from the library defaults.
pub struct AsgsConfig(RunConfig);

/// Result table of a convergence study.
pub struct AsgsReport(ConvergenceReport);

/// One row of a study. Missing orders (first row) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AsgsStudyRow {
    pub grid: usize,
    pub dofs: usize,
    pub error: f64,
    pub eoc: f64,
    pub eta: f64,
    pub eoc_eta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn status_of(e: &Error) -> AsgsStatus {
    match e {
        Error::Step { source, .. } | Error::Grid { source, .. } => status_of(source),
        Error::Config { .. } => AsgsStatus::Config,
        Error::Io { .. } => AsgsStatus::Io,
        Error::DivergentSeries(_) | Error::NoConvergence { .. } | Error::Singular { .. } => AsgsStatus::Numerical,
        _ => AsgsStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), (AsgsStatus, String)>) -> AsgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AsgsStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            AsgsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (AsgsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AsgsStatus, String) {
    (AsgsStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AsgsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (AsgsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn asgs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// New configuration with default settings; free with [`asgs_config_free`].
#[no_mangle]
pub extern "C" fn asgs_config_new() -> *mut AsgsConfig {
    Box::into_raw(Box::new(AsgsConfig(RunConfig::default())))
}

/// # Safety
/// `cfg` must be null or a pointer from [`asgs_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asgs_config_free(cfg: *mut AsgsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one option, using the keys of the configuration file format
/// (for example `"case"`, `"grids"`, `"dt"`, `"out"`).
///
/// # Safety
/// `cfg` must be a live configuration handle; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn asgs_config_set(cfg: *mut AsgsConfig, key: *const c_char, value: *const c_char) -> AsgsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        let key = read_str(key, "key")?;
        let value = read_str(value, "value")?;
        cfg.0.set(key, value).map_err(lib_err)
    })
}

/// Applies a `key = value` configuration file.
///
/// # Safety
/// `cfg` must be a live configuration handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn asgs_config_load(cfg: *mut AsgsConfig, path: *const c_char) -> AsgsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        let path = read_str(path, "path")?;
        cfg.0.apply_file(Path::new(path)).map_err(lib_err)
    })
}

/// Runs the configured study. On success `*out` receives a report handle
/// to be released with [`asgs_report_free`]; on failure it is set to null.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn asgs_study_run(cfg: *const AsgsConfig, out: *mut *mut AsgsReport) -> AsgsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = std::ptr::null_mut();
        let cfg = cfg.as_ref().ok_or_else(|| null("config"))?;
        let report = run_convergence_study(&cfg.0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AsgsReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle from [`asgs_study_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asgs_report_free(report: *mut AsgsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of grid rows; 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn asgs_report_len(report: *const AsgsReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.rows.len())
}

/// Copies row `index` into `*row`.
///
/// # Safety
/// `report` must be a live report handle and `row` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn asgs_report_row(report: *const AsgsReport, index: usize, row: *mut AsgsStudyRow) -> AsgsStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null("report"))?;
        let row = row.as_mut().ok_or_else(|| null("row"))?;
        let r = report.0.rows.get(index).ok_or_else(|| {
            (
                AsgsStatus::InvalidArgument,
                format!("row {index} out of range ({} rows)", report.0.rows.len()),
            )
        })?;
        *row = AsgsStudyRow {
            grid: r.result.grid,
            dofs: r.result.errors.dofs,
            error: r.error,
            eoc: r.eoc.unwrap_or(f64::NAN),
            eta: r.eta,
            eoc_eta: r.eoc_eta.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Writes the `grid,error,eoc` table as a NUL-terminated string into `buf`.
/// `*needed` always receives the required capacity including the NUL; if
/// `capacity` is smaller nothing is written and `InvalidArgument` returned.
///
/// # Safety
/// `report` must be a live report handle, `needed` writable, and `buf` valid
/// for `capacity` bytes (it may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn asgs_report_csv(
    report: *const AsgsReport,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> AsgsStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null("report"))?;
        let needed = needed.as_mut().ok_or_else(|| null("needed"))?;
        let csv = report.0.convergence_csv();
        *needed = csv.len() + 1;
        if capacity < *needed {
            return Err((
                AsgsStatus::InvalidArgument,
                format!("buffer of {capacity} bytes, {} needed", *needed),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(csv.as_ptr(), buf.cast::<u8>(), csv.len());
        *buf.add(csv.len()) = 0;
        Ok(())
    })
}

/// Observed order `log2(coarse / fine)` of two errors under mesh halving.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn asgs_eoc(coarse: f64, fine: f64, out: *mut f64) -> AsgsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = asgs::analysis::eoc(coarse, fine).map_err(lib_err)?;
        Ok(())
    })
}
