//! C ABI over `panelfe`.
//!
//! Panels and reports are opaque heap handles created and released through
//! this interface. Every fallible call returns a [`PanelfeStatus`]; the
//! message of the most recent failure on the calling thread is available
//! from [`panelfe_last_error`].
//!
//! Matrices cross the boundary row-major: element `(i, t)` of an N×T matrix
//! sits at offset `i * T + t`, and the K regressors follow one another.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use panelfe::estimator::{ConfiguredEstimator, Estimator, EstimatorSpec};
use panelfe::grouped_fe::GfeConfig;
use panelfe::nalgebra::DMatrix;
use panelfe::simulation::{self, SimConfig};
use panelfe::{EstimateReport, PanelData, PanelError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelfeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    BalanceError = 4,
    SingularDesign = 5,
    BootstrapError = 6,
    JackknifeError = 7,
    IoError = 8,
    /// Requested quantity is absent, e.g. standard errors that could not be
    /// computed.
    Unavailable = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelfeEstimator {
    Ols = 0,
    Ls = 1,
    Gfe = 2,
    GfeSplit = 3,
}

/// Opaque balanced panel.
pub struct PanelfePanel {
    inner: PanelData,
}

/// Opaque estimation result.
pub struct PanelfeReport {
    inner: EstimateReport,
    tag: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &PanelError) -> PanelfeStatus {
    match e {
        PanelError::Balance { .. } => PanelfeStatus::BalanceError,
        PanelError::Parse { .. } => PanelfeStatus::ParseError,
        PanelError::Domain(_) => PanelfeStatus::InvalidArgument,
        PanelError::SingularDesign(_) => PanelfeStatus::SingularDesign,
        PanelError::Bootstrap { .. } => PanelfeStatus::BootstrapError,
        PanelError::Jackknife { .. } => PanelfeStatus::JackknifeError,
        PanelError::Io(_) => PanelfeStatus::IoError,
    }
}

fn fail(status: PanelfeStatus, msg: &str) -> PanelfeStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), PanelfeStatus>) -> PanelfeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PanelfeStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(PanelfeStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: PanelError) -> PanelfeStatus {
    fail(status_of(&e), &format!("{}: {e}", e.name()))
}

fn emit_panel(out: *mut *mut PanelfePanel, panel: PanelData) {
    // SAFETY: callers check `out` for null before building the panel
    unsafe { *out = Box::into_raw(Box::new(PanelfePanel { inner: panel })) };
}

/// Message describing the last failure on this thread (empty after a
/// success). Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn panelfe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn panelfe_status_name(status: PanelfeStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PanelfeStatus::Ok => c"Ok",
        PanelfeStatus::NullPointer => c"NullPointer",
        PanelfeStatus::InvalidArgument => c"InvalidArgument",
        PanelfeStatus::ParseError => c"ParseError",
        PanelfeStatus::BalanceError => c"BalanceError",
        PanelfeStatus::SingularDesign => c"SingularDesign",
        PanelfeStatus::BootstrapError => c"BootstrapError",
        PanelfeStatus::JackknifeError => c"JackknifeError",
        PanelfeStatus::IoError => c"IoError",
        PanelfeStatus::Unavailable => c"Unavailable",
        PanelfeStatus::BufferTooSmall => c"BufferTooSmall",
        PanelfeStatus::Panic => c"Panic",
    };
    s.as_ptr()
}

/// Build a panel from row-major `y` (N·T values) and `x` (K·N·T values).
///
/// # Safety
/// `y` and `x` must point to at least `n*t` and `k*n*t` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn panelfe_panel_new(
    y: *const f64,
    x: *const f64,
    n: usize,
    t: usize,
    k: usize,
    out: *mut *mut PanelfePanel,
) -> PanelfeStatus {
    guard(|| {
        if y.is_null() || x.is_null() || out.is_null() {
            return Err(fail(PanelfeStatus::NullPointer, "null argument"));
        }
        let cells = n.checked_mul(t).ok_or_else(|| fail(PanelfeStatus::InvalidArgument, "n*t overflows"))?;
        let total = cells.checked_mul(k).ok_or_else(|| fail(PanelfeStatus::InvalidArgument, "k*n*t overflows"))?;
        let ys = std::slice::from_raw_parts(y, cells);
        let xs = std::slice::from_raw_parts(x, total);
        let ym = DMatrix::from_row_slice(n, t, ys);
        let xm = (0..k).map(|j| DMatrix::from_row_slice(n, t, &xs[j * cells..(j + 1) * cells])).collect();
        let panel = PanelData::new(ym, xm).map_err(lib_err)?;
        emit_panel(out, panel);
        Ok(())
    })
}

/// Read a long-format CSV `unit_id,time_id,y,x1..xK`.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn panelfe_panel_load_csv(path: *const c_char, k: usize, out: *mut *mut PanelfePanel) -> PanelfeStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(PanelfeStatus::NullPointer, "null argument"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(PanelfeStatus::InvalidArgument, "path is not UTF-8"))?;
        let panel = panelfe::load_panel_csv(path, k).map_err(lib_err)?;
        emit_panel(out, panel);
        Ok(())
    })
}

/// Draw replication `rep` of the built-in simulation design (β⁰ = 1).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn panelfe_panel_simulate(
    n: usize,
    t: usize,
    theta: f64,
    seed: u64,
    rep: usize,
    out: *mut *mut PanelfePanel,
) -> PanelfeStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(PanelfeStatus::NullPointer, "null argument"));
        }
        let cfg = SimConfig { n, t, theta, seed, ..SimConfig::default() };
        let panel = simulation::generate_panel(&cfg, rep).map_err(lib_err)?;
        emit_panel(out, panel);
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn panelfe_panel_free(panel: *mut PanelfePanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live handle; the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn panelfe_panel_dims(
    panel: *const PanelfePanel,
    n: *mut usize,
    t: *mut usize,
    k: *mut usize,
) -> PanelfeStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| fail(PanelfeStatus::NullPointer, "null panel"))?;
        for (dst, v) in [(n, p.inner.n_units()), (t, p.inner.n_periods()), (k, p.inner.k())] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Estimate with default numerical settings. `factors` is R for LS and the
/// number of initial factors for the grouped estimators (ignored for OLS);
/// `proxies` is the number of leading factors clustered.
///
/// # Safety
/// `panel` must be a live handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn panelfe_estimate(
    panel: *const PanelfePanel,
    estimator: PanelfeEstimator,
    factors: usize,
    proxies: usize,
    jackknife: bool,
    out: *mut *mut PanelfeReport,
) -> PanelfeStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| fail(PanelfeStatus::NullPointer, "null panel"))?;
        if out.is_null() {
            return Err(fail(PanelfeStatus::NullPointer, "null output"));
        }
        let g = GfeConfig { r_initial: factors, r_star: proxies };
        let spec = match estimator {
            PanelfeEstimator::Ols => EstimatorSpec::Ols,
            PanelfeEstimator::Ls => EstimatorSpec::Ls { r: factors },
            PanelfeEstimator::Gfe => EstimatorSpec::Gfe(g),
            PanelfeEstimator::GfeSplit => EstimatorSpec::GfeSplit(g),
        };
        let report = ConfiguredEstimator::new(spec).jackknifed(jackknife).estimate(&p.inner).map_err(lib_err)?;
        let tag = CString::new(report.estimator_tag.to_string()).expect("tags contain no NUL");
        *out = Box::into_raw(Box::new(PanelfeReport { inner: report, tag }));
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn panelfe_report_free(report: *mut PanelfeReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of coefficients, 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panelfe_report_k(report: *const PanelfeReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.beta_hat.len())
}

/// Estimator tag such as `GFE_JK`, owned by the report.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn panelfe_report_tag(report: *const PanelfeReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.tag.as_ptr())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), PanelfeStatus> {
    if buf.is_null() {
        return Err(fail(PanelfeStatus::NullPointer, "null buffer"));
    }
    if len < src.len() {
        return Err(fail(PanelfeStatus::BufferTooSmall, &format!("buffer holds {len}, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Copy β̂ into `buf` (capacity `len`).
///
/// # Safety
/// `report` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn panelfe_report_beta(report: *const PanelfeReport, buf: *mut f64, len: usize) -> PanelfeStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| fail(PanelfeStatus::NullPointer, "null report"))?;
        copy_out(&r.inner.beta_hat, buf, len)
    })
}

/// Copy the standard errors into `buf`; `Unavailable` when none were
/// computed.
///
/// # Safety
/// `report` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn panelfe_report_se(report: *const PanelfeReport, buf: *mut f64, len: usize) -> PanelfeStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| fail(PanelfeStatus::NullPointer, "null report"))?;
        match &r.inner.se {
            Some(se) => copy_out(se, buf, len),
            None => Err(fail(PanelfeStatus::Unavailable, "standard errors unavailable")),
        }
    })
}

/// Look up a metadata entry such as `G`, `C` or `objective`.
///
/// # Safety
/// `report` must be a live handle, `key` NUL-terminated and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn panelfe_report_metadata(
    report: *const PanelfeReport,
    key: *const c_char,
    value: *mut f64,
) -> PanelfeStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| fail(PanelfeStatus::NullPointer, "null report"))?;
        if key.is_null() || value.is_null() {
            return Err(fail(PanelfeStatus::NullPointer, "null argument"));
        }
        let key = CStr::from_ptr(key).to_string_lossy();
        match r.inner.metadata.get(key.as_ref()) {
            Some(v) => {
                *value = *v;
                Ok(())
            }
            None => Err(fail(PanelfeStatus::Unavailable, &format!("no metadata entry {key:?}"))),
        }
    })
}
