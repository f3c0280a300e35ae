//! C interface to `spatial-ridge`.
//!
//! Fits are opaque handles created by `sr_fit_trend` and released with
//! `sr_fit_free`. Every fallible function returns an [`SrStatus`]; on
//! failure `sr_last_error_message` describes the error. Coordinates are raw
//! site coordinates, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spatial_ridge::basis::TensorBasis;
use spatial_ridge::estimator::{fit_trend, RidgeFit};
use spatial_ridge::inference::{confidence_band, hac_long_run_matrix, normal_quantile, HacConfig};
use spatial_ridge::points::Points;
use spatial_ridge::sampling::rescale_sites_with_offset;
use spatial_ridge::Error;

/// Result of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    /// Null pointer, zero size or out-of-range argument.
    InvalidArgument = 1,
    /// Non-finite or inconsistent data.
    Input = 2,
    /// A site or query point lies outside the region.
    OutOfRegion = 3,
    /// The Gram matrix is singular; use a positive ridge penalty.
    SingularGram = 4,
    /// Numerical failure, such as a negative variance beyond tolerance.
    Numerical = 5,
    /// Unexpected internal failure (a caught panic).
    Internal = 6,
}

/// A fitted trend surface together with its data.
pub struct SrFit {
    fit: RidgeFit,
    y: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(err: &Error) -> SrStatus {
    match err {
        Error::InvalidParameter(_) | Error::EmptyWeightRegion | Error::EmptyInput(_) => SrStatus::InvalidArgument,
        Error::Domain { .. } | Error::OutOfRegion { .. } => SrStatus::OutOfRegion,
        Error::SingularGram { .. } => SrStatus::SingularGram,
        Error::Quadrature { .. } | Error::CellBudget { .. } | Error::NegativeVariance { .. } => SrStatus::Numerical,
        Error::Study { source, .. } => status_of(source),
        _ => SrStatus::Input,
    }
}

/// Runs `f`, turning errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> Result<(), (SrStatus, String)>) -> SrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SrStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal error (panic)");
            SrStatus::Internal
        }
    }
}

fn lib_err(err: Error) -> (SrStatus, String) {
    (status_of(&err), err.to_string())
}

fn bad(message: &str) -> (SrStatus, String) {
    (SrStatus::InvalidArgument, message.to_string())
}

/// Borrows `len` values, rejecting null pointers.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (SrStatus, String)> {
    if p.is_null() {
        return Err(bad(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (SrStatus, String)> {
    if p.is_null() {
        return Err(bad(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn query_points(fit: &RidgeFit, raw: &[f64], m: usize) -> Result<Points, (SrStatus, String)> {
    let d = fit.sites().dim();
    let predictor = fit.predictor();
    let mut scaled = Vec::with_capacity(m * d);
    for row in raw.chunks(d) {
        scaled.extend(predictor.scale_site(row));
    }
    Points::new(d, scaled).map_err(lib_err)
}

/// Fits a trend surface with a uniform tensor B-spline basis.
///
/// `sites` holds `n * d` raw coordinates, `y` holds `n` responses, `scales`
/// the `d` region side lengths, `offset` the region center (null for the
/// origin) and `interior_knots` the `d` knot counts. On success `*out`
/// receives a handle to free with `sr_fit_free`.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_trend(
    sites: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    scales: *const f64,
    offset: *const f64,
    degree: usize,
    interior_knots: *const usize,
    ridge: f64,
    out: *mut *mut SrFit,
) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad("out is null"));
        }
        *out = ptr::null_mut();
        if n == 0 || d == 0 {
            return Err(bad("need n > 0 and d > 0"));
        }
        let len = n.checked_mul(d).ok_or_else(|| bad("n * d overflows"))?;
        let raw = Points::new(d, slice(sites, len, "sites")?.to_vec()).map_err(lib_err)?;
        let y = slice(y, n, "y")?.to_vec();
        let scales = slice(scales, d, "scales")?;
        let offset = if offset.is_null() { vec![0.0; d] } else { slice(offset, d, "offset")?.to_vec() };
        let knots = slice(interior_knots, d, "interior_knots")?;
        let basis = TensorBasis::uniform(degree, knots).map_err(lib_err)?;
        let site_set = rescale_sites_with_offset(raw, scales, &offset).map_err(lib_err)?;
        let fit = fit_trend(&site_set, &y, &basis, ridge).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SrFit { fit, y }));
        Ok(())
    })
}

/// Total number of basis functions of a fit, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_dimension(fit: *const SrFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.basis().total_dimension())
}

/// Evaluates the fitted surface at `m` raw points (`m * d` values) into `out`.
///
/// # Safety
/// `fit` must be a live handle; buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_predict(fit: *const SrFit, points: *const f64, m: usize, out: *mut f64) -> SrStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| bad("fit is null"))?;
        let d = f.fit.sites().dim();
        let raw = slice(points, m.checked_mul(d).ok_or_else(|| bad("m * d overflows"))?, "points")?;
        let dest = slice_mut(out, m, "out")?;
        let pts = query_points(&f.fit, raw, m)?;
        let values = f.fit.predict(&pts).map_err(lib_err)?;
        dest.copy_from_slice(&values);
        Ok(())
    })
}

/// Pointwise confidence intervals at `m` raw points with Bartlett HAC
/// bandwidths `bandwidth_fraction * A_j`. Each output buffer holds `m` values.
///
/// # Safety
/// `fit` must be a live handle; buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_confidence_band(
    fit: *const SrFit,
    points: *const f64,
    m: usize,
    level: f64,
    bandwidth_fraction: f64,
    estimate: *mut f64,
    se: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
) -> SrStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| bad("fit is null"))?;
        let d = f.fit.sites().dim();
        let raw = slice(points, m.checked_mul(d).ok_or_else(|| bad("m * d overflows"))?, "points")?;
        let outs = [
            slice_mut(estimate, m, "estimate")?,
            slice_mut(se, m, "se")?,
            slice_mut(lower, m, "lower")?,
            slice_mut(upper, m, "upper")?,
        ];
        let pts = query_points(&f.fit, raw, m)?;
        let hac = HacConfig::from_fraction(f.fit.sites().scales(), bandwidth_fraction).map_err(lib_err)?;
        let var = hac_long_run_matrix(&f.fit, &f.y, &hac).map_err(lib_err)?;
        let band = confidence_band(&f.fit, &var, &pts, level).map_err(lib_err)?;
        let [e, s, l, u] = outs;
        e.copy_from_slice(&band.estimate);
        s.copy_from_slice(&band.se);
        l.copy_from_slice(&band.lower);
        u.copy_from_slice(&band.upper);
        Ok(())
    })
}

/// Serializes the fit artifact as JSON into `*out`; release it with
/// `sr_string_free`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_to_json(fit: *const SrFit, out: *mut *mut c_char) -> SrStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad("out is null"));
        }
        *out = ptr::null_mut();
        let f = fit.as_ref().ok_or_else(|| bad("fit is null"))?;
        let json = f.fit.artifact().to_json().map_err(lib_err)?;
        *out = CString::new(json).map_err(|_| bad("artifact contains a NUL byte"))?.into_raw();
        Ok(())
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or come from `sr_fit_to_json`, and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Frees a fit handle. Null is ignored.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_free(fit: *mut SrFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Standard normal quantile: -inf at 0, +inf at 1, NaN outside [0, 1].
#[no_mangle]
pub extern "C" fn sr_normal_quantile(p: f64) -> f64 {
    normal_quantile(p)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}
