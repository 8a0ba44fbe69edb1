//! C ABI for `vctail`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_fit`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`VctailStatus`]; on failure a description of the error is kept
//! per thread and can be read with [`vctail_last_error_message`] and
//! [`vctail_last_error_kind`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use vctail::estimator::{fit_grid, hill};
use vctail::hypothesis::{critical_values, gumbel_p_value, NullHypothesis, TestContext, TestOptions};
use vctail::tuning::threshold_for_fraction;
use vctail::{rescale_t_to_unit_cube, Dataset, Error, ErrorCategory, ExecMode, FitConfig, GridFit, KernelSpec};

/// Result of a call. Values 1 to 3 mirror the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VctailStatus {
    Ok = 0,
    UsageError = 1,
    DataError = 2,
    NumericalError = 3,
    NullPointer = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VctailKernel {
    /// Product Epanechnikov kernel.
    Epanechnikov = 0,
    /// Spherically symmetric Epanechnikov kernel.
    Spherical = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VctailNull {
    Zero = 0,
    Constant = 1,
}

/// Opaque validated sample.
pub struct VctailDataset {
    inner: Dataset,
}

/// Opaque coefficient estimates on an equally spaced lattice.
pub struct VctailGridFit {
    inner: GridFit,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VctailTestOutcome {
    pub statistic: f64,
    pub critical_low: f64,
    pub critical_high: f64,
    pub p_value: f64,
    /// The constant under the null; zero for the sparsity null.
    pub null_value: f64,
    pub rejected: bool,
    pub skipped_points: usize,
}

struct LastError {
    kind: CString,
    message: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_last_error(kind: &str, message: &str) {
    let clean = |s: &str| CString::new(s.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError {
            kind: clean(kind),
            message: clean(message),
        })
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> VctailStatus {
    match e.category() {
        ErrorCategory::Usage => VctailStatus::UsageError,
        ErrorCategory::Data => VctailStatus::DataError,
        ErrorCategory::Numerical => VctailStatus::NumericalError,
    }
}

/// Runs `f`, records any error or panic, and converts the outcome to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VctailStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VctailStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error("NullPointer", &format!("{what} must not be null"));
            VctailStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.kind(), &e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("Panic", "internal panic");
            VctailStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// Borrows `len` values; a null pointer is allowed only when `len == 0`.
unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(slice::from_raw_parts(non_null(p, what)?, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    Ok(slice::from_raw_parts_mut(non_null(p as *const T, what)? as *mut T, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vctail_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next fallible call on the same thread.
#[no_mangle]
pub extern "C" fn vctail_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// Stable error kind name (for example `"InsufficientLocalData"`) of the last
/// failed call on this thread, or NULL.
#[no_mangle]
pub extern "C" fn vctail_last_error_kind() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.kind.as_ptr()))
}

/// Builds a dataset from row-major arrays: `y[n]`, `x[n * p]`, `t[n * q]`.
/// With `rescale_t` each smoothing coordinate is mapped onto `[0, 1]`.
///
/// # Safety
/// The arrays must hold the stated number of values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vctail_dataset_new(
    y: *const f64,
    x: *const f64,
    t: *const f64,
    n: usize,
    p: usize,
    q: usize,
    rescale_t: bool,
    out: *mut *mut VctailDataset,
) -> VctailStatus {
    guard(|| {
        let out = output(out, 1, "out")?;
        let y = input(y, n, "y")?.to_vec();
        let x = input(x, n * p, "x")?.to_vec();
        let t = input(t, n * q, "t")?.to_vec();
        let mut data = Dataset::from_columns(y, x, t, p, q)?;
        if rescale_t {
            data = rescale_t_to_unit_cube(&data)?.0;
        }
        out[0] = Box::into_raw(Box::new(VctailDataset { inner: data }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from [`vctail_dataset_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vctail_dataset_free(dataset: *mut VctailDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Sample size, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vctail_dataset_n(dataset: *const VctailDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.n())
}

/// Hill estimate from the responses above `omega`.
///
/// # Safety
/// `y` must hold `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vctail_hill(y: *const f64, n: usize, omega: f64, out: *mut f64) -> VctailStatus {
    guard(|| {
        let out = output(out, 1, "out")?;
        out[0] = hill(input(y, n, "y")?, omega)?;
        Ok(())
    })
}

/// Threshold leaving `round(fraction * n)` responses strictly above it.
///
/// # Safety
/// `y` must hold `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vctail_threshold_for_fraction(
    y: *const f64,
    n: usize,
    fraction: f64,
    out: *mut f64,
) -> VctailStatus {
    guard(|| {
        let out = output(out, 1, "out")?;
        out[0] = threshold_for_fraction(input(y, n, "y")?, fraction)?;
        Ok(())
    })
}

/// Fits the coefficient functions on a lattice with `points_per_axis` points
/// per smoothing axis. `bandwidths` holds one value per axis.
///
/// # Safety
/// `dataset` must be a live handle, `bandwidths` must hold `q` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vctail_fit_grid(
    dataset: *const VctailDataset,
    kernel: VctailKernel,
    bandwidths: *const f64,
    threshold: f64,
    include_intercept: bool,
    points_per_axis: usize,
    parallel: bool,
    out: *mut *mut VctailGridFit,
) -> VctailStatus {
    guard(|| {
        let out = output(out, 1, "out")?;
        let data = &(*non_null(dataset, "dataset")?).inner;
        let q = data.q();
        let spec = match kernel {
            VctailKernel::Epanechnikov => KernelSpec::epanechnikov(q),
            VctailKernel::Spherical => KernelSpec::spherical(q),
        };
        let h = input(bandwidths, q, "bandwidths")?.to_vec();
        let cfg = FitConfig::new(spec, h, threshold, include_intercept)?;
        let mode = if parallel { ExecMode::Parallel } else { ExecMode::Serial };
        let fit = fit_grid(data, points_per_axis, &cfg, mode)?;
        out[0] = Box::into_raw(Box::new(VctailGridFit { inner: fit }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from [`vctail_fit_grid`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vctail_grid_fit_free(fit: *mut VctailGridFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of lattice points, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vctail_grid_fit_len(fit: *const VctailGridFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.len())
}

/// Number of coefficient functions, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vctail_grid_fit_coefficients(fit: *const VctailGridFit) -> usize {
    fit.as_ref().map_or(0, |f| coefficient_count(&f.inner))
}

fn coefficient_count(fit: &GridFit) -> usize {
    fit.fits
        .iter()
        .find_map(|r| r.as_ref().ok().map(|c| c.theta.len()))
        .unwrap_or(0)
}

/// Number of failed lattice points, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vctail_grid_fit_failed(fit: *const VctailGridFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.failed_count())
}

/// Copies coefficient `j` over the lattice into `values[len]`. `valid[l]` is
/// set to false where the fit failed, in which case `values[l]` is NaN.
/// `len` must equal [`vctail_grid_fit_len`].
///
/// # Safety
/// `fit` must be a live handle and both outputs must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn vctail_grid_fit_coefficient(
    fit: *const VctailGridFit,
    j: usize,
    values: *mut f64,
    valid: *mut bool,
    len: usize,
) -> VctailStatus {
    guard(|| {
        let fit = &(*non_null(fit, "fit")?).inner;
        if len != fit.len() {
            return Err(Error::ShapeMismatch(format!("buffer of {len} for {} lattice points", fit.len())).into());
        }
        if j >= coefficient_count(fit) {
            return Err(Error::InvalidConfig(format!("coefficient index {j} out of range")).into());
        }
        let values = output(values, len, "values")?;
        let valid = output(valid, len, "valid")?;
        for (l, v) in fit.coefficient(j).into_iter().enumerate() {
            values[l] = v.unwrap_or(f64::NAN);
            valid[l] = v.is_some();
        }
        Ok(())
    })
}

/// Copies the coordinates of lattice point `l` into `t[q]`.
///
/// # Safety
/// `fit` must be a live handle and `t` must hold `q` values.
#[no_mangle]
pub unsafe extern "C" fn vctail_grid_fit_point(
    fit: *const VctailGridFit,
    l: usize,
    t: *mut f64,
    q: usize,
) -> VctailStatus {
    guard(|| {
        let fit = &(*non_null(fit, "fit")?).inner;
        let point = fit
            .grid
            .get(l)
            .ok_or_else(|| Error::InvalidConfig(format!("lattice point {l} out of range")))?;
        if point.len() != q {
            return Err(Error::DimensionMismatch { expected: point.len(), found: q }.into());
        }
        output(t, q, "t")?.copy_from_slice(point);
        Ok(())
    })
}

/// Sup-deviation test of coefficient `j` against the zero or the constant
/// null at level `alpha`, with the default statistic options.
///
/// # Safety
/// Both handles must be live, the fit must come from the same dataset and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vctail_test(
    dataset: *const VctailDataset,
    fit: *const VctailGridFit,
    j: usize,
    null: VctailNull,
    alpha: f64,
    out: *mut VctailTestOutcome,
) -> VctailStatus {
    guard(|| {
        let out = output(out, 1, "out")?;
        let data = &(*non_null(dataset, "dataset")?).inner;
        let fit = &(*non_null(fit, "fit")?).inner;
        let ctx = TestContext::new(data, fit, &TestOptions::default())?;
        let outcome = match null {
            VctailNull::Zero => ctx.test_zero(j, alpha)?,
            VctailNull::Constant => ctx.test_constant(j, alpha)?,
        };
        out[0] = VctailTestOutcome {
            statistic: outcome.statistic,
            critical_low: outcome.critical_low,
            critical_high: outcome.critical_high,
            p_value: outcome.p_value,
            null_value: match outcome.null {
                NullHypothesis::Zero => 0.0,
                NullHypothesis::Constant(c) => c,
            },
            rejected: outcome.rejected,
            skipped_points: outcome.skipped_points,
        };
        Ok(())
    })
}

/// Two-sided Gumbel critical values at level `alpha`.
///
/// # Safety
/// `low` and `high` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vctail_critical_values(alpha: f64, low: *mut f64, high: *mut f64) -> VctailStatus {
    guard(|| {
        let low = output(low, 1, "low")?;
        let high = output(high, 1, "high")?;
        (low[0], high[0]) = critical_values(alpha)?;
        Ok(())
    })
}

/// `min(G(s), 1 - G(s))` for the standard Gumbel distribution `G`.
#[no_mangle]
pub extern "C" fn vctail_gumbel_p_value(statistic: f64) -> f64 {
    gumbel_p_value(statistic)
}

/// Converts a status into a static description.
#[no_mangle]
pub extern "C" fn vctail_status_name(status: VctailStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        VctailStatus::Ok => b"ok\0",
        VctailStatus::UsageError => b"usage error\0",
        VctailStatus::DataError => b"data error\0",
        VctailStatus::NumericalError => b"numerical error\0",
        VctailStatus::NullPointer => b"null pointer\0",
        VctailStatus::Panic => b"panic\0",
    };
    s.as_ptr().cast()
}
