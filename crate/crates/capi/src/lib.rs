//! C ABI over the core library: opaque handles for sets and metrics, status
//! codes, and flat `double*` buffers. The companion header lives at
//! `include/cmest.h` and is kept in lockstep by the `abi` test.
//!
//! Conventions:
//! * every fallible call returns a `cmest_status` and writes results through
//!   out-pointers;
//! * handles are created by `*_new`/`*_from_json` and released by the
//!   matching `*_free`; freeing NULL is a no-op;
//! * the last error message is thread-local, retrieved with
//!   `cmest_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};

use cmest::error::Error;
use cmest::geometry::{dproj, dproj_fd, project, ConvexSet};
use cmest::losses::Loss;
use cmest::metric::SpdMetric;
use cmest::solver::{minimize, EmpiricalRisk, SolverConfig};

/// Status codes shared with the header.
pub const CMEST_OK: c_int = 0;
pub const CMEST_ERR_INVALID: c_int = 1;
pub const CMEST_ERR_NUMERIC: c_int = 2;
pub const CMEST_ERR_INFEASIBLE: c_int = 3;
pub const CMEST_ERR_UNSUPPORTED: c_int = 4;
pub const CMEST_ERR_RESOURCE: c_int = 5;
pub const CMEST_ERR_PANIC: c_int = 6;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> c_int {
    match err {
        Error::InvalidArgument(_) | Error::Io(_) => CMEST_ERR_INVALID,
        Error::NumericFailure { .. } | Error::DegenerateHessian(_) => CMEST_ERR_NUMERIC,
        Error::InfeasibleSet => CMEST_ERR_INFEASIBLE,
        Error::UnsupportedCase(_) => CMEST_ERR_UNSUPPORTED,
        Error::ResourceLimit(_) => CMEST_ERR_RESOURCE,
    }
}

/// Run a fallible body, translating errors and panics into status codes.
fn guarded<F: FnOnce() -> Result<(), Error>>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CMEST_OK,
        Ok(Err(e)) => {
            let code = status_of(&e);
            set_error(e.to_string());
            code
        }
        Err(_) => {
            set_error("panic across the FFI boundary");
            CMEST_ERR_PANIC
        }
    }
}

/// Opaque constraint-set handle.
pub struct CmestSet(ConvexSet);
/// Opaque metric handle.
pub struct CmestMetric(SpdMetric);

unsafe fn slice_arg<'a>(ptr: *const c_double, len: usize) -> Result<&'a [f64], Error> {
    if ptr.is_null() {
        return Err(Error::invalid("null buffer"));
    }
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, Error> {
    if ptr.is_null() {
        return Err(Error::invalid("null string"));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Error::invalid("string is not valid UTF-8"))
}

/// Version of the library as a NUL-terminated static string.
#[no_mangle]
pub extern "C" fn cmest_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message into `buf` (truncated, always NUL-terminated).
/// Returns the untruncated length.
#[no_mangle]
pub extern "C" fn cmest_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Parse a set from its JSON description
/// (`{"type": "ball"|"box"|"polyhedron"|"cone"|"full", ...}`).
#[no_mangle]
pub unsafe extern "C" fn cmest_set_from_json(
    json: *const c_char,
    out: *mut *mut CmestSet,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return Err(Error::invalid("null out pointer"));
        }
        let text = unsafe { str_arg(json) }?;
        let set: ConvexSet =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("set json: {e}")))?;
        unsafe { *out = Box::into_raw(Box::new(CmestSet(set))) };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cmest_set_free(set: *mut CmestSet) {
    if !set.is_null() {
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Ambient dimension of the set; 0 on a null handle.
#[no_mangle]
pub unsafe extern "C" fn cmest_set_dim(set: *const CmestSet) -> usize {
    if set.is_null() {
        return 0;
    }
    unsafe { &*set }.0.dim()
}

/// Identity metric on `R^dim`.
#[no_mangle]
pub unsafe extern "C" fn cmest_metric_identity(dim: usize, out: *mut *mut CmestMetric) -> c_int {
    guarded(|| {
        if out.is_null() {
            return Err(Error::invalid("null out pointer"));
        }
        if dim == 0 || dim > cmest::metric::MAX_DIM {
            return Err(Error::invalid("dimension out of range"));
        }
        unsafe { *out = Box::into_raw(Box::new(CmestMetric(SpdMetric::identity(dim)))) };
        Ok(())
    })
}

/// Metric from a row-major `dim x dim` SPD matrix.
#[no_mangle]
pub unsafe extern "C" fn cmest_metric_new(
    dim: usize,
    s_row_major: *const c_double,
    out: *mut *mut CmestMetric,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return Err(Error::invalid("null out pointer"));
        }
        let data = unsafe { slice_arg(s_row_major, dim.checked_mul(dim).ok_or_else(|| Error::invalid("dimension overflow"))?) }?;
        let m = SpdMetric::new(DMatrix::from_row_slice(dim, dim, data))?;
        unsafe { *out = Box::into_raw(Box::new(CmestMetric(m))) };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cmest_metric_free(metric: *mut CmestMetric) {
    if !metric.is_null() {
        drop(unsafe { Box::from_raw(metric) });
    }
}

unsafe fn handles<'a>(
    set: *const CmestSet,
    metric: *const CmestMetric,
) -> Result<(&'a ConvexSet, &'a SpdMetric), Error> {
    if set.is_null() || metric.is_null() {
        return Err(Error::invalid("null handle"));
    }
    Ok((&unsafe { &*set }.0, &unsafe { &*metric }.0))
}

/// Membership within Euclidean slack `tol`; writes 0/1 into `out`.
#[no_mangle]
pub unsafe extern "C" fn cmest_set_contains(
    set: *const CmestSet,
    x: *const c_double,
    len: usize,
    tol: c_double,
    out: *mut c_int,
) -> c_int {
    guarded(|| {
        if set.is_null() || out.is_null() {
            return Err(Error::invalid("null handle"));
        }
        let set = &unsafe { &*set }.0;
        let x = DVector::from_column_slice(unsafe { slice_arg(x, len) }?);
        let inside = set.contains(&x, tol)?;
        unsafe { *out = inside as c_int };
        Ok(())
    })
}

/// Metric projection of `x` onto the set; writes `len` doubles into `out`.
#[no_mangle]
pub unsafe extern "C" fn cmest_project(
    set: *const CmestSet,
    metric: *const CmestMetric,
    x: *const c_double,
    len: usize,
    tol: c_double,
    out: *mut c_double,
) -> c_int {
    guarded(|| {
        let (set, m) = unsafe { handles(set, metric) }?;
        if out.is_null() {
            return Err(Error::invalid("null out pointer"));
        }
        let x = DVector::from_column_slice(unsafe { slice_arg(x, len) }?);
        let y = project(set, &x, m, tol)?;
        unsafe { ptr::copy_nonoverlapping(y.as_slice().as_ptr(), out, len) };
        Ok(())
    })
}

/// Directional derivative of the metric projection at `x` in direction `z`.
/// `eps > 0` selects the finite-difference quotient at that step instead of
/// the closed dispatch.
#[no_mangle]
pub unsafe extern "C" fn cmest_dproj(
    set: *const CmestSet,
    metric: *const CmestMetric,
    x: *const c_double,
    z: *const c_double,
    len: usize,
    eps: c_double,
    out: *mut c_double,
) -> c_int {
    guarded(|| {
        let (set, m) = unsafe { handles(set, metric) }?;
        if out.is_null() {
            return Err(Error::invalid("null out pointer"));
        }
        let x = DVector::from_column_slice(unsafe { slice_arg(x, len) }?);
        let z = DVector::from_column_slice(unsafe { slice_arg(z, len) }?);
        let d = if eps > 0.0 { dproj_fd(set, &x, &z, m, eps)? } else { dproj(set, &x, &z, m)? };
        unsafe { ptr::copy_nonoverlapping(d.as_slice().as_ptr(), out, len) };
        Ok(())
    })
}

/// Minimize an empirical location/regression risk over the set by projected
/// subgradient descent with default solver settings.
///
/// `loss_json` is the loss description (`{"loss": "squared"}` etc.); `data`
/// is row-major `n x datum_dim`. Writes the estimate (of the parameter
/// dimension implied by the loss) into `theta_out`, and the achieved risk and
/// optimality certificate into `risk_out`/`certificate_out` when non-null.
/// Returns `CMEST_ERR_NUMERIC` when the iteration cap is reached without a
/// certificate.
#[no_mangle]
pub unsafe extern "C" fn cmest_minimize(
    loss_json: *const c_char,
    data: *const c_double,
    n: usize,
    datum_dim: usize,
    set: *const CmestSet,
    metric: *const CmestMetric,
    theta_out: *mut c_double,
    risk_out: *mut c_double,
    certificate_out: *mut c_double,
) -> c_int {
    guarded(|| {
        let (set, m) = unsafe { handles(set, metric) }?;
        if theta_out.is_null() {
            return Err(Error::invalid("null out pointer"));
        }
        let loss: Loss = serde_json::from_str(unsafe { str_arg(loss_json) }?)
            .map_err(|e| Error::invalid(format!("loss json: {e}")))?;
        let loss = loss.validated()?;
        let flat = unsafe { slice_arg(data, n.checked_mul(datum_dim).ok_or_else(|| Error::invalid("size overflow"))?) }?;
        let rows: Vec<DVector<f64>> =
            flat.chunks(datum_dim).map(DVector::from_column_slice).collect();
        let risk = EmpiricalRisk::new(&loss, &rows)?;
        let out = minimize(&risk, set, m, &SolverConfig::default())?;
        let dim = loss.param_dim(datum_dim)?;
        unsafe {
            ptr::copy_nonoverlapping(out.theta_hat.as_ptr(), theta_out, dim);
            if !risk_out.is_null() {
                *risk_out = out.risk;
            }
            if !certificate_out.is_null() {
                *certificate_out = out.certificate;
            }
        }
        if !out.converged {
            return Err(Error::NumericFailure {
                what: "minimize",
                residual: out.certificate,
            });
        }
        Ok(())
    })
}
