//! C ABI for the lwck library: opaque handles over tensors and CP
//! decompositions, status codes, and a thread-local last-error message.
//!
//! Conventions: constructors return an owned pointer or null (with the error
//! retrievable via `lwck_last_error_message`); every other fallible call
//! returns an `LwckStatus` and writes results through out-pointers; handles
//! are released with the matching `_free` function and must not be used
//! afterwards.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;

use lwck::calibration::{bin_stats, ece, fit_temperature, PredictionSet, TemperatureFitOptions};
use lwck::cpd::{cp_als, reconstruct, sensitivity, AlsOptions, CPDecomposition};
use lwck::epc::{decompose_with_epc, EpcConfig};
use lwck::svd::svd_split;
use lwck::tensor::{relative_error, DenseMatrix, DenseTensor};

/// Result code of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwckStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IoError = 3,
    NumericError = 4,
    BufferTooSmall = 5,
}

/// Opaque dense tensor handle.
pub struct LwckTensor {
    inner: DenseTensor,
}

/// Opaque CP decomposition handle.
pub struct LwckCpd {
    inner: CPDecomposition,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl std::fmt::Display) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::default();
    });
}

/// Message describing the most recent failure on this thread; empty string
/// when the last call succeeded. The pointer stays valid until the next FFI
/// call on the same thread.
#[no_mangle]
pub extern "C" fn lwck_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Build a tensor from `ndim` extents and a row-major payload of their
/// product in length. Returns null on error.
///
/// # Safety
/// `dims` must point to `ndim` readable u64 values and `data` to the
/// product-of-dims readable f64 values.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_create(
    dims: *const u64,
    ndim: usize,
    data: *const f64,
) -> *mut LwckTensor {
    clear_error();
    let Some(dims) = slice_arg(dims, ndim) else {
        set_error("dims pointer is null");
        return std::ptr::null_mut();
    };
    let dims_usize: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    let len: usize = dims_usize.iter().product();
    let Some(data) = slice_arg(data, len) else {
        set_error("data pointer is null");
        return std::ptr::null_mut();
    };
    match DenseTensor::new(dims_usize, data.to_vec()) {
        Ok(inner) => Box::into_raw(Box::new(LwckTensor { inner })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// Read a tensor file (LWTN format). Returns null on error.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_read(path: *const c_char) -> *mut LwckTensor {
    clear_error();
    if path.is_null() {
        set_error("path pointer is null");
        return std::ptr::null_mut();
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(e) => {
            set_error(format!("path is not valid UTF-8: {e}"));
            return std::ptr::null_mut();
        }
    };
    match lwck::io::read_tensor(path) {
        Ok(inner) => Box::into_raw(Box::new(LwckTensor { inner })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// Write a tensor file (LWTN format, 64-bit payload).
///
/// # Safety
/// `tensor` must be a live handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_write(
    tensor: *const LwckTensor,
    path: *const c_char,
) -> LwckStatus {
    clear_error();
    if tensor.is_null() || path.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(e) => {
            set_error(format!("path is not valid UTF-8: {e}"));
            return LwckStatus::InvalidArgument;
        }
    };
    match lwck::io::write_tensor(&(*tensor).inner, path) {
        Ok(()) => LwckStatus::Ok,
        Err(e) => {
            set_error(e);
            LwckStatus::IoError
        }
    }
}

/// Number of modes; 0 when the handle is null.
///
/// # Safety
/// `tensor` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_ndim(tensor: *const LwckTensor) -> usize {
    if tensor.is_null() {
        0
    } else {
        (*tensor).inner.order()
    }
}

/// Total element count; 0 when the handle is null.
///
/// # Safety
/// `tensor` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_len(tensor: *const LwckTensor) -> usize {
    if tensor.is_null() {
        0
    } else {
        (*tensor).inner.len()
    }
}

/// Copy the extents into `out` (capacity in elements).
///
/// # Safety
/// `tensor` must be a live handle; `out` must have room for `capacity` u64s.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_dims(
    tensor: *const LwckTensor,
    out: *mut u64,
    capacity: usize,
) -> LwckStatus {
    clear_error();
    if tensor.is_null() || out.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    let dims = (*tensor).inner.dims();
    if capacity < dims.len() {
        set_error(format!("need capacity {}, got {capacity}", dims.len()));
        return LwckStatus::BufferTooSmall;
    }
    for (i, &d) in dims.iter().enumerate() {
        *out.add(i) = d as u64;
    }
    LwckStatus::Ok
}

/// Copy the row-major payload into `out` (capacity in elements).
///
/// # Safety
/// `tensor` must be a live handle; `out` must have room for `capacity` f64s.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_copy_data(
    tensor: *const LwckTensor,
    out: *mut f64,
    capacity: usize,
) -> LwckStatus {
    clear_error();
    if tensor.is_null() || out.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    let data = (*tensor).inner.data();
    if capacity < data.len() {
        set_error(format!("need capacity {}, got {capacity}", data.len()));
        return LwckStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    LwckStatus::Ok
}

/// Release a tensor handle; null is ignored.
///
/// # Safety
/// `tensor` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn lwck_tensor_free(tensor: *mut LwckTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// ‖x − y‖_F / ‖x‖_F into `out`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lwck_relative_error(
    x: *const LwckTensor,
    y: *const LwckTensor,
    out: *mut f64,
) -> LwckStatus {
    clear_error();
    if x.is_null() || y.is_null() || out.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    match relative_error(&(*x).inner, &(*y).inner) {
        Ok(v) => {
            *out = v;
            LwckStatus::Ok
        }
        Err(e) => {
            set_error(e);
            LwckStatus::InvalidArgument
        }
    }
}

/// Rank-`rank` CP decomposition of a 3rd-order tensor by alternating least
/// squares. Returns null on error.
///
/// # Safety
/// `tensor` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lwck_cp_decompose(
    tensor: *const LwckTensor,
    rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> *mut LwckCpd {
    clear_error();
    if tensor.is_null() {
        set_error("tensor pointer is null");
        return std::ptr::null_mut();
    }
    let opts = AlsOptions {
        max_iters,
        tol,
        seed,
    };
    match cp_als(&(*tensor).inner, rank, &opts) {
        Ok(inner) => Box::into_raw(Box::new(LwckCpd { inner })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// CP decomposition with error-preserving correction: after the ALS fit,
/// diverging rank-1 components are shrunk while the reconstruction error
/// stays within `delta` (absolute Frobenius units; pass 0 to hold the error
/// the fit achieved). Returns null on error.
///
/// # Safety
/// `tensor` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lwck_cp_decompose_epc(
    tensor: *const LwckTensor,
    rank: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
    delta: f64,
) -> *mut LwckCpd {
    clear_error();
    if tensor.is_null() {
        set_error("tensor pointer is null");
        return std::ptr::null_mut();
    }
    if delta < 0.0 {
        set_error("delta must be nonnegative");
        return std::ptr::null_mut();
    }
    let opts = AlsOptions {
        max_iters,
        tol,
        seed,
    };
    let cfg = EpcConfig {
        delta,
        norm_threshold: 0.0,
        ..EpcConfig::for_tensor(&(*tensor).inner, delta)
    };
    match decompose_with_epc(&(*tensor).inner, rank, &opts, &cfg) {
        Ok(result) => Box::into_raw(Box::new(LwckCpd {
            inner: result.decomposition,
        })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// Component count; 0 when the handle is null.
///
/// # Safety
/// `cpd` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_rank(cpd: *const LwckCpd) -> usize {
    if cpd.is_null() {
        0
    } else {
        (*cpd).inner.rank()
    }
}

/// Number of factor matrices; 0 when the handle is null.
///
/// # Safety
/// `cpd` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_order(cpd: *const LwckCpd) -> usize {
    if cpd.is_null() {
        0
    } else {
        (*cpd).inner.factors().len()
    }
}

/// Σ λ_r² (the component energy EPC minimizes) into `out`.
///
/// # Safety
/// `cpd` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_sensitivity(cpd: *const LwckCpd, out: *mut f64) -> LwckStatus {
    clear_error();
    if cpd.is_null() || out.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    *out = sensitivity(&(*cpd).inner);
    LwckStatus::Ok
}

/// Copy the descending component coefficients into `out`.
///
/// # Safety
/// `cpd` must be a live handle; `out` must have room for `capacity` f64s.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_coeffs(
    cpd: *const LwckCpd,
    out: *mut f64,
    capacity: usize,
) -> LwckStatus {
    clear_error();
    if cpd.is_null() || out.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    let coeffs = (*cpd).inner.coeffs();
    if capacity < coeffs.len() {
        set_error(format!("need capacity {}, got {capacity}", coeffs.len()));
        return LwckStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(coeffs.as_ptr(), out, coeffs.len());
    LwckStatus::Ok
}

/// Shape of factor matrix `mode` (rows × rank).
///
/// # Safety
/// `cpd` must be a live handle; `rows`/`cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_factor_shape(
    cpd: *const LwckCpd,
    mode: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> LwckStatus {
    clear_error();
    if cpd.is_null() || rows.is_null() || cols.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    let factors = (*cpd).inner.factors();
    let Some(f) = factors.get(mode) else {
        set_error(format!(
            "mode {mode} out of range for order {}",
            factors.len()
        ));
        return LwckStatus::InvalidArgument;
    };
    *rows = f.rows();
    *cols = f.cols();
    LwckStatus::Ok
}

/// Copy factor matrix `mode` (row-major) into `out`.
///
/// # Safety
/// `cpd` must be a live handle; `out` must have room for `capacity` f64s.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_factor_copy(
    cpd: *const LwckCpd,
    mode: usize,
    out: *mut f64,
    capacity: usize,
) -> LwckStatus {
    clear_error();
    if cpd.is_null() || out.is_null() {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    }
    let factors = (*cpd).inner.factors();
    let Some(f) = factors.get(mode) else {
        set_error(format!(
            "mode {mode} out of range for order {}",
            factors.len()
        ));
        return LwckStatus::InvalidArgument;
    };
    if capacity < f.data().len() {
        set_error(format!("need capacity {}, got {capacity}", f.data().len()));
        return LwckStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(f.data().as_ptr(), out, f.data().len());
    LwckStatus::Ok
}

/// Materialize the decomposition as a new tensor handle. Returns null on
/// error.
///
/// # Safety
/// `cpd` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_reconstruct(cpd: *const LwckCpd) -> *mut LwckTensor {
    clear_error();
    if cpd.is_null() {
        set_error("cpd pointer is null");
        return std::ptr::null_mut();
    }
    match reconstruct(&(*cpd).inner) {
        Ok(inner) => Box::into_raw(Box::new(LwckTensor { inner })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// Release a decomposition handle; null is ignored.
///
/// # Safety
/// `cpd` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn lwck_cpd_free(cpd: *mut LwckCpd) {
    if !cpd.is_null() {
        drop(Box::from_raw(cpd));
    }
}

/// Rank-`rank` SVD split of a row-major `rows`×`cols` kernel matrix
/// (input channels × output channels) into the two pointwise weight
/// matrices: `w1_out` receives rows×rank, `w2_out` rank×cols, both
/// row-major, and w1·w2 is the best rank-`rank` reconstruction.
///
/// # Safety
/// `matrix` must hold rows×cols f64s; `w1_out`/`w2_out` must have room for
/// rows×rank and rank×cols f64s respectively.
#[no_mangle]
pub unsafe extern "C" fn lwck_svd_split(
    matrix: *const f64,
    rows: usize,
    cols: usize,
    rank: usize,
    w1_out: *mut f64,
    w2_out: *mut f64,
) -> LwckStatus {
    clear_error();
    let Some(data) = slice_arg(matrix, rows.saturating_mul(cols)) else {
        set_error("matrix pointer is null");
        return LwckStatus::NullPointer;
    };
    if w1_out.is_null() || w2_out.is_null() {
        set_error("output pointer is null");
        return LwckStatus::NullPointer;
    }
    let a = match DenseMatrix::new(rows, cols, data.to_vec()) {
        Ok(a) => a,
        Err(e) => {
            set_error(e);
            return LwckStatus::InvalidArgument;
        }
    };
    match svd_split(&a, rank) {
        Ok((w1, w2)) => {
            std::ptr::copy_nonoverlapping(w1.data().as_ptr(), w1_out, w1.data().len());
            std::ptr::copy_nonoverlapping(w2.data().as_ptr(), w2_out, w2.data().len());
            LwckStatus::Ok
        }
        Err(e) => {
            set_error(e);
            LwckStatus::NumericError
        }
    }
}

/// Expected calibration error of `n` probability/label pairs over `bins`
/// equal-width bins, into `out`.
///
/// # Safety
/// `p_hat` and `labels` must hold `n` f64s; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lwck_ece(
    p_hat: *const f64,
    labels: *const f64,
    n: usize,
    bins: usize,
    out: *mut f64,
) -> LwckStatus {
    clear_error();
    let (Some(p_hat), Some(labels)) = (slice_arg(p_hat, n), slice_arg(labels, n)) else {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    };
    if out.is_null() {
        set_error("out pointer is null");
        return LwckStatus::NullPointer;
    }
    let result = PredictionSet::new(p_hat.to_vec(), labels.to_vec(), None)
        .and_then(|preds| bin_stats(&preds, bins).map(|b| (preds, b)))
        .and_then(|(preds, b)| ece(&b, preds.len()));
    match result {
        Ok(v) => {
            *out = v;
            LwckStatus::Ok
        }
        Err(e) => {
            set_error(e);
            LwckStatus::InvalidArgument
        }
    }
}

/// Fit the sigmoid temperature minimizing the weighted BCE of
/// sigmoid(logit/T) against the labels, into `out`.
///
/// # Safety
/// `logits` and `labels` must hold `n` f64s; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lwck_fit_temperature(
    logits: *const f64,
    labels: *const f64,
    n: usize,
    out: *mut f64,
) -> LwckStatus {
    clear_error();
    let (Some(logits), Some(labels)) = (slice_arg(logits, n), slice_arg(labels, n)) else {
        set_error("null pointer");
        return LwckStatus::NullPointer;
    };
    if out.is_null() {
        set_error("out pointer is null");
        return LwckStatus::NullPointer;
    }
    let probs: Vec<f64> = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
    let result = PredictionSet::new(probs, labels.to_vec(), Some(logits.to_vec()))
        .and_then(|preds| fit_temperature(&preds, &TemperatureFitOptions::default()));
    match result {
        Ok(v) => {
            *out = v;
            LwckStatus::Ok
        }
        Err(e) => {
            set_error(e);
            LwckStatus::NumericError
        }
    }
}
