// SPDX-License-Identifier: Apache-2.0

//! C ABI over the dqmor inference path.
//!
//! Every entry point returns a [`DqmorStatus`]. On failure, a description is
//! kept per thread and can be read with [`dqmor_last_error_message`]. Models
//! are opaque handles owned by the caller and released with
//! [`dqmor_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use dqmor::aggregation::{majority_vote, probability_vote};
use dqmor::dataio::load_checkpoint;
use dqmor::{Checkpoint, Error, ModelKind, Posterior};

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqmorStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    VersionMismatch = 5,
    MalformedCheckpoint = 6,
    DegenerateEncoding = 7,
    BufferTooSmall = 8,
    Internal = 99,
}

/// Which estimator a loaded model holds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqmorModelKind {
    Qmr = 0,
    Dmkdc = 1,
}

/// Opaque handle to a loaded checkpoint.
pub struct DqmorModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &Error) -> DqmorStatus {
    match err {
        Error::InvalidArgument(_) | Error::OracleTooLarge { .. } | Error::CheckTooLarge { .. } => {
            DqmorStatus::InvalidArgument
        }
        Error::DegenerateEncoding { .. } => DqmorStatus::DegenerateEncoding,
        Error::TrainingDiverged { .. } => DqmorStatus::Internal,
        Error::Parse { .. } => DqmorStatus::Parse,
        Error::VersionMismatch { .. } => DqmorStatus::VersionMismatch,
        Error::MalformedCheckpoint(_) => DqmorStatus::MalformedCheckpoint,
        Error::Io { .. } => DqmorStatus::Io,
    }
}

fn fail(status: DqmorStatus, msg: impl Into<String>) -> DqmorStatus {
    set_error(msg);
    status
}

fn from_core(err: Error) -> DqmorStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

/// Runs `body`, turning panics into `Internal` so nothing unwinds into C.
fn guarded(body: impl FnOnce() -> DqmorStatus) -> DqmorStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(DqmorStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

unsafe fn slice_in<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], DqmorStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(DqmorStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_out<'a, T>(
    ptr: *mut T,
    len: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [T], DqmorStatus> {
    if len < needed {
        return Err(fail(
            DqmorStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} required"),
        ));
    }
    if ptr.is_null() {
        return Err(fail(DqmorStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

unsafe fn model_ref<'a>(model: *const DqmorModel) -> Result<&'a DqmorModel, DqmorStatus> {
    model
        .as_ref()
        .ok_or_else(|| fail(DqmorStatus::NullPointer, "model handle is null"))
}

macro_rules! out_ptr {
    ($p:expr, $what:expr) => {
        match $p.as_mut() {
            Some(r) => r,
            None => return fail(DqmorStatus::NullPointer, concat!($what, " is null")),
        }
    };
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dqmor_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or null if the last
/// call succeeded. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn dqmor_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(c) => c.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Loads a checkpoint file. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqmor_model_load(
    path: *const c_char,
    out: *mut *mut DqmorModel,
) -> DqmorStatus {
    guarded(|| {
        let out = out_ptr!(out, "out");
        *out = std::ptr::null_mut();
        if path.is_null() {
            return fail(DqmorStatus::NullPointer, "path is null");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(DqmorStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        match load_checkpoint(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(DqmorModel { inner }));
                DqmorStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`dqmor_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dqmor_model_free(model: *mut DqmorModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Raw feature dimension the model expects.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqmor_model_input_dim(
    model: *const DqmorModel,
    out: *mut usize,
) -> DqmorStatus {
    guarded(|| {
        let m = try_status!(model_ref(model));
        *out_ptr!(out, "out") = m.inner.encoder.input_dim();
        DqmorStatus::Ok
    })
}

/// Number of grades N; posterior buffers need this many slots.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqmor_model_num_grades(
    model: *const DqmorModel,
    out: *mut usize,
) -> DqmorStatus {
    guarded(|| {
        let m = try_status!(model_ref(model));
        *out_ptr!(out, "out") = m.inner.model.num_grades();
        DqmorStatus::Ok
    })
}

/// Estimator family of the handle.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqmor_model_kind(
    model: *const DqmorModel,
    out: *mut DqmorModelKind,
) -> DqmorStatus {
    guarded(|| {
        let m = try_status!(model_ref(model));
        *out_ptr!(out, "out") = match m.inner.model.kind() {
            ModelKind::Qmr => DqmorModelKind::Qmr,
            ModelKind::Dmkdc => DqmorModelKind::Dmkdc,
        };
        DqmorStatus::Ok
    })
}

/// Encodes one patch and writes its grade posterior into `probs`.
///
/// `degenerate` (optional) is set when the measurement collapsed and the
/// uniform distribution was returned.
///
/// # Safety
/// `features` must hold `num_features` values, `probs` must hold
/// `probs_len` slots, `degenerate` may be null.
#[no_mangle]
pub unsafe extern "C" fn dqmor_predict_patch(
    model: *const DqmorModel,
    features: *const f64,
    num_features: usize,
    probs: *mut f64,
    probs_len: usize,
    degenerate: *mut bool,
) -> DqmorStatus {
    guarded(|| {
        let m = try_status!(model_ref(model));
        let x = try_status!(slice_in(features, num_features, "features"));
        let n = m.inner.model.num_grades();
        let out = try_status!(slice_out(probs, probs_len, n, "probs"));
        let psi = match m.inner.encoder.encode(x) {
            Ok(psi) => psi,
            Err(e) => return from_core(e),
        };
        let meas = match m.inner.model.measure(psi.as_slice()) {
            Ok(meas) => meas,
            Err(e) => return from_core(e),
        };
        out.copy_from_slice(meas.posterior.probs());
        if let Some(flag) = degenerate.as_mut() {
            *flag = meas.degenerate;
        }
        DqmorStatus::Ok
    })
}

fn posteriors_from_rows(rows: &[f64], num_grades: usize) -> Result<Vec<Posterior>, DqmorStatus> {
    rows.chunks_exact(num_grades)
        .map(|row| Posterior::new(row.to_vec()).map_err(from_core))
        .collect()
}

/// Averages `num_patches` row-major posteriors of width `num_grades`.
///
/// # Safety
/// `probs` must hold `num_patches * num_grades` values and `out` at least
/// `num_grades` slots.
#[no_mangle]
pub unsafe extern "C" fn dqmor_probability_vote(
    probs: *const f64,
    num_patches: usize,
    num_grades: usize,
    out: *mut f64,
    out_len: usize,
) -> DqmorStatus {
    guarded(|| {
        if num_grades == 0 {
            return fail(DqmorStatus::InvalidArgument, "num_grades must be positive");
        }
        let Some(total) = num_patches.checked_mul(num_grades) else {
            return fail(DqmorStatus::InvalidArgument, "input size overflows");
        };
        let rows = try_status!(slice_in(probs, total, "probs"));
        let dst = try_status!(slice_out(out, out_len, num_grades, "out"));
        let patches = try_status!(posteriors_from_rows(rows, num_grades));
        match probability_vote(&patches) {
            Ok(bag) => {
                dst.copy_from_slice(bag.probs());
                DqmorStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Most frequent grade, ties toward the higher grade.
///
/// # Safety
/// `grades` must hold `num_patches` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqmor_majority_vote(
    grades: *const usize,
    num_patches: usize,
    num_grades: usize,
    out: *mut usize,
) -> DqmorStatus {
    guarded(|| {
        let g = try_status!(slice_in(grades, num_patches, "grades"));
        let out = out_ptr!(out, "out");
        match majority_vote(g, num_grades) {
            Ok(grade) => {
                *out = grade;
                DqmorStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Summary statistics of one posterior. Any output pointer may be null.
///
/// # Safety
/// `probs` must hold `num_grades` values.
#[no_mangle]
pub unsafe extern "C" fn dqmor_posterior_stats(
    probs: *const f64,
    num_grades: usize,
    expected: *mut f64,
    variance: *mut f64,
    argmax: *mut usize,
) -> DqmorStatus {
    guarded(|| {
        if num_grades == 0 {
            return fail(DqmorStatus::InvalidArgument, "num_grades must be positive");
        }
        let p = try_status!(slice_in(probs, num_grades, "probs"));
        let post = match Posterior::new(p.to_vec()) {
            Ok(post) => post,
            Err(e) => return from_core(e),
        };
        if let Some(e) = expected.as_mut() {
            *e = post.expected_grade();
        }
        if let Some(v) = variance.as_mut() {
            *v = post.variance();
        }
        if let Some(a) = argmax.as_mut() {
            *a = post.argmax_grade();
        }
        DqmorStatus::Ok
    })
}
