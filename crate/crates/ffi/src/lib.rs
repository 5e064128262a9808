//! C interface to the recognizer.
//!
//! Every fallible function returns `CTCFUSE_OK` (0) or a positive error
//! code; details are available from [`ctcfuse_last_error`] on the calling
//! thread. Matrices are dense, row-major `f64` buffers. No function unwinds
//! across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ctcfuse::ctc::{ctc_loss, LabelSequence};
use ctcfuse::decode::{edit_counts, greedy_decode};
use ctcfuse::features::{FeatureSequence, Modality};
use ctcfuse::model::{forward, load_checkpoint, NetworkParams, Posteriorgram};
use ctcfuse::Error;
use ndarray::Array2;

pub const CTCFUSE_OK: i32 = 0;
/// A required pointer argument was null.
pub const CTCFUSE_ERR_NULL_POINTER: i32 = 100;
/// A string argument was not valid UTF-8.
pub const CTCFUSE_ERR_UTF8: i32 = 101;
/// The output buffer is too small; the required length was written.
pub const CTCFUSE_ERR_BUFFER_TOO_SMALL: i32 = 102;
/// The library panicked; this is a bug.
pub const CTCFUSE_ERR_PANIC: i32 = 103;

/// A trained network loaded from a checkpoint.
pub struct CtcfuseModel {
    params: NetworkParams,
}

/// Levenshtein counts between a reference and a hypothesis.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CtcfuseEditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
    /// `(S + D + I) / N`.
    pub error_rate: f64,
    /// `100 (N - S - D - I) / N`.
    pub accuracy: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.code(), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CTCFUSE_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            CTCFUSE_ERR_PANIC
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CTCFUSE_ERR_NULL_POINTER, format!("{what} is null"))
}

/// # Safety
/// `data` must point to `len` readable values when non-null.
unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// `data` must point to `rows * cols` readable values.
unsafe fn matrix(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>, Failure> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure::from(Error::InvalidInput(format!("{what}: dimensions overflow"))))?;
    let v = slice(data, n, what)?.to_vec();
    Array2::from_shape_vec((rows, cols), v).map_err(|e| Failure::from(Error::InvalidInput(e.to_string())))
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ctcfuse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctcfuse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint into a new model handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_model_load(path: *const c_char, out: *mut *mut CtcfuseModel) -> i32 {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| Failure(CTCFUSE_ERR_UTF8, e.to_string()))?;
        let params = load_checkpoint(Path::new(p))?;
        *out = Box::into_raw(Box::new(CtcfuseModel { params }));
        Ok(())
    })
}

/// Releases a handle from [`ctcfuse_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must come from `ctcfuse_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_model_free(model: *mut CtcfuseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_model_input_dim(model: *const CtcfuseModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.config.input_dim)
}

/// Output classes including the blank; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_model_output_dim(model: *const CtcfuseModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.config.output_dim)
}

/// Runs the network on `num_frames x dim` features and writes the
/// `num_frames x output_dim` posteriorgram to `out_probs`, which must hold
/// `out_capacity` values.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_model_posteriors(
    model: *const CtcfuseModel,
    features: *const f64,
    num_frames: usize,
    dim: usize,
    out_probs: *mut f64,
    out_capacity: usize,
) -> i32 {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = matrix(features, num_frames, dim, "features")?;
        let seq = FeatureSequence::from_frames(x, Modality::Audio)?;
        let (y, _) = forward(&m.params, &seq)?;
        let probs = y.probs();
        if probs.len() > out_capacity {
            return Err(Failure(
                CTCFUSE_ERR_BUFFER_TOO_SMALL,
                format!("need {} values, buffer holds {out_capacity}", probs.len()),
            ));
        }
        if out_probs.is_null() {
            return Err(null("out_probs"));
        }
        for (i, v) in probs.iter().enumerate() {
            *out_probs.add(i) = *v;
        }
        Ok(())
    })
}

/// CTC negative log-likelihood of `labels` (ids in `1..num_classes`) given
/// `num_frames x num_classes` logits; class 0 is the blank.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_ctc_loss(
    logits: *const f64,
    num_frames: usize,
    num_classes: usize,
    labels: *const u32,
    num_labels: usize,
    out_loss: *mut f64,
) -> i32 {
    guard(|| {
        if out_loss.is_null() {
            return Err(null("out_loss"));
        }
        let y = Posteriorgram::from_logits(&matrix(logits, num_frames, num_classes, "logits")?)?;
        let z = LabelSequence::new(slice(labels, num_labels, "labels")?.to_vec(), num_classes.saturating_sub(1) as u32)?;
        *out_loss = ctc_loss(&y, &z)?.0;
        Ok(())
    })
}

/// Best-path decoding of `num_frames x num_classes` posteriors. Writes the
/// collapsed label count to `*out_len`; labels go to `out_labels` when
/// `capacity` suffices, otherwise `CTCFUSE_ERR_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_greedy_decode(
    probs: *const f64,
    num_frames: usize,
    num_classes: usize,
    out_labels: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let y = Posteriorgram::from_probs(matrix(probs, num_frames, num_classes, "probs")?)?;
        let labels = greedy_decode(&y);
        *out_len = labels.len();
        if labels.len() > capacity {
            return Err(Failure(
                CTCFUSE_ERR_BUFFER_TOO_SMALL,
                format!("need {} labels, buffer holds {capacity}", labels.len()),
            ));
        }
        if !labels.is_empty() {
            if out_labels.is_null() {
                return Err(null("out_labels"));
            }
            ptr::copy_nonoverlapping(labels.as_ptr(), out_labels, labels.len());
        }
        Ok(())
    })
}

/// Unit-cost Levenshtein counts and derived rates.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ctcfuse_edit_metrics(
    reference: *const u32,
    reference_len: usize,
    hypothesis: *const u32,
    hypothesis_len: usize,
    out: *mut CtcfuseEditCounts,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = slice(reference, reference_len, "reference")?;
        if r.is_empty() {
            return Err(Error::EmptyReference.into());
        }
        let h = slice(hypothesis, hypothesis_len, "hypothesis")?;
        let c = edit_counts(r, h);
        *out = CtcfuseEditCounts {
            substitutions: c.substitutions,
            deletions: c.deletions,
            insertions: c.insertions,
            reference_len: c.reference_len,
            error_rate: c.error_rate(),
            accuracy: c.accuracy(),
        };
        Ok(())
    })
}
