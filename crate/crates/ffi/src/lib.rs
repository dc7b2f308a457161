//! C ABI over the `chrono-dce` library.
//!
//! Every fallible function returns a [`CdceStatus`]. On failure a message is
//! kept per thread and can be read with [`cdce_last_error`]. Models and
//! sequences are opaque handles released with their `_free` function.
//! Output buffers are caller-owned: functions that fill one take its length
//! and report the length they need through `written`, returning
//! `CDCE_STATUS_BUFFER_TOO_SMALL` when it does not fit.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use chrono_dce::dct::{self, DceConfig};
use chrono_dce::losses;
use chrono_dce::model::RecognizerModel;
use chrono_dce::pipeline::Pipeline;
use chrono_dce::skeleton::{self, SkeletonSequence};
use chrono_dce::tensor::Tensor;
use chrono_dce::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    HashMismatch = 6,
    NonFinite = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A trained recognizer together with the input pipeline it was trained on.
pub struct CdceModel {
    model: RecognizerModel,
    pipeline: Pipeline,
}

/// A skeleton clip (`C×T×N×M` coordinates plus valid length and person count).
pub struct CdceSequence {
    seq: SkeletonSequence,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CdceStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::InvalidShape { .. } | Error::InvalidAxis { .. } | Error::NotScalar(_) => {
            CdceStatus::Shape
        }
        Error::InvalidArgument(_) | Error::Diverged { .. } => CdceStatus::InvalidArgument,
        Error::UnsupportedVersion { .. } | Error::Format { .. } | Error::Json(_) => CdceStatus::Format,
        Error::NonFinite(_) => CdceStatus::NonFinite,
        Error::HashMismatch { .. } => CdceStatus::HashMismatch,
        Error::Io { .. } => CdceStatus::Io,
    }
}

struct Fail(CdceStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CdceStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CdceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdceStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CdceStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn put_scalar(out: *mut f64, v: f64) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = v;
    Ok(())
}

/// Copies `src` into the caller's buffer, always reporting the needed length.
unsafe fn fill(src: &[f64], out: *mut f64, out_len: usize, written: *mut usize) -> Result<(), Fail> {
    if !written.is_null() {
        *written = src.len();
    }
    if out_len < src.len() {
        return Err(Fail(
            CdceStatus::BufferTooSmall,
            format!("output needs {} values, buffer holds {out_len}", src.len()),
        ));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CdceStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cdce_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cdce_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Unnormalized DCT-2 of `x[0..t]` into `out[0..t]`:
/// `d_k = Σ_t x_t cos(π/T (t + ½) k)`.
///
/// # Safety
/// `x` and `out` must point to `t` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cdce_dct2(x: *const f64, t: usize, out: *mut f64) -> CdceStatus {
    guard(|| {
        let d = dct::dct2(slice(x, t, "x")?)?;
        fill(&d, out, t, ptr::null_mut())
    })
}

/// Inverse of [`cdce_dct2`].
///
/// # Safety
/// `d` and `out` must point to `t` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cdce_idct2(d: *const f64, t: usize, out: *mut f64) -> CdceStatus {
    guard(|| {
        let x = dct::idct2(slice(d, t, "d")?)?;
        fill(&x, out, t, ptr::null_mut())
    })
}

/// Chronological loss of `v[0..n]`: sum of `max(0, v_t - v_{t+1})`.
///
/// # Safety
/// `v` must point to `n` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn cdce_crl_loss(v: *const f64, n: usize, out: *mut f64) -> CdceStatus {
    guard(|| put_scalar(out, losses::crl_value(slice(v, n, "v")?)?))
}

/// First-minus-last baseline loss of `v[0..n]`.
///
/// # Safety
/// `v` must point to `n` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn cdce_naive_chron_loss(v: *const f64, n: usize, out: *mut f64) -> CdceStatus {
    guard(|| put_scalar(out, losses::naive_chron_value(slice(v, n, "v")?)?))
}

/// Builds a sequence from row-major `C×T×N×M` coordinates.
///
/// # Safety
/// `coords` must point to `c*t*n*m` doubles; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cdce_sequence_new(
    coords: *const f64,
    c: usize,
    t: usize,
    n: usize,
    m: usize,
    valid_len: usize,
    persons: usize,
    out: *mut *mut CdceSequence,
) -> CdceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = c
            .checked_mul(t)
            .and_then(|v| v.checked_mul(n))
            .and_then(|v| v.checked_mul(m))
            .ok_or_else(|| Fail(CdceStatus::Shape, "coordinate count overflows".into()))?;
        let data = slice(coords, len, "coords")?.to_vec();
        let tensor = Tensor::new(vec![c, t, n, m], data)?;
        let seq = SkeletonSequence::new(tensor, 0, valid_len, persons)?;
        *out = Box::into_raw(Box::new(CdceSequence { seq }));
        Ok(())
    })
}

/// Reads a sequence file written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cdce_sequence_load(path: *const c_char, out: *mut *mut CdceSequence) -> CdceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let seq = skeleton::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CdceSequence { seq }));
        Ok(())
    })
}

/// Number of frames in the sequence, 0 for a null handle.
///
/// # Safety
/// `seq` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdce_sequence_frames(seq: *const CdceSequence) -> usize {
    seq.as_ref().map_or(0, |s| s.seq.frames())
}

/// # Safety
/// `seq` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdce_sequence_free(seq: *mut CdceSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Cosine encoding of the sequence coordinates with `k` basis sequences,
/// written row-major as `((k + include_original)·C)×T×N×M`.
///
/// # Safety
/// `seq` must be a live handle, `out` must hold `out_len` doubles and
/// `written` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cdce_dce_encode(
    seq: *const CdceSequence,
    k: usize,
    include_original: bool,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> CdceStatus {
    guard(|| {
        let s = seq.as_ref().ok_or_else(|| null("seq"))?;
        let enc = dct::dce_encode(&s.seq, &DceConfig { k, include_original })?;
        fill(enc.data(), out, out_len, written)
    })
}

/// Loads a checkpoint manifest (the `.json` next to its `.bin` payload).
/// The checkpoint must record the input pipeline it was trained with.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cdce_model_load(path: *const c_char, out: *mut *mut CdceModel) -> CdceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let (model, pipeline) = RecognizerModel::load_with_pipeline(&path)?;
        let pipeline = pipeline.ok_or_else(|| {
            Fail(
                CdceStatus::Format,
                format!("{} records no input pipeline", path.display()),
            )
        })?;
        *out = Box::into_raw(Box::new(CdceModel { model, pipeline }));
        Ok(())
    })
}

/// Number of output classes, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdce_model_num_classes(model: *const CdceModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().num_classes)
}

/// Runs the checkpoint's pipeline and the recognizer on a raw sequence and
/// writes the class logits.
///
/// # Safety
/// Handles must be live, `logits` must hold `len` doubles and `written`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cdce_model_logits(
    model: *const CdceModel,
    seq: *const CdceSequence,
    logits: *mut f64,
    len: usize,
    written: *mut usize,
) -> CdceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let s = seq.as_ref().ok_or_else(|| null("seq"))?;
        let x = m.pipeline.prepare(&s.seq, m.model.graph(), None)?;
        let out = m.model.logits(&x)?;
        fill(&out, logits, len, written)
    })
}

/// Per-frame chronological scores of the sequence (one per output frame).
///
/// # Safety
/// Handles must be live, `scores` must hold `len` doubles and `written`
/// must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn cdce_model_chron_scores(
    model: *const CdceModel,
    seq: *const CdceSequence,
    scores: *mut f64,
    len: usize,
    written: *mut usize,
) -> CdceStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let s = seq.as_ref().ok_or_else(|| null("seq"))?;
        let x = m.pipeline.prepare(&s.seq, m.model.graph(), None)?;
        let (emb, _) = m.model.forward(&x)?;
        let out = m.model.chron_head(&emb)?;
        fill(&out, scores, len, written)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdce_model_free(model: *mut CdceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
