//! C ABI over `dvs-core`.
//!
//! Every fallible call returns a [`DvsStatus`]; the message of the last
//! failure on the calling thread is available from
//! [`dvs_last_error_message`]. Models are opaque [`DvsEnsemble`] handles
//! released with [`dvs_ensemble_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dvs_core::ensemble::{fuse, threshold_decide, vote_two_of_three, EnsembleModel, FusionRule, ThresholdVector};
use dvs_core::error::{Error, ErrorCategory};
use dvs_core::features::FeatureBlob;
use dvs_core::framing::{FrameShaperConfig, IntensityStream};
use dvs_core::metrics::{precision_f1, ClassShares};
use dvs_core::pipeline::{infer_stream, PipelineConfig};
use dvs_core::tensornet::ClassScores;
use dvs_core::tracker::map_from_outputs;

pub const DVS_NUM_CLASSES: usize = 7;
pub const DVS_MEMBER_COUNT: usize = 3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DvsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    MissingFile = 3,
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DvsFusionRule {
    L2 = 0,
    MaxConfidence = 1,
}

impl From<DvsFusionRule> for FusionRule {
    fn from(r: DvsFusionRule) -> Self {
        match r {
            DvsFusionRule::L2 => FusionRule::L2,
            DvsFusionRule::MaxConfidence => FusionRule::MaxConfidence,
        }
    }
}

/// Loaded ensemble with the pipeline settings used for streams.
pub struct DvsEnsemble {
    model: EnsembleModel,
    pipeline: PipelineConfig,
    framing: FrameShaperConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DvsStatus, msg: impl Into<String>) -> DvsStatus {
    set_error(msg);
    status
}

fn from_core(e: Error) -> DvsStatus {
    let s = match e.category() {
        ErrorCategory::InvalidConfig => DvsStatus::InvalidConfig,
        ErrorCategory::MissingFile => DvsStatus::MissingFile,
        ErrorCategory::Numeric => DvsStatus::Numeric,
    };
    fail(s, e.to_string())
}

fn guard(f: impl FnOnce() -> DvsStatus) -> DvsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DvsStatus::Panic, "internal panic"),
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dvs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads an ensemble directory written by `dvs train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dvs_ensemble_load(path: *const c_char, out: *mut *mut DvsEnsemble) -> DvsStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(DvsStatus::InvalidConfig, "path is not UTF-8");
        };
        match EnsembleModel::load(Path::new(p)) {
            Ok(model) => {
                let h = Box::new(DvsEnsemble {
                    model,
                    pipeline: PipelineConfig::default(),
                    framing: FrameShaperConfig::default(),
                });
                *out = Box::into_raw(h);
                DvsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `handle` must come from [`dvs_ensemble_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dvs_ensemble_free(handle: *mut DvsEnsemble) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Rows and columns of the feature blob the members expect.
///
/// # Safety
/// `handle` must be live; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn dvs_ensemble_input_shape(handle: *const DvsEnsemble, rows: *mut usize, cols: *mut usize) -> DvsStatus {
    guard(|| {
        if handle.is_null() || rows.is_null() || cols.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        let (r, c) = (*handle).model.input_shape();
        *rows = r;
        *cols = c;
        DvsStatus::Ok
    })
}

/// Classifies one raw (unnormalized) row-major feature blob. Writes the
/// fused scores to `fused[7]` and the thresholded decision to `decision`.
///
/// # Safety
/// `blob` must hold `len` doubles, `fused` room for 7, `decision` writable.
#[no_mangle]
pub unsafe extern "C" fn dvs_ensemble_classify(
    handle: *const DvsEnsemble,
    blob: *const f64,
    len: usize,
    rule: DvsFusionRule,
    fused: *mut f64,
    decision: *mut usize,
) -> DvsStatus {
    guard(|| {
        if handle.is_null() || blob.is_null() || fused.is_null() || decision.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        let h = &*handle;
        let (rows, cols) = h.model.input_shape();
        if len != rows * cols {
            return fail(DvsStatus::InvalidConfig, format!("blob needs {} values, got {len}", rows * cols));
        }
        let raw = FeatureBlob {
            rows,
            cols,
            data: slice::from_raw_parts(blob, len).to_vec(),
            frame_index: 0,
            channel_index: 0,
        };
        match h.model.classify_raw(&raw, rule.into()) {
            Ok(o) => {
                ptr::copy_nonoverlapping(o.fused.probs.as_ptr(), fused, DVS_NUM_CLASSES);
                *decision = threshold_decide(&o.fused.probs, &h.model.thresholds[0]);
                DvsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Runs the full stream pipeline on channel-major i16 samples and writes the
/// frame-major decision map (`frames * channels` bytes) into `decisions`.
/// `frames` receives the frame count; with a too-small buffer the call
/// returns `BufferTooSmall` after setting it.
///
/// # Safety
/// `samples` must hold `channels * len` values and `decisions` `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn dvs_ensemble_infer_stream(
    handle: *const DvsEnsemble,
    samples: *const i16,
    channels: usize,
    len: usize,
    decisions: *mut u8,
    capacity: usize,
    frames: *mut usize,
) -> DvsStatus {
    guard(|| {
        if handle.is_null() || samples.is_null() || frames.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        if channels == 0 {
            return fail(DvsStatus::InvalidConfig, "no channels");
        }
        let h = &*handle;
        let n = h.framing.frame_count(len);
        *frames = n;
        if capacity < n * channels || (decisions.is_null() && n * channels > 0) {
            return fail(DvsStatus::BufferTooSmall, format!("decision map needs {} bytes", n * channels));
        }
        let data = slice::from_raw_parts(samples, channels * len);
        let rows: Vec<Vec<f64>> = data.chunks(len).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
        let result = IntensityStream::new(rows)
            .and_then(|s| infer_stream(&h.model, &s, &h.framing, &h.pipeline, FusionRule::L2))
            .and_then(|o| map_from_outputs(&o, &h.model.thresholds[0]));
        match result {
            Ok(map) => {
                ptr::copy_nonoverlapping(map.decisions.as_ptr(), decisions, map.decisions.len());
                DvsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Number of whole frames of `frame_size` samples at overlap factor
/// `overlap` in a stream of `len` samples.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dvs_frame_count(len: usize, frame_size: usize, overlap: usize, out: *mut usize) -> DvsStatus {
    guard(|| {
        if out.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        match FrameShaperConfig::new(frame_size, overlap) {
            Ok(f) => {
                *out = f.frame_count(len);
                DvsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Fuses three member score vectors (`scores[3 * 7]`, member-major) into
/// `out[7]`.
///
/// # Safety
/// `scores` must hold 21 doubles and `out` room for 7.
#[no_mangle]
pub unsafe extern "C" fn dvs_fuse(scores: *const f64, rule: DvsFusionRule, out: *mut f64) -> DvsStatus {
    guard(|| {
        if scores.is_null() || out.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        let s = slice::from_raw_parts(scores, DVS_MEMBER_COUNT * DVS_NUM_CLASSES);
        if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail(DvsStatus::Numeric, "scores must be finite and non-negative");
        }
        let members: [ClassScores; DVS_MEMBER_COUNT] =
            std::array::from_fn(|j| ClassScores::from_probs(s[j * DVS_NUM_CLASSES..(j + 1) * DVS_NUM_CLASSES].to_vec()));
        let f = fuse(&members, rule.into());
        ptr::copy_nonoverlapping(f.probs.as_ptr(), out, DVS_NUM_CLASSES);
        DvsStatus::Ok
    })
}

/// Two-of-three agreement on class decisions; background on disagreement.
#[no_mangle]
pub extern "C" fn dvs_vote(c1: usize, c2: usize, c3: usize) -> usize {
    vote_two_of_three(c1, c2, c3)
}

/// Lowest-index argmax of `probs[7]`, or 0 when below its threshold.
///
/// # Safety
/// `probs` and `thresholds` must hold 7 doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dvs_threshold_decide(probs: *const f64, thresholds: *const f64, out: *mut usize) -> DvsStatus {
    guard(|| {
        if probs.is_null() || thresholds.is_null() || out.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        let p = slice::from_raw_parts(probs, DVS_NUM_CLASSES);
        let mut t: ThresholdVector = [0.0; DVS_NUM_CLASSES];
        t.copy_from_slice(slice::from_raw_parts(thresholds, DVS_NUM_CLASSES));
        if let Err(e) = dvs_core::ensemble::validate_thresholds(&t) {
            return from_core(e);
        }
        *out = threshold_decide(p, &t);
        DvsStatus::Ok
    })
}

/// Precision and F1 (percent) from a row-normalized 7x7 recall matrix in
/// percent, assuming balanced classes. Undefined entries are written as NaN.
///
/// # Safety
/// `row_percent` must hold 49 doubles; `precision` and `f1` room for 7.
#[no_mangle]
pub unsafe extern "C" fn dvs_precision_f1(row_percent: *const f64, precision: *mut f64, f1: *mut f64) -> DvsStatus {
    guard(|| {
        if row_percent.is_null() || precision.is_null() || f1.is_null() {
            return fail(DvsStatus::NullPointer, "null argument");
        }
        let flat = slice::from_raw_parts(row_percent, DVS_NUM_CLASSES * DVS_NUM_CLASSES);
        let r: [[f64; DVS_NUM_CLASSES]; DVS_NUM_CLASSES] =
            std::array::from_fn(|i| std::array::from_fn(|j| flat[i * DVS_NUM_CLASSES + j]));
        match precision_f1(&r, &ClassShares::Balanced) {
            Ok(rep) => {
                for c in 0..DVS_NUM_CLASSES {
                    *precision.add(c) = rep.precision[c].unwrap_or(f64::NAN);
                    *f1.add(c) = rep.f1[c].unwrap_or(f64::NAN);
                }
                DvsStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}
