//! C ABI over the dyreg core. Objects cross the boundary as opaque
//! pointers with explicit free functions; every fallible call returns a
//! status code and leaves a message for [`dyreg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dyreg_core::cli::model_from_checkpoint;
use dyreg_core::config::RunConfig;
use dyreg_core::model::Model;
use dyreg_core::syncshapes::{generate_sample, VideoSample};
use dyreg_core::trainkit::{evaluate, save_checkpoint, Checkpoint, ScheduleState};
use dyreg_core::Error;

/// Call outcome. Anything nonzero leaves a message in the thread-local
/// error slot.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DyregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    IoError = 4,
    BadFormat = 5,
    Internal = 6,
}

/// Aggregate evaluation scores.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DyregMetrics {
    pub accuracy: f64,
    pub dist_p: f64,
    pub dist_r: f64,
    pub dist_h: f64,
}

/// Opaque experiment configuration.
pub struct DyregConfig {
    inner: RunConfig,
}

/// Opaque model with its configuration.
pub struct DyregModel {
    model: Model<f32>,
    config: RunConfig,
}

/// Opaque generated video sample.
pub struct DyregSample {
    inner: VideoSample,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> DyregStatus {
    match err {
        Error::InvalidConfig(_) => DyregStatus::InvalidConfig,
        Error::InvalidArgument(_) => DyregStatus::InvalidArgument,
        Error::Io(_) => DyregStatus::IoError,
        Error::Format(_) | Error::Json(_) => DyregStatus::BadFormat,
        Error::NanAbort(_) => DyregStatus::Internal,
    }
}

fn fail(err: &Error) -> DyregStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Runs a closure, converting panics into `DyregInternal`.
fn guarded(f: impl FnOnce() -> DyregStatus) -> DyregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in dyreg".to_string());
            set_error(&msg);
            DyregStatus::Internal
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `cap`). Returns the full message length in bytes, 0 when no error is
/// recorded.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be NULL with
/// `cap == 0` to query the length alone.
#[no_mangle]
pub unsafe extern "C" fn dyreg_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn dyreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a full experiment config from JSON. On success the caller owns
/// the handle and must release it with [`dyreg_config_free`].
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string; `out` must be a valid
/// pointer to pointer.
#[no_mangle]
pub unsafe extern "C" fn dyreg_config_from_json(
    json: *const c_char,
    out: *mut *mut DyregConfig,
) -> DyregStatus {
    guarded(|| {
        let (Some(json), false) = (cstr_arg(json), out.is_null()) else {
            set_error("null or non-UTF-8 argument");
            return DyregStatus::NullPointer;
        };
        match RunConfig::from_json(json) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(DyregConfig { inner }));
                DyregStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer to pointer.
#[no_mangle]
pub unsafe extern "C" fn dyreg_config_default(out: *mut *mut DyregConfig) -> DyregStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return DyregStatus::NullPointer;
        }
        *out = Box::into_raw(Box::new(DyregConfig { inner: RunConfig::default() }));
        DyregStatus::Ok
    })
}

/// # Safety
/// `cfg` must come from a dyreg constructor and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dyreg_config_free(cfg: *mut DyregConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of classification labels the config's dataset produces.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn dyreg_config_num_classes(cfg: *const DyregConfig) -> u32 {
    if cfg.is_null() {
        return 0;
    }
    (*cfg).inner.dataset.num_labels() as u32
}

/// Builds a model with deterministic initialization.
///
/// # Safety
/// `cfg` must be a live config handle; `out` a valid pointer to pointer.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_new(
    cfg: *const DyregConfig,
    seed: u64,
    out: *mut *mut DyregModel,
) -> DyregStatus {
    guarded(|| {
        if cfg.is_null() || out.is_null() {
            set_error("null argument");
            return DyregStatus::NullPointer;
        }
        let config = (*cfg).inner.clone();
        match Model::<f32>::build(config.model.clone(), config.dataset.clone(), seed) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(DyregModel { model, config }));
                DyregStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Loads a model from a DYRG checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` a valid pointer to pointer.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_load(
    path: *const c_char,
    out: *mut *mut DyregModel,
) -> DyregStatus {
    guarded(|| {
        let (Some(path), false) = (cstr_arg(path), out.is_null()) else {
            set_error("null or non-UTF-8 argument");
            return DyregStatus::NullPointer;
        };
        match model_from_checkpoint(Path::new(path)) {
            Ok((model, config)) => {
                *out = Box::into_raw(Box::new(DyregModel { model, config }));
                DyregStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes the model as a DYRG checkpoint (fresh training state).
///
/// # Safety
/// `model` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_save(
    model: *const DyregModel,
    path: *const c_char,
) -> DyregStatus {
    guarded(|| {
        let (false, Some(path)) = (model.is_null(), cstr_arg(path)) else {
            set_error("null or non-UTF-8 argument");
            return DyregStatus::NullPointer;
        };
        let m = &*model;
        let ckpt = Checkpoint {
            config_json: m.config.to_json_pretty(),
            params: m.model.params.clone(),
            momentum: Default::default(),
            samples_seen: 0,
            schedule: ScheduleState { best: None, since_improve: 0, drops: 0 },
        };
        match save_checkpoint(Path::new(path), &ckpt) {
            Ok(()) => DyregStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `model` must come from a dyreg constructor and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_free(model: *mut DyregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total scalar parameter count.
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_param_count(model: *const DyregModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).model.count_parameters() as u64
}

/// Generates the sample identified by `seed` under the config's dataset.
///
/// # Safety
/// `cfg` must be live; `out` a valid pointer to pointer.
#[no_mangle]
pub unsafe extern "C" fn dyreg_sample_new(
    cfg: *const DyregConfig,
    seed: u64,
    out: *mut *mut DyregSample,
) -> DyregStatus {
    guarded(|| {
        if cfg.is_null() || out.is_null() {
            set_error("null argument");
            return DyregStatus::NullPointer;
        }
        let sample = generate_sample(&(*cfg).inner.dataset, seed);
        *out = Box::into_raw(Box::new(DyregSample { inner: sample }));
        DyregStatus::Ok
    })
}

/// # Safety
/// `sample` must come from [`dyreg_sample_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dyreg_sample_free(sample: *mut DyregSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// # Safety
/// `sample` must be a live sample handle.
#[no_mangle]
pub unsafe extern "C" fn dyreg_sample_label(sample: *const DyregSample) -> u32 {
    if sample.is_null() {
        return u32::MAX;
    }
    (*sample).inner.label as u32
}

/// Frame count, height and width of a sample.
///
/// # Safety
/// All pointers must be valid; `sample` live.
#[no_mangle]
pub unsafe extern "C" fn dyreg_sample_dims(
    sample: *const DyregSample,
    frames: *mut u32,
    height: *mut u32,
    width: *mut u32,
) -> DyregStatus {
    if sample.is_null() || frames.is_null() || height.is_null() || width.is_null() {
        set_error("null argument");
        return DyregStatus::NullPointer;
    }
    let s = &(*sample).inner;
    *frames = s.num_frames as u32;
    *height = s.frame_size as u32;
    *width = s.frame_size as u32;
    DyregStatus::Ok
}

/// Borrows the sample's pixel buffer: `frames * height * width` floats in
/// `[0, 1]`, valid until the sample is freed.
///
/// # Safety
/// All pointers must be valid; `sample` live.
#[no_mangle]
pub unsafe extern "C" fn dyreg_sample_frames(
    sample: *const DyregSample,
    data: *mut *const f32,
    len: *mut usize,
) -> DyregStatus {
    if sample.is_null() || data.is_null() || len.is_null() {
        set_error("null argument");
        return DyregStatus::NullPointer;
    }
    let s = &(*sample).inner;
    *data = s.frames.as_ptr();
    *len = s.frames.len();
    DyregStatus::Ok
}

/// Runs the model on one sample and writes class logits into `logits`.
/// `cap` must be at least the class count.
///
/// # Safety
/// Handles must be live; `logits` must point to `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_predict(
    model: *const DyregModel,
    sample: *const DyregSample,
    logits: *mut f32,
    cap: usize,
) -> DyregStatus {
    guarded(|| {
        if model.is_null() || sample.is_null() || logits.is_null() {
            set_error("null argument");
            return DyregStatus::NullPointer;
        }
        let m = &*model;
        let k = m.model.num_classes;
        if cap < k {
            set_error(&format!("logits buffer holds {cap}, need {k}"));
            return DyregStatus::InvalidArgument;
        }
        let (values, _) = m.model.predict(&(*sample).inner);
        std::ptr::copy_nonoverlapping(values.data().as_ptr(), logits, k);
        DyregStatus::Ok
    })
}

/// Writes the first region trace as `frames * nodes * 4` floats
/// `(cx, cy, w, h)` in normalized coordinates.
///
/// # Safety
/// Handles must be live; `out` must point to `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_trace(
    model: *const DyregModel,
    sample: *const DyregSample,
    out: *mut f32,
    cap: usize,
) -> DyregStatus {
    guarded(|| {
        if model.is_null() || sample.is_null() || out.is_null() {
            set_error("null argument");
            return DyregStatus::NullPointer;
        }
        let m = &*model;
        let s = &(*sample).inner;
        let need = s.num_frames * m.model.cfg.nodes * 4;
        if cap < need {
            set_error(&format!("trace buffer holds {cap}, need {need}"));
            return DyregStatus::InvalidArgument;
        }
        let (_, traces) = m.model.predict(s);
        let mut cursor = out;
        for frame in &traces[0].frames {
            for b in frame {
                for v in [b.cx, b.cy, b.w, b.h] {
                    *cursor = v as f32;
                    cursor = cursor.add(1);
                }
            }
        }
        DyregStatus::Ok
    })
}

/// Evaluates accuracy and region distances on `n_samples` fixed-seed
/// samples.
///
/// # Safety
/// `model` must be live; `out` a valid metrics pointer.
#[no_mangle]
pub unsafe extern "C" fn dyreg_model_evaluate(
    model: *const DyregModel,
    n_samples: u32,
    seed_base: u64,
    out: *mut DyregMetrics,
) -> DyregStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return DyregStatus::NullPointer;
        }
        if n_samples == 0 {
            set_error("n_samples must be positive");
            return DyregStatus::InvalidArgument;
        }
        let m = &*model;
        let eval = evaluate(&m.model, &m.config.dataset, n_samples as usize, seed_base, 1);
        *out = DyregMetrics {
            accuracy: eval.accuracy,
            dist_p: eval.dist.dist_p,
            dist_r: eval.dist.dist_r,
            dist_h: eval.dist.harmonic,
        };
        DyregStatus::Ok
    })
}
