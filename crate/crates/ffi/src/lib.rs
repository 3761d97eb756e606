//! C ABI over `amlstm`.
//!
//! Datasets and models cross the boundary as opaque handles owned by the
//! caller and released with the matching `*_free`. Every entry point returns
//! an [`AmStatus`]; on failure the message is available from
//! [`am_last_error_message`] on the same thread. Configuration is passed as
//! `key=value` text in the same format the command-line tool reads, and NULL
//! means "all defaults".

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use amlstm::config::RunConfig;
use amlstm::data::{self, Dataset};
use amlstm::gradcheck::run_suite;
use amlstm::model::FusionModel;
use amlstm::signal::preprocess;
use amlstm::train::{evaluate, score_dataset, train, EvalMode};
use amlstm::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Config = 4,
    NonFinite = 5,
    Format = 6,
    Io = 7,
    Diverged = 8,
    GradCheck = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for AmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => AmStatus::Dimension,
            Error::Config(_) => AmStatus::Config,
            Error::NonFinite(_) => AmStatus::NonFinite,
            Error::Format(_) => AmStatus::Format,
            Error::Io { .. } => AmStatus::Io,
            Error::Diverged { .. } => AmStatus::Diverged,
            Error::GradCheck(_) => AmStatus::GradCheck,
        }
    }
}

/// Opaque dataset handle.
pub struct AmDataset(Dataset);

/// Opaque trained-model handle.
pub struct AmModel(FusionModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(AmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(AmStatus::from(&e), e.to_string())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> AmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            AmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AmStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AmStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn run_config(text: *const c_char) -> Outcome<RunConfig> {
    let mut cfg = RunConfig::default();
    if !text.is_null() {
        cfg.apply_text(str_arg(text, "config")?)?;
    }
    Ok(cfg)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Outcome<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Outcome<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn am_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failed call on this thread; empty after a
/// successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn am_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates the synthetic dataset described by `config` (`classes`,
/// `samples_per_class`, `noise_sigma`, `seed` and the other generator keys).
///
/// # Safety
/// `config` is NULL or a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_generate(config: *const c_char, out: *mut *mut AmDataset) -> AmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let cfg = run_config(config)?;
        let ds = data::generate(&cfg.synth)?;
        *slot = Box::into_raw(Box::new(AmDataset(ds)));
        Ok(())
    })
}

/// Loads `<base>.manifest` and `<base>.bin`.
///
/// # Safety
/// `base` is a NUL-terminated path; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_load(base: *const c_char, out: *mut *mut AmDataset) -> AmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let ds = data::load(&PathBuf::from(str_arg(base, "base")?))?;
        *slot = Box::into_raw(Box::new(AmDataset(ds)));
        Ok(())
    })
}

/// Writes `<base>.manifest` and `<base>.bin`.
///
/// # Safety
/// `ds` is a live handle; `base` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_save(ds: *const AmDataset, base: *const c_char) -> AmStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        data::save(&ds.0, &PathBuf::from(str_arg(base, "base")?))?;
        Ok(())
    })
}

/// Record count and class count.
///
/// # Safety
/// `ds` is a live handle; the out pointers are valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_info(ds: *const AmDataset, records: *mut usize, classes: *mut usize) -> AmStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if let Some(r) = records.as_mut() {
            *r = ds.0.len();
        }
        if let Some(c) = classes.as_mut() {
            *c = ds.0.classes;
        }
        Ok(())
    })
}

/// Runs the preprocessing pipeline on raw data (`train_fraction`,
/// `video_components`, `augment` and the other preprocessing keys), producing
/// train and test handles.
///
/// # Safety
/// `raw` is a live handle; `config` is NULL or a NUL-terminated string;
/// `train_out` and `test_out` are valid pointers.
#[no_mangle]
pub unsafe extern "C" fn am_preprocess(
    raw: *const AmDataset,
    config: *const c_char,
    train_out: *mut *mut AmDataset,
    test_out: *mut *mut AmDataset,
) -> AmStatus {
    guard(|| {
        let raw = handle(raw, "dataset")?;
        let train_slot = out_ptr(train_out, "train_out")?;
        let test_slot = out_ptr(test_out, "test_out")?;
        let cfg = run_config(config)?;
        let (tr, te) = preprocess(&raw.0, &cfg.prep)?;
        *train_slot = Box::into_raw(Box::new(AmDataset(tr)));
        *test_slot = Box::into_raw(Box::new(AmDataset(te)));
        Ok(())
    })
}

/// # Safety
/// `ds` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_dataset_free(ds: *mut AmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Builds a model shaped by `config` and trains it on `train_set`
/// (`hidden`, `epochs_max`, `learning_rate`, `seed` and the other model and
/// training keys). Returns the best model seen.
///
/// # Safety
/// `train_set` is a live handle; `config` is NULL or a NUL-terminated string;
/// `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn am_model_train(train_set: *const AmDataset, config: *const c_char, out: *mut *mut AmModel) -> AmStatus {
    guard(|| {
        let ds = handle(train_set, "dataset")?;
        let slot = out_ptr(out, "out")?;
        let cfg = run_config(config)?;
        cfg.train.validate()?;
        cfg.validate_shape()?;
        let (dv, da) = ds.0.dims();
        let mcfg = cfg.model_config(dv, da, ds.0.classes);
        mcfg.validate()?;
        let outcome = train(FusionModel::new(mcfg, cfg.seed)?, &ds.0, None, &cfg.train)?;
        *slot = Box::into_raw(Box::new(AmModel(outcome.model)));
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated path; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn am_model_load(path: *const c_char, out: *mut *mut AmModel) -> AmStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let m = FusionModel::load(&PathBuf::from(str_arg(path, "path")?))?;
        *slot = Box::into_raw(Box::new(AmModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` is a live handle; `path` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn am_model_save(model: *const AmModel, path: *const c_char) -> AmStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.0.save(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn am_model_free(model: *mut AmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classification accuracy of the main head. With `video_only` set, the
/// audio stream is replaced by all-zero frames.
///
/// # Safety
/// `model` and `ds` are live handles; `accuracy` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn am_model_evaluate(model: *const AmModel, ds: *const AmDataset, video_only: bool, accuracy: *mut f64) -> AmStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(ds, "dataset")?;
        let slot = out_ptr(accuracy, "accuracy")?;
        *slot = evaluate(&m.0, &ds.0, mode(video_only))?.accuracy;
        Ok(())
    })
}

/// Writes the predicted class of every record into `classes_out`, which must
/// hold at least as many entries as the dataset has records.
///
/// # Safety
/// `model` and `ds` are live handles; `classes_out` points to `capacity` writable entries.
#[no_mangle]
pub unsafe extern "C" fn am_model_predict(
    model: *const AmModel,
    ds: *const AmDataset,
    video_only: bool,
    classes_out: *mut usize,
    capacity: usize,
) -> AmStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(ds, "dataset")?;
        if classes_out.is_null() {
            return Err(null("classes_out"));
        }
        let n = ds.0.len();
        if capacity < n {
            return Err(Failure(AmStatus::BufferTooSmall, format!("need {n} entries, got {capacity}")));
        }
        let scores = score_dataset(&m.0, &ds.0, mode(video_only))?.main_scores;
        let out = std::slice::from_raw_parts_mut(classes_out, n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = amlstm::Tensor::argmax(scores.row(i));
        }
        Ok(())
    })
}

fn mode(video_only: bool) -> EvalMode {
    if video_only {
        EvalMode::VideoOnly
    } else {
        EvalMode::AudioVisual
    }
}

/// Runs the gradient-check suite (`seed`, `gradcheck_seeds`, `corrupt` keys).
/// `max_rel_error` receives the worst relative error even when the check
/// fails, in which case the status is `AM_STATUS_GRAD_CHECK`.
///
/// # Safety
/// `config` is NULL or a NUL-terminated string; `max_rel_error` is a valid pointer or NULL.
#[no_mangle]
pub unsafe extern "C" fn am_gradcheck(config: *const c_char, max_rel_error: *mut f64) -> AmStatus {
    guard(|| {
        let cfg = run_config(config)?;
        let report = run_suite(&cfg.suite_config())?;
        if let Some(slot) = max_rel_error.as_mut() {
            *slot = report.max_rel_error();
        }
        if !report.passed() {
            let names: Vec<&str> = report.failures().map(|b| b.name.as_str()).collect();
            return Err(Error::GradCheck(names.join(", ")).into());
        }
        Ok(())
    })
}
