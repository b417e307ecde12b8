//! C ABI over `rule_tpp`.
//!
//! Objects are opaque handles created by `rtpp_*_load`/`rtpp_fit` and released
//! with the matching `*_free`. Every fallible call returns an [`RtppStatus`];
//! on failure `rtpp_last_error` describes the cause for the calling thread.
//! Strings returned through out-parameters are owned by the caller and must be
//! released with `rtpp_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rule_tpp::em::{fit, TrainConfig};
use rule_tpp::event_store::{load_sequences, EventSequence, LoadMode, PredicateCatalog};
use rule_tpp::report::{explain_sequence, ModelReport};
use rule_tpp::rule_logic::RuleSet;
use rule_tpp::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtppStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Io = 4,
    Numerical = 5,
    Data = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// A loaded corpus with its catalog.
pub struct RtppCorpus {
    catalog: PredicateCatalog,
    sequences: Vec<EventSequence>,
}

/// A fitted or loaded model report.
pub struct RtppModel {
    report: ModelReport,
    rules: RuleSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> RtppStatus {
    match err {
        Error::Config { .. } | Error::Catalog(_) | Error::UnknownPredicate(_) | Error::Rule(_) | Error::PredicateIndex(_) => {
            RtppStatus::Config
        }
        Error::Io { .. } => RtppStatus::Io,
        Error::Numerical(_) | Error::Unexplained { .. } | Error::RetryBudget { .. } => RtppStatus::Numerical,
        Error::Parse { .. } | Error::Validation { .. } | Error::CatalogMismatch(_) | Error::Json(_) => RtppStatus::Data,
    }
}

struct Failure(RtppStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> RtppStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RtppStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {message}"));
            RtppStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    // SAFETY: callers pass handles obtained from this library or null.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(RtppStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    // SAFETY: callers pass writable out-parameters or null.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(RtppStatus::NullPointer, format!("{what} is null")))
}

fn path_arg(p: *const c_char, what: &str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure(RtppStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and nul-terminated per the API contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(RtppStatus::InvalidString, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rtpp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rtpp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rtpp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads a JSONL corpus against a catalog file. `strict` rejects unsorted
/// time lists; otherwise they are sorted.
///
/// # Safety
/// Paths must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_corpus_load(
    corpus_path: *const c_char,
    catalog_path: *const c_char,
    strict: bool,
    out: *mut *mut RtppCorpus,
) -> RtppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let corpus = path_arg(corpus_path, "corpus_path")?;
        let catalog = PredicateCatalog::from_file(&path_arg(catalog_path, "catalog_path")?)?;
        let mode = if strict { LoadMode::Strict } else { LoadMode::Lenient };
        let sequences = load_sequences(&corpus, &catalog, mode)?;
        *out = Box::into_raw(Box::new(RtppCorpus { catalog, sequences }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_corpus_len(corpus: *const RtppCorpus, out: *mut usize) -> RtppStatus {
    guard(|| {
        *out_ptr(out, "out")? = non_null(corpus, "corpus")?.sequences.len();
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rtpp_corpus_free(corpus: *mut RtppCorpus) {
    if !corpus.is_null() {
        drop(unsafe { Box::from_raw(corpus) });
    }
}

fn wrap(report: ModelReport) -> FfiResult<*mut RtppModel> {
    let rules = report.rule_set()?;
    Ok(Box::into_raw(Box::new(RtppModel { report, rules })))
}

/// Fits a model. `config_path` may be null for defaults; `seed` overrides the
/// config seed.
///
/// # Safety
/// `corpus` must be a live handle, `config_path` null or nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_fit(
    corpus: *const RtppCorpus,
    config_path: *const c_char,
    seed: u64,
    out: *mut *mut RtppModel,
) -> RtppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let corpus = non_null(corpus, "corpus")?;
        let mut cfg = if config_path.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::from_file(&path_arg(config_path, "config_path")?)?
        };
        cfg.seed = seed;
        cfg.validate(corpus.catalog.body_count())?;
        let initial = cfg
            .initial_rules
            .as_ref()
            .map(|specs| RuleSet::from_specs(specs, &corpus.catalog))
            .transpose()?;
        let result = fit(&corpus.sequences, &cfg, initial)?;
        *out = wrap(ModelReport::new(&corpus.catalog, &cfg, &result, &corpus.sequences)?)?;
        Ok(())
    })
}

/// Loads a model report written by `rtpp_model_save` or the CLI.
///
/// # Safety
/// `path` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_load(path: *const c_char, out: *mut *mut RtppModel) -> RtppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        *out = wrap(ModelReport::load(&path_arg(path, "path")?)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` live; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_save(model: *const RtppModel, path: *const c_char) -> RtppStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let path = path_arg(path, "path")?;
        let text = serde_json::to_string_pretty(&model.report).map_err(Error::from)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_free(model: *mut RtppModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of learned rules `H`.
///
/// # Safety
/// `model` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_rule_count(model: *const RtppModel, out: *mut usize) -> RtppStatus {
    guard(|| {
        *out_ptr(out, "out")? = non_null(model, "model")?.rules.len();
        Ok(())
    })
}

/// Human-readable form of rule `index` (zero-based); free with `rtpp_string_free`.
///
/// # Safety
/// `model` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_rule_text(model: *const RtppModel, index: usize, out: *mut *mut c_char) -> RtppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = non_null(model, "model")?;
        let rule = model
            .rules
            .rules
            .get(index)
            .ok_or_else(|| Failure(RtppStatus::OutOfRange, format!("rule index {index} out of range")))?;
        *out = owned_string(rule.describe(&model.report.catalog));
        Ok(())
    })
}

/// Spontaneous rate `b0`.
///
/// # Safety
/// `model` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_base_rate(model: *const RtppModel, out: *mut f64) -> RtppStatus {
    guard(|| {
        *out_ptr(out, "out")? = non_null(model, "model")?.report.b0;
        Ok(())
    })
}

/// Copies the `H` rule rates into `buf` (capacity `len`).
///
/// # Safety
/// `model` live; `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_rule_rates(model: *const RtppModel, buf: *mut f64, len: usize) -> RtppStatus {
    guard(|| copy_out(&non_null(model, "model")?.report.gamma, buf, len))
}

/// Copies the `H + 1` mixture priors (spontaneous first) into `buf`.
///
/// # Safety
/// `model` live; `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rtpp_model_priors(model: *const RtppModel, buf: *mut f64, len: usize) -> RtppStatus {
    guard(|| copy_out(&non_null(model, "model")?.report.pi, buf, len))
}

fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> FfiResult<()> {
    if buf.is_null() {
        return Err(Failure(RtppStatus::NullPointer, "buf is null".into()));
    }
    if len < values.len() {
        return Err(Failure(
            RtppStatus::OutOfRange,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    // SAFETY: `buf` is writable for `len >= values.len()` doubles.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len()) };
    Ok(())
}

/// Per-event explanation of sequence `index` of `corpus` as JSON; free with
/// `rtpp_string_free`.
///
/// # Safety
/// Handles live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtpp_explain_json(
    model: *const RtppModel,
    corpus: *const RtppCorpus,
    index: usize,
    out: *mut *mut c_char,
) -> RtppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = non_null(model, "model")?;
        let corpus = non_null(corpus, "corpus")?;
        let seq = corpus
            .sequences
            .get(index)
            .ok_or_else(|| Failure(RtppStatus::OutOfRange, format!("sequence {index} out of range")))?;
        let params = model.report.params()?;
        let ex = explain_sequence(index, seq, &params, &model.rules, &model.report.catalog, model.report.config.delta)?;
        *out = owned_string(serde_json::to_string(&ex).map_err(Error::from)?);
        Ok(())
    })
}
