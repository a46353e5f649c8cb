//! C interface.
//!
//! Every function returns a [`DislabStatus`]. On failure a message is
//! available from [`dislab_last_error`] until the next call on the same
//! thread. Objects are opaque handles released with their `_free` function;
//! strings returned through out-parameters are released with
//! [`dislab_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dislab::data::{generate_synthetic, load_dataset, save_dataset, Dataset, GenConfig, Split};
use dislab::losses;
use dislab::metrics::js_divergence_dense;
use dislab::model::{Checkpoint, Model};
use dislab::train::{evaluate, train_new, ExperimentConfig};
use dislab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DislabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    NonFinite = 6,
    Usage = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DislabSplit {
    Train = 0,
    Test = 1,
}

impl From<DislabSplit> for Split {
    fn from(s: DislabSplit) -> Self {
        match s {
            DislabSplit::Train => Split::Train,
            DislabSplit::Test => Split::Test,
        }
    }
}

/// Opaque dataset handle.
pub struct DislabDataset(Dataset);

/// Opaque model handle.
pub struct DislabModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DislabStatus {
    match e {
        Error::Config(_) => DislabStatus::Config,
        Error::Data(_) | Error::Json(_) => DislabStatus::Data,
        Error::Usage(_) => DislabStatus::Usage,
        Error::NonFinite(_) => DislabStatus::NonFinite,
        Error::Io { .. } => DislabStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> DislabStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DislabStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DislabStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            DislabStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DislabStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message describing the last failure on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dislab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dislab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dislab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates the synthetic benchmark. `config_toml` holds generator keys
/// (see the README) and may be NULL for defaults.
///
/// # Safety
/// `config_toml` is NULL or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_dataset_generate(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut DislabDataset,
) -> DislabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = match opt_str_arg(config_toml, "config_toml")? {
            Some(text) => GenConfig::from_toml(text)?,
            None => GenConfig::default(),
        };
        let ds = generate_synthetic(&config, seed)?;
        *out = Box::into_raw(Box::new(DislabDataset(ds)));
        Ok(())
    })
}

/// Loads a dataset file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_dataset_load(path: *const c_char, out: *mut *mut DislabDataset) -> DislabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = Box::into_raw(Box::new(DislabDataset(load_dataset(&path)?)));
        Ok(())
    })
}

/// Writes a dataset file.
///
/// # Safety
/// `dataset` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dislab_dataset_save(dataset: *const DislabDataset, path: *const c_char) -> DislabStatus {
    guard(|| {
        let ds = ref_arg(dataset, "dataset")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_dataset(&ds.0, &path)?;
        Ok(())
    })
}

/// Number of instances in a split.
///
/// # Safety
/// `dataset` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_dataset_len(
    dataset: *const DislabDataset,
    split: DislabSplit,
    out: *mut usize,
) -> DislabStatus {
    guard(|| {
        let ds = ref_arg(dataset, "dataset")?;
        *out_arg(out, "out")? = ds.0.split(split.into()).len();
        Ok(())
    })
}

/// Answer vocabulary size and image feature width.
///
/// # Safety
/// `dataset` is a live handle; both outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_dataset_shape(
    dataset: *const DislabDataset,
    num_answers: *mut usize,
    feature_dim: *mut usize,
) -> DislabStatus {
    guard(|| {
        let ds = ref_arg(dataset, "dataset")?;
        *out_arg(num_answers, "num_answers")? = ds.0.num_answers();
        *out_arg(feature_dim, "feature_dim")? = ds.0.feature_dim;
        Ok(())
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `dataset` comes from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dislab_dataset_free(dataset: *mut DislabDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains a new model on `dataset`. `config_toml` is an experiment file whose
/// `[model]` and `[train]` tables are used (its `[data]` table is ignored);
/// NULL selects the defaults. The run record is returned as JSON through
/// `record_json` when that pointer is not NULL.
///
/// # Safety
/// `dataset` is a live handle; `config_toml` is NULL or NUL-terminated;
/// `out` is writable; `record_json` is NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_train(
    dataset: *const DislabDataset,
    config_toml: *const c_char,
    out: *mut *mut DislabModel,
    record_json: *mut *mut c_char,
) -> DislabStatus {
    guard(|| {
        let ds = ref_arg(dataset, "dataset")?;
        let out = out_arg(out, "out")?;
        let exp = match opt_str_arg(config_toml, "config_toml")? {
            Some(text) => ExperimentConfig::parse(text)?,
            None => ExperimentConfig::default(),
        };
        let (model, outcome) = train_new(&ds.0, &exp.model, &exp.train)?;
        if let Some(rec) = record_json.as_mut() {
            *rec = into_c_string(serde_json::to_string(&outcome.record).map_err(Error::from)?);
        }
        *out = Box::into_raw(Box::new(DislabModel(model)));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_model_load(path: *const c_char, out: *mut *mut DislabModel) -> DislabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let model = Model::from_checkpoint(Checkpoint::load(&path)?)?;
        *out = Box::into_raw(Box::new(DislabModel(model)));
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` is a live handle; `path` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dislab_model_save(model: *const DislabModel, path: *const c_char) -> DislabStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        m.0.to_checkpoint(serde_json::Value::Null).save(&path)?;
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` comes from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dislab_model_free(model: *mut DislabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Overall accuracy, in percent, of `model` on a split.
///
/// # Safety
/// Handles are live; `accuracy` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_evaluate(
    model: *const DislabModel,
    dataset: *const DislabDataset,
    split: DislabSplit,
    accuracy: *mut f64,
) -> DislabStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let ds = ref_arg(dataset, "dataset")?;
        let out = out_arg(accuracy, "accuracy")?;
        *out = evaluate(&m.0, &ds.0, split.into(), false)?.summary.overall;
        Ok(())
    })
}

/// Answer probabilities for one image-question pair, written to `probs`
/// (`num_answers` values, which must equal the model's answer count).
///
/// # Safety
/// Arrays hold at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn dislab_predict(
    model: *const DislabModel,
    features: *const f64,
    num_features: usize,
    tokens: *const usize,
    num_tokens: usize,
    probs: *mut f64,
    num_answers: usize,
) -> DislabStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let shape = m.0.shape();
        if num_features != shape.feature_dim {
            return Err(Failure::Arg(format!(
                "expected {} features, got {num_features}",
                shape.feature_dim
            )));
        }
        if num_answers != shape.num_answers {
            return Err(Failure::Arg(format!(
                "expected room for {} answers, got {num_answers}",
                shape.num_answers
            )));
        }
        if num_tokens == 0 {
            return Err(Failure::Arg("empty question".into()));
        }
        if let Some(t) = slice_arg(tokens, num_tokens, "tokens")?.iter().find(|&&t| t >= shape.vocab_size) {
            return Err(Failure::Arg(format!("token id {t} outside vocabulary of {}", shape.vocab_size)));
        }
        if probs.is_null() {
            return Err(Failure::Null("probs"));
        }
        let p = m.0.predict(
            slice_arg(features, num_features, "features")?,
            slice_arg(tokens, num_tokens, "tokens")?,
        )?;
        std::slice::from_raw_parts_mut(probs, num_answers).copy_from_slice(&p);
        Ok(())
    })
}

/// Binary cross-entropy of `rows × cols` probabilities against targets,
/// summed over columns and averaged over rows.
///
/// # Safety
/// Both arrays hold `rows * cols` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_vqa_loss(
    probs: *const f64,
    targets: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> DislabStatus {
    guard(|| {
        let n = rows.checked_mul(cols).ok_or_else(|| Failure::Arg("rows * cols overflows".into()))?;
        if n == 0 {
            return Err(Failure::Arg("empty batch".into()));
        }
        let p = slice_arg(probs, n, "probs")?;
        let a = slice_arg(targets, n, "targets")?;
        let pr: Vec<&[f64]> = p.chunks(cols).collect();
        let ar: Vec<&[f64]> = a.chunks(cols).collect();
        *out_arg(out, "out")? = losses::vqa_loss(&pr, &ar)?;
        Ok(())
    })
}

unsafe fn pair<'a>(
    p_i: *const f64,
    p_j: *const f64,
    len: usize,
    idx: &[usize],
) -> Result<(&'a [f64], &'a [f64]), Failure> {
    if let Some(&k) = idx.iter().find(|&&k| k >= len) {
        return Err(Failure::Arg(format!("answer index {k} outside vectors of length {len}")));
    }
    Ok((slice_arg(p_i, len, "p_i")?, slice_arg(p_j, len, "p_j")?))
}

/// `-log σ(p_i[m] - p_j[m])`.
///
/// # Safety
/// Both arrays hold `len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_dis_loss_simplified(
    p_i: *const f64,
    p_j: *const f64,
    len: usize,
    m: usize,
    out: *mut f64,
) -> DislabStatus {
    guard(|| {
        let (a, b) = pair(p_i, p_j, len, &[m])?;
        *out_arg(out, "out")? = losses::dis_loss_simplified(a, b, m)?;
        Ok(())
    })
}

/// `-p_j[m] · log σ(p_i[m] - p_j[m])`.
///
/// # Safety
/// Both arrays hold `len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_dis_loss_modulated(
    p_i: *const f64,
    p_j: *const f64,
    len: usize,
    m: usize,
    out: *mut f64,
) -> DislabStatus {
    guard(|| {
        let (a, b) = pair(p_i, p_j, len, &[m])?;
        *out_arg(out, "out")? = losses::dis_loss_modulated(a, b, m)?;
        Ok(())
    })
}

/// `-[log σ(p_i[m] - p_j[m]) + log σ(p_j[n] - p_i[n])]`.
///
/// # Safety
/// Both arrays hold `len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_dis_loss_symmetric(
    p_i: *const f64,
    p_j: *const f64,
    len: usize,
    m: usize,
    n: usize,
    out: *mut f64,
) -> DislabStatus {
    guard(|| {
        let (a, b) = pair(p_i, p_j, len, &[m, n])?;
        *out_arg(out, "out")? = losses::dis_loss_symmetric(a, b, m, Some(n))?;
        Ok(())
    })
}

/// Jensen-Shannon divergence in bits between two distributions of length `len`.
///
/// # Safety
/// Both arrays hold `len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dislab_js_divergence(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> DislabStatus {
    guard(|| {
        let a = slice_arg(p, len, "p")?;
        let b = slice_arg(q, len, "q")?;
        if a.iter().chain(b).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Failure::Arg("distributions must be finite and non-negative".into()));
        }
        *out_arg(out, "out")? = js_divergence_dense(a, b);
        Ok(())
    })
}
