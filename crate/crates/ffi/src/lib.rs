//! C interface to `incrlearn`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an [`IclStatus`];
//! on failure a message is available from [`icl_last_error`] on the same
//! thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use incrlearn::classifier;
use incrlearn::data::{self, Dataset, DelimitedSchema, SyntheticSpec};
use incrlearn::strategy::{strategy_for, ClassifierKind, StrategySpec};
use incrlearn::trainer::{advance, BatchClass, ClassBatch, LearnerState};
use incrlearn::{checkpoint, Error, NetSpec, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Budget = 6,
    Schedule = 7,
    NoClasses = 8,
    Diverged = 9,
    Checkpoint = 10,
    Internal = 11,
}

/// Training settings passed across the boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IclTrainOptions {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub lr_drop_factor: f64,
    pub weight_decay: f64,
    pub shuffle_seed: u64,
}

/// A dataset with per-class train and test samples.
pub struct IclDataset {
    inner: Dataset,
}

/// A learner state plus the strategy and training settings that drive it.
pub struct IclLearner {
    state: LearnerState,
    strategy: StrategySpec,
    train: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IclStatus {
    match e {
        Error::Io { .. } => IclStatus::Io,
        Error::Parse { .. } | Error::EmptyDataset => IclStatus::Parse,
        Error::Shape { .. } | Error::RowShape { .. } => IclStatus::Shape,
        Error::BudgetExhausted { .. } => IclStatus::Budget,
        Error::Schedule(_) => IclStatus::Schedule,
        Error::NoClasses => IclStatus::NoClasses,
        Error::Divergence { .. } => IclStatus::Diverged,
        Error::BadMagic
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::ChecksumMismatch
        | Error::Invariant(_) => IclStatus::Checkpoint,
        _ => IclStatus::InvalidArgument,
    }
}

enum Failure {
    Status(IclStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Status(IclStatus::NullPointer, "null pointer argument".into())
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(IclStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IclStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            IclStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("string argument is not UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null()),
        (false, n) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn train_config(o: &IclTrainOptions) -> Result<TrainConfig, Failure> {
    let mut c = TrainConfig::with_epochs(o.epochs);
    c.minibatch_size = o.minibatch_size;
    c.base_learning_rate = o.learning_rate;
    c.lr_drop_factor = o.lr_drop_factor;
    c.weight_decay = o.weight_decay;
    c.shuffle_seed = o.shuffle_seed;
    c.validate()?;
    Ok(c)
}

fn checkpointable(name: &str) -> Result<StrategySpec, Failure> {
    let s = strategy_for(name)?;
    if s.classifier == ClassifierKind::Ncm {
        return Err(invalid("ncm needs all past training data and is not available here"));
    }
    Ok(s)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn icl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Defaults: 70 epochs, minibatch 128, learning rate 2.0 divided by 5 at
/// 7/10 and 9/10 of training, weight decay 1e-5.
#[no_mangle]
pub extern "C" fn icl_train_options_default() -> IclTrainOptions {
    let c = TrainConfig::default();
    IclTrainOptions {
        epochs: c.epochs,
        minibatch_size: c.minibatch_size,
        learning_rate: c.base_learning_rate,
        lr_drop_factor: c.lr_drop_factor,
        weight_decay: c.weight_decay,
        shuffle_seed: c.shuffle_seed,
    }
}

/// Gaussian-mixture dataset; class labels are `c0`, `c1`, ...
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn icl_dataset_synthetic(
    classes: usize,
    dim: usize,
    modes_per_class: usize,
    separation: f64,
    noise: f64,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
    out: *mut *mut IclDataset,
) -> IclStatus {
    guard(|| {
        let inner = data::gen_synthetic(&SyntheticSpec {
            classes,
            dim,
            modes_per_class,
            separation,
            noise,
            train_per_class,
            test_per_class,
            seed,
        })?;
        write_out(out, IclDataset { inner })
    })
}

/// Loads a delimited file with `label` and `split` columns.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`icl_dataset_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn icl_dataset_load(
    path: *const c_char,
    delimiter: c_char,
    out: *mut *mut IclDataset,
) -> IclStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path)?);
        let inner = data::load_delimited(
            path,
            &DelimitedSchema {
                delimiter: delimiter as u8,
                ..DelimitedSchema::default()
            },
        )?;
        inner.validate()?;
        write_out(out, IclDataset { inner })
    })
}

/// # Safety
/// `ds` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn icl_dataset_num_classes(ds: *const IclDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_classes())
}

/// # Safety
/// `ds` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn icl_dataset_input_dim(ds: *const IclDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.input_dim)
}

/// Copies test sample `index` of dataset class `class` into `x` (length `len`).
///
/// # Safety
/// `ds` must be a handle from this library and `x` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn icl_dataset_test_sample(
    ds: *const IclDataset,
    class: usize,
    index: usize,
    x: *mut f64,
    len: usize,
) -> IclStatus {
    guard(|| {
        let d = &ds.as_ref().ok_or_else(null)?.inner;
        let sample = d
            .classes
            .get(class)
            .and_then(|c| c.test.get(index))
            .ok_or_else(|| invalid("no such test sample"))?;
        if x.is_null() {
            return Err(null());
        }
        if len != sample.len() {
            return Err(Error::Shape {
                context: "output buffer",
                expected: sample.len(),
                got: len,
            }
            .into());
        }
        std::slice::from_raw_parts_mut(x, len).copy_from_slice(sample);
        Ok(())
    })
}

/// Number of test samples of dataset class `class` (0 if out of range).
///
/// # Safety
/// `ds` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn icl_dataset_test_count(ds: *const IclDataset, class: usize) -> usize {
    ds.as_ref()
        .and_then(|d| d.inner.classes.get(class))
        .map_or(0, |c| c.test.len())
}

/// # Safety
/// `ds` must be null or a handle from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn icl_dataset_free(ds: *mut IclDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Creates a learner for the named strategy (`icarl`, `finetuning`, ...).
/// `memory_k` is ignored by strategies that keep no exemplars.
///
/// # Safety
/// `strategy` must be a NUL-terminated string, `hidden` must point to
/// `hidden_len` values, `options` must be valid, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_new(
    strategy: *const c_char,
    input_dim: usize,
    hidden: *const usize,
    hidden_len: usize,
    feature_dim: usize,
    memory_k: usize,
    seed: u64,
    options: *const IclTrainOptions,
    out: *mut *mut IclLearner,
) -> IclStatus {
    guard(|| {
        let strategy = checkpointable(str_arg(strategy)?)?;
        let hidden = slice_arg(hidden, hidden_len)?.to_vec();
        let train = train_config(options.as_ref().ok_or_else(null)?)?;
        let spec = NetSpec::new(input_dim, hidden, feature_dim)?;
        let state = LearnerState::for_strategy(&spec, &strategy, memory_k, seed)?;
        write_out(out, IclLearner { state, strategy, train })
    })
}

/// Trains one incremental step on dataset classes `classes[0..n]`.
///
/// # Safety
/// Handles must come from this library; `classes` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_train_classes(
    learner: *mut IclLearner,
    ds: *const IclDataset,
    classes: *const usize,
    n: usize,
) -> IclStatus {
    guard(|| {
        let l = learner.as_mut().ok_or_else(null)?;
        let d = &ds.as_ref().ok_or_else(null)?.inner;
        let mut batch = Vec::new();
        for &c in slice_arg(classes, n)? {
            let class = d.classes.get(c).ok_or_else(|| invalid(format!("no dataset class {c}")))?;
            batch.push(BatchClass {
                label: &class.label,
                samples: &class.train,
            });
        }
        let state = advance(l.state.clone(), &l.strategy, &ClassBatch::new(batch), &l.train)?;
        l.state = state;
        Ok(())
    })
}

/// Trains one incremental step on raw samples. Class `i` is named
/// `labels[i]` and owns `counts[i]` consecutive rows of `samples`, each of
/// the learner's input dimension.
///
/// # Safety
/// `labels` must hold `n` NUL-terminated strings, `counts` `n` values, and
/// `samples` `sum(counts) * input_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_train_batch(
    learner: *mut IclLearner,
    labels: *const *const c_char,
    counts: *const usize,
    n: usize,
    samples: *const f64,
) -> IclStatus {
    guard(|| {
        let l = learner.as_mut().ok_or_else(null)?;
        let dim = l.state.params.spec.input_dim;
        let labels: Vec<&str> = slice_arg(labels, n)?
            .iter()
            .map(|&p| str_arg(p))
            .collect::<Result<_, _>>()?;
        let counts = slice_arg(counts, n)?;
        let total = counts
            .iter()
            .try_fold(0usize, |a, &c| a.checked_add(c))
            .and_then(|t| t.checked_mul(dim))
            .ok_or_else(|| invalid("sample count overflows"))?;
        let flat = slice_arg(samples, total)?;
        let mut rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
        let mut offset = 0;
        for &c in counts {
            rows.push(flat[offset..offset + c * dim].chunks(dim).map(<[f64]>::to_vec).collect());
            offset += c * dim;
        }
        let batch = ClassBatch::new(
            labels
                .iter()
                .zip(&rows)
                .map(|(label, samples)| BatchClass { label, samples })
                .collect(),
        );
        let state = advance(l.state.clone(), &l.strategy, &batch, &l.train)?;
        l.state = state;
        Ok(())
    })
}

/// Predicts the internal class id (arrival order) of `x`.
///
/// # Safety
/// `learner` must be a handle from this library, `x` must point to `len`
/// doubles and `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_predict(
    learner: *const IclLearner,
    x: *const f64,
    len: usize,
    out_class: *mut usize,
) -> IclStatus {
    guard(|| {
        let l = learner.as_ref().ok_or_else(null)?;
        let x = slice_arg(x, len)?;
        let y = match l.strategy.classifier {
            ClassifierKind::MeanOfExemplars => classifier::classify(x, &l.state.prototypes()?, &l.state.params)?,
            _ => classifier::classify_by_network(x, &l.state.params)?,
        };
        if out_class.is_null() {
            return Err(null());
        }
        *out_class = y;
        Ok(())
    })
}

/// Number of classes learned so far.
///
/// # Safety
/// `learner` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_num_classes(learner: *const IclLearner) -> usize {
    learner.as_ref().map_or(0, |l| l.state.num_classes())
}

/// Copies the label of internal class `id` into `buf` as a NUL-terminated
/// string. `out_len` receives the label length without the NUL; when the
/// buffer is too small nothing is copied and `InvalidArgument` is returned.
///
/// # Safety
/// `buf` must point to `buf_len` writable bytes, `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_class_label(
    learner: *const IclLearner,
    id: usize,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> IclStatus {
    guard(|| {
        let l = learner.as_ref().ok_or_else(null)?;
        let label = l
            .state
            .registry
            .label(id)
            .ok_or_else(|| invalid(format!("no class {id}")))?;
        if out_len.is_null() {
            return Err(null());
        }
        *out_len = label.len();
        if buf_len <= label.len() {
            return Err(invalid("label buffer too small"));
        }
        if buf.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(label.as_ptr().cast(), buf, label.len());
        *buf.add(label.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `learner` must be a handle from this library and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_save(learner: *const IclLearner, path: *const c_char) -> IclStatus {
    guard(|| {
        let l = learner.as_ref().ok_or_else(null)?;
        checkpoint::save_checkpoint(&l.state, str_arg(path)?)?;
        Ok(())
    })
}

/// Loads a checkpoint. Strategy and training settings are not stored in
/// checkpoints and must be given again.
///
/// # Safety
/// Strings must be NUL-terminated, `options` valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_load(
    path: *const c_char,
    strategy: *const c_char,
    options: *const IclTrainOptions,
    out: *mut *mut IclLearner,
) -> IclStatus {
    guard(|| {
        let strategy = checkpointable(str_arg(strategy)?)?;
        let train = train_config(options.as_ref().ok_or_else(null)?)?;
        let state = checkpoint::load_checkpoint(str_arg(path)?)?;
        if strategy.maintains_memory() != state.memory.is_some() {
            return Err(invalid("checkpoint memory does not match the strategy"));
        }
        write_out(out, IclLearner { state, strategy, train })
    })
}

/// # Safety
/// `learner` must be null or a handle from this library not freed before.
#[no_mangle]
pub unsafe extern "C" fn icl_learner_free(learner: *mut IclLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}
