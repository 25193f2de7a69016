//! C ABI over the `dsfn` library.
//!
//! Every function returns a [`DsfnStatus`]. On failure a message describing
//! the error can be read with [`dsfn_last_error_message`] on the same thread.
//! Datasets are opaque handles created by `dsfn_dataset_*` constructors and
//! released with [`dsfn_dataset_free`]. Panics never cross the boundary; they
//! are reported as [`DsfnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dsfn::classifier::ClassModel;
use dsfn::{
    evaluate, synth_generate, Dataset, Error, ErrorKind, EvalConfig, FilterKind, FilterSpec, KernelSpec, LabeledVector,
    LambdaPolicy, OneShotPolicy, SynthConfig,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsfnStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsfnKernel {
    Identity = 0,
    Rbf = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsfnFilter {
    Zero = 0,
    Tikhonov = 1,
    TruncatedSvd = 2,
}

/// Kernel and spectral filter of the classifier.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsfnModel {
    pub kernel: DsfnKernel,
    /// RBF bandwidth σ²; values ≤ 0 select the feature dimension.
    pub rbf_sigma2: f64,
    pub filter: DsfnFilter,
    /// When true, λ = `lambda` × the largest eigenvalue of each class.
    pub lambda_is_relative: bool,
    pub lambda: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsfnEvalConfig {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub episode_count: usize,
    pub model: DsfnModel,
    pub zeta: f64,
    /// Add a jittered copy to 1-shot support sets.
    pub one_shot_jitter: bool,
    /// Jitter standard deviation; values ≤ 0 select the default.
    pub jitter_sigma: f64,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DsfnEvalReport {
    pub accuracy_mean: f64,
    pub ci95_halfwidth: f64,
    pub mean_loss: f64,
    pub episode_count: usize,
}

/// Opaque labeled dataset.
pub struct DsfnDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DsfnStatus {
    match err.kind() {
        ErrorKind::Config => DsfnStatus::Config,
        ErrorKind::Data => DsfnStatus::Data,
        ErrorKind::Numerical => DsfnStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DsfnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DsfnStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is null"));
            DsfnStatus::NullPointer
        }
        Ok(Err(Failure::Lib(err))) => {
            set_last_error(err.to_string());
            status_of(&err)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            DsfnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::config(format!("{what} is not valid UTF-8"))))
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

fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller promises that a non-null pointer is valid for writes.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn boxed(dataset: Dataset, out: *mut *mut DsfnDataset) -> Result<(), Failure> {
    *out_arg(out, "out")? = Box::into_raw(Box::new(DsfnDataset { inner: dataset }));
    Ok(())
}

impl DsfnModel {
    fn kernel(&self, dim: usize) -> Result<KernelSpec, Error> {
        match self.kernel {
            DsfnKernel::Identity => Ok(KernelSpec::Identity),
            DsfnKernel::Rbf if self.rbf_sigma2 > 0.0 => KernelSpec::rbf(self.rbf_sigma2),
            DsfnKernel::Rbf => Ok(KernelSpec::rbf_for_dim(dim)),
        }
    }

    fn filter(&self) -> Result<FilterSpec, Error> {
        let policy = if self.lambda_is_relative {
            LambdaPolicy::RelativeToMaxEigenvalue(self.lambda)
        } else {
            LambdaPolicy::Absolute(self.lambda)
        };
        let kind = match self.filter {
            DsfnFilter::Zero => FilterKind::Zero,
            DsfnFilter::Tikhonov => FilterKind::Tikhonov,
            DsfnFilter::TruncatedSvd => FilterKind::TruncatedSvd,
        };
        let spec = FilterSpec {
            kind,
            lambda_policy: policy,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl DsfnEvalConfig {
    fn to_config(self, dim: usize) -> Result<EvalConfig, Error> {
        let one_shot_policy = if self.one_shot_jitter {
            OneShotPolicy::Jitter {
                sigma: (self.jitter_sigma > 0.0).then_some(self.jitter_sigma),
            }
        } else {
            OneShotPolicy::None
        };
        let cfg = EvalConfig {
            way: self.way,
            shot: self.shot,
            query_per_class: self.query_per_class,
            episode_count: self.episode_count,
            kernel: self.model.kernel(dim)?,
            filter: self.model.filter()?,
            zeta: self.zeta,
            one_shot_policy,
            exclude_augmented_from_mean: false,
            master_seed: self.master_seed,
            workers: self.workers,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Message for the most recent failed call on this thread, or null. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn dsfn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dsfn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a CSV file with rows `label,f1,...,fd`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsfn_dataset_load_csv(path: *const c_char, out: *mut *mut DsfnDataset) -> DsfnStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        boxed(dsfn::load_csv(Path::new(path))?, out)
    })
}

/// Generates one of the synthetic presets: `reference`, `small4`, `separable`.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsfn_dataset_synth(preset: *const c_char, out: *mut *mut DsfnDataset) -> DsfnStatus {
    guard(|| {
        let name = str_arg(preset, "preset")?;
        let cfg = SynthConfig::preset(name).ok_or_else(|| Error::config(format!("unknown preset '{name}'")))?;
        boxed(synth_generate(&cfg)?, out)
    })
}

/// Builds a dataset from `count` row-major feature vectors of length `dim`
/// and one integer label per row.
///
/// # Safety
/// `labels` must hold `count` values, `features` `count * dim` values, and
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsfn_dataset_from_arrays(
    labels: *const u32,
    features: *const f64,
    count: usize,
    dim: usize,
    out: *mut *mut DsfnDataset,
) -> DsfnStatus {
    guard(|| {
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Error::config("count * dim overflows"))?;
        let labels = slice_arg(labels, count, "labels")?;
        let features = slice_arg(features, total, "features")?;
        if dim == 0 && count > 0 {
            return Err(Error::data("dimension must be at least 1").into());
        }
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabeledVector {
                label: l.to_string(),
                features: features[i * dim..(i + 1) * dim].to_vec(),
            })
            .collect();
        boxed(Dataset::new(items)?, out)
    })
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `dataset` must come from a `dsfn_dataset_*` constructor and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsfn_dataset_free(dataset: *mut DsfnDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Writes the sample count, feature dimension and class count.
///
/// # Safety
/// `dataset` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn dsfn_dataset_shape(
    dataset: *const DsfnDataset,
    len: *mut usize,
    dim: *mut usize,
    class_count: *mut usize,
) -> DsfnStatus {
    guard(|| {
        let ds = &dataset.as_ref().ok_or(Failure::Null("dataset"))?.inner;
        for (p, v) in [(len, ds.len()), (dim, ds.dim()), (class_count, ds.classes().len())] {
            if let Some(slot) = p.as_mut() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// Default evaluation setup: 5-way 5-shot, 15 queries, 1000 episodes,
/// identity kernel, Tikhonov with λ = 0.1 × the largest class eigenvalue.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dsfn_eval_config_default(out: *mut DsfnEvalConfig) -> DsfnStatus {
    guard(|| {
        let d = EvalConfig::default();
        *out_arg(out, "out")? = DsfnEvalConfig {
            way: d.way,
            shot: d.shot,
            query_per_class: d.query_per_class,
            episode_count: d.episode_count,
            model: DsfnModel {
                kernel: DsfnKernel::Identity,
                rbf_sigma2: 0.0,
                filter: DsfnFilter::Tikhonov,
                lambda_is_relative: true,
                lambda: 0.1,
            },
            zeta: d.zeta,
            one_shot_jitter: false,
            jitter_sigma: 0.0,
            master_seed: d.master_seed,
            workers: d.workers,
        };
        Ok(())
    })
}

/// Runs the episodic evaluation. Results depend only on the config and the
/// dataset, never on `workers`.
///
/// # Safety
/// `dataset` must be a live handle, `config` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dsfn_evaluate(
    dataset: *const DsfnDataset,
    config: *const DsfnEvalConfig,
    out: *mut DsfnEvalReport,
) -> DsfnStatus {
    guard(|| {
        let ds = &dataset.as_ref().ok_or(Failure::Null("dataset"))?.inner;
        let cfg = config.as_ref().ok_or(Failure::Null("config"))?.to_config(ds.dim())?;
        let out = out_arg(out, "out")?;
        let report = evaluate(ds, &cfg)?;
        *out = DsfnEvalReport {
            accuracy_mean: report.accuracy_mean,
            ci95_halfwidth: report.ci95_halfwidth,
            mean_loss: report.mean_loss,
            episode_count: report.per_episode_accuracies.len(),
        };
        Ok(())
    })
}

/// Squared distance between a query and one class given by `count`
/// row-major support vectors of length `dim`.
///
/// # Safety
/// `support` must hold `count * dim` values, `query` `dim` values, `model`
/// must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dsfn_class_distance(
    support: *const f64,
    count: usize,
    dim: usize,
    query: *const f64,
    model: *const DsfnModel,
    out: *mut f64,
) -> DsfnStatus {
    guard(|| {
        if count == 0 || dim == 0 {
            return Err(Error::data("support must have at least one vector of dimension ≥ 1").into());
        }
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| Error::config("count * dim overflows"))?;
        let flat = slice_arg(support, total, "support")?;
        let query = slice_arg(query, dim, "query")?;
        let model = model.as_ref().ok_or(Failure::Null("model"))?;
        let out = out_arg(out, "out")?;
        let rows: Vec<&[f64]> = flat.chunks(dim).collect();
        if rows
            .iter()
            .chain(std::iter::once(&query))
            .flat_map(|r| r.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::data("inputs must be finite").into());
        }
        let kernel = model.kernel(dim)?;
        let filter = model.filter()?;
        *out = ClassModel::fit(&rows, &kernel, &filter, None)?.distance(&rows, &kernel, query)?;
        Ok(())
    })
}
