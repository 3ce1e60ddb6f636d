//! C ABI over `hevc-energy`.
//!
//! Every function returns an [`HeStatus`]. On failure a message is kept per
//! thread and can be read with [`he_last_error`]. Handles are opaque and must
//! be released with their `*_free` function; strings returned through `char**`
//! out-parameters must be released with [`he_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hevc_energy::benchgen::{self, SynthSpec};
use hevc_energy::catalog::{FeatureCatalog, Variant};
use hevc_energy::dataset::{self, Dataset, Preset};
use hevc_energy::error::{Error, ErrorClass};
use hevc_energy::evaluation::{self, CvOptions, EvaluationReport, Grouping, PlotOptions, ReportFormat};
use hevc_energy::fitting::{self, BoundsPolicy, FitOptions};
use hevc_energy::measurement::{self, MeasurementSet};
use hevc_energy::models::{FittedModel, ModelKind};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalFailure = 4,
    Panic = 5,
}

/// Loaded dataset.
pub struct HeDataset(Dataset);

/// Trained model.
pub struct HeModel(FittedModel);

/// Cross-validation result.
pub struct HeReport(EvaluationReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(HeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.class() {
            ErrorClass::Usage => HeStatus::InvalidArgument,
            ErrorClass::Data => HeStatus::DataError,
            ErrorClass::Numerical => HeStatus::NumericalFailure,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> HeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(HeStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(HeStatus::DataError, "output contains a NUL byte".into()))
}

fn bounds(unbounded: c_int) -> BoundsPolicy {
    if unbounded != 0 {
        BoundsPolicy::Unbounded
    } else {
        BoundsPolicy::NonNegative
    }
}

fn catalog() -> &'static FeatureCatalog {
    FeatureCatalog::canonical()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn he_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn he_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Feature-catalog version that datasets and models must carry.
#[no_mangle]
pub extern "C" fn he_catalog_version() -> *const c_char {
    concat!("hevc-enc-features/1", "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn he_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the feature catalog as JSON.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn he_catalog_json(out: *mut *mut c_char) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = serde_json::to_string(&catalog().export()).map_err(Error::from)?;
        *out = to_c_string(s)?;
        Ok(())
    })
}

/// Loads a dataset from its canonical JSON bytes.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_dataset_load(bytes: *const u8, len: usize, out: *mut *mut HeDataset) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let ds = dataset::load_dataset(std::slice::from_raw_parts(bytes, len), catalog())?;
        *out = Box::into_raw(Box::new(HeDataset(ds)));
        Ok(())
    })
}

/// Generates the synthetic reference dataset for `variant` ("SM" or "EM").
///
/// # Safety
/// `variant` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_dataset_synth(
    variant: *const c_char,
    noise_rel: f64,
    seed: u64,
    out: *mut *mut HeDataset,
) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let variant: Variant = str_arg(variant, "variant")?.parse()?;
        let spec = SynthSpec::reference(variant, seed, catalog()).with_noise(noise_rel);
        let ds = benchgen::generate(&spec, catalog())?;
        *out = Box::into_raw(Box::new(HeDataset(ds)));
        Ok(())
    })
}

/// Number of records in a dataset.
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_dataset_len(ds: *const HeDataset, out: *mut usize) -> HeStatus {
    guard(|| {
        *out_ptr(out, "out")? = borrow(ds, "dataset")?.0.len();
        Ok(())
    })
}

/// Serializes a dataset to its canonical JSON form.
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_dataset_to_json(ds: *const HeDataset, out: *mut *mut c_char) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let bytes = dataset::save_dataset(&borrow(ds, "dataset")?.0);
        *out = to_c_string(String::from_utf8(bytes).expect("dataset JSON is UTF-8"))?;
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn he_dataset_free(ds: *mut HeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains a model. `kind` is one of qp, t, uf, em, sm; `scope` is a preset
/// name or null for all presets.
///
/// # Safety
/// Pointers must be valid; `scope` may be null.
#[no_mangle]
pub unsafe extern "C" fn he_fit(
    ds: *const HeDataset,
    kind: *const c_char,
    scope: *const c_char,
    unbounded: c_int,
    out: *mut *mut HeModel,
) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = borrow(ds, "dataset")?;
        let kind: ModelKind = str_arg(kind, "kind")?.parse()?;
        let scope = opt_str_arg(scope, "scope")?.map(str::parse::<Preset>).transpose()?;
        let opts = FitOptions { bounds: bounds(unbounded), ..Default::default() };
        let m = fitting::fit(&ds.0, kind, scope, opts, catalog())?;
        *out = Box::into_raw(Box::new(HeModel(m)));
        Ok(())
    })
}

/// Loads a model from the JSON written by [`he_model_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_model_from_json(json: *const c_char, out: *mut *mut HeModel) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = FittedModel::from_json(str_arg(json, "json")?, catalog())?;
        *out = Box::into_raw(Box::new(HeModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_model_to_json(model: *const HeModel, out: *mut *mut c_char) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = to_c_string(borrow(model, "model")?.0.to_json(catalog()))?;
        Ok(())
    })
}

/// Predicts the energy of every dataset record, in dataset order, into
/// `out[0..len]`. `len` must equal the dataset length.
///
/// # Safety
/// Handles must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn he_model_predict(
    model: *const HeModel,
    ds: *const HeDataset,
    out: *mut f64,
    len: usize,
) -> HeStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let ds = borrow(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != ds.0.len() {
            return Err(Failure(
                HeStatus::InvalidArgument,
                format!("output length {len} does not match dataset length {}", ds.0.len()),
            ));
        }
        let out = std::slice::from_raw_parts_mut(out, len);
        for (o, r) in out.iter_mut().zip(&ds.0.records) {
            *o = model.0.model.predict_record(r, catalog())?;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn he_model_free(model: *mut HeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// k-fold cross-validation, per preset and over all presets.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_crossval(
    ds: *const HeDataset,
    kind: *const c_char,
    k: u32,
    seed: u64,
    unbounded: c_int,
    out: *mut *mut HeReport,
) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = borrow(ds, "dataset")?;
        let kind: ModelKind = str_arg(kind, "kind")?.parse()?;
        let opts = CvOptions { grouping: Grouping::Both, k: k as usize, seed, bounds: bounds(unbounded) };
        let r = evaluation::cross_validate(&ds.0, kind, opts, catalog())?;
        *out = Box::into_raw(Box::new(HeReport(r)));
        Ok(())
    })
}

/// Mean absolute relative error of a report. `preset` selects a preset row;
/// "average" gives the mean over presets and null or "all" the pooled value.
///
/// # Safety
/// `report` must be live; `preset` may be null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_report_error(report: *const HeReport, preset: *const c_char, out: *mut f64) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let r = &borrow(report, "report")?.0;
        let v = match opt_str_arg(preset, "preset")? {
            None | Some("all") => r.all_presets_pooled,
            Some("average") => r.average_over_presets,
            Some(p) => r.per_preset.get(&p.parse::<Preset>()?).copied(),
        };
        *out = v.ok_or_else(|| Failure(HeStatus::InvalidArgument, "report has no such row".into()))?;
        Ok(())
    })
}

/// Renders reports as "text", "delimited" or "plot-data".
///
/// # Safety
/// `reports` must point to `n` live handles; `format` must be a NUL-terminated
/// string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_report_render(
    reports: *const *const HeReport,
    n: usize,
    format: *const c_char,
    out: *mut *mut c_char,
) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if reports.is_null() {
            return Err(null("reports"));
        }
        let format: ReportFormat = str_arg(format, "format")?.parse()?;
        let rs = std::slice::from_raw_parts(reports, n)
            .iter()
            .map(|&p| borrow(p, "report").map(|r| r.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let plot = PlotOptions { sequence: Some("Cactus".into()), crf: None, kind: None };
        *out = to_c_string(evaluation::render_report(&rs, format, &plot)?)?;
        Ok(())
    })
}

/// # Safety
/// `report` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_report_to_json(report: *const HeReport, out: *mut *mut c_char) -> HeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = to_c_string(serde_json::to_string(&borrow(report, "report")?.0).map_err(Error::from)?)?;
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn he_report_free(report: *mut HeReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// One-sided Student-t critical value for confidence `alpha` and `df` degrees of freedom.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_t_critical(alpha: f64, df: u32, out: *mut f64) -> HeStatus {
    guard(|| {
        *out_ptr(out, "out")? = measurement::t_critical(alpha, df)?;
        Ok(())
    })
}

/// Stopping-rule check on `n` repeated energy measurements.
///
/// # Safety
/// `values` must point to `n` doubles; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn he_confidence_check(
    values: *const f64,
    n: usize,
    alpha: f64,
    beta: f64,
    satisfied: *mut c_int,
    lhs: *mut f64,
    rhs: *mut f64,
) -> HeStatus {
    guard(|| {
        let satisfied = out_ptr(satisfied, "satisfied")?;
        let lhs = out_ptr(lhs, "lhs")?;
        let rhs = out_ptr(rhs, "rhs")?;
        if values.is_null() {
            return Err(null("values"));
        }
        let set = MeasurementSet::with_bounds(std::slice::from_raw_parts(values, n).to_vec(), alpha, beta);
        let v = measurement::confidence_check(&set)?;
        *satisfied = c_int::from(v.satisfied);
        *lhs = v.lhs;
        *rhs = v.rhs;
        Ok(())
    })
}
