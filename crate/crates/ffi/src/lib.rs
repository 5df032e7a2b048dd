//! C ABI over the olseg library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`OlsegStatus`]; on failure the message is available from
//! [`olseg_last_error`] on the same thread until the next failing call.
//!
//! # Safety
//!
//! Shared by every function here: pointer arguments are either NULL (reported
//! as [`OlsegStatus::NullArgument`]) or valid for the stated length; strings
//! are NUL-terminated UTF-8; handles come from this library and are freed at
//! most once.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use olseg::data::{read_volume, write_volume, Volume, N_SURFACES};
use olseg::harness::{self, PreparedVolume, RunConfig};
use olseg::metrics;
use olseg::network::ModelParams;
use olseg::preprocess::TransformRecord;
use olseg::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OlsegStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Shape = 5,
    InvalidArgument = 6,
    Io = 7,
    Panic = 8,
}

/// Run configuration.
pub struct OlsegConfig(RunConfig);

/// A volume of B-scans with intensities in [0, 1].
pub struct OlsegVolume(Volume);

/// A trained network with the configuration it was loaded under.
pub struct OlsegModel {
    params: ModelParams,
    config: RunConfig,
}

/// Per-slice coordinate records of a preprocessed volume.
pub struct OlsegTransforms(Vec<Option<TransformRecord>>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OlsegStatus {
    match e {
        Error::Config(_) => OlsegStatus::Config,
        Error::Data(_) | Error::UnusableScan { .. } => OlsegStatus::Data,
        Error::Numeric(_) | Error::Graph(_) => OlsegStatus::Numeric,
        Error::Shape(_) => OlsegStatus::Shape,
        Error::InvalidArgument(_) => OlsegStatus::InvalidArgument,
        Error::Io { .. } => OlsegStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OlsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OlsegStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            OlsegStatus::NullArgument
        }
        Ok(Err(Fail::Lib(e))) => {
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
            OlsegStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library and valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn olseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn olseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of boundary surfaces predicted per column.
#[no_mangle]
pub extern "C" fn olseg_surface_count() -> usize {
    N_SURFACES
}

// ---- configuration ----

/// Default configuration.
#[no_mangle]
pub unsafe extern "C" fn olseg_config_new(out: *mut *mut OlsegConfig) -> OlsegStatus {
    guard(|| store(out, OlsegConfig(RunConfig::default())))
}

/// Loads a `key = value` configuration file.
#[no_mangle]
pub unsafe extern "C" fn olseg_config_load(path: *const c_char, out: *mut *mut OlsegConfig) -> OlsegStatus {
    guard(|| {
        let p = c_str(path, "path")?;
        store(out, OlsegConfig(RunConfig::load(p.as_ref())?))
    })
}

/// Sets one configuration key from its text form.
#[no_mangle]
pub unsafe extern "C" fn olseg_config_set(
    cfg: *mut OlsegConfig,
    key: *const c_char,
    value: *const c_char,
) -> OlsegStatus {
    guard(|| {
        let cfg = non_null_mut(cfg, "config")?;
        let mut next = cfg.0.clone();
        next.set(c_str(key, "key")?, c_str(value, "value")?)?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn olseg_config_free(cfg: *mut OlsegConfig) {
    free(cfg)
}

// ---- volumes ----

/// Copies `slices*height*width` samples (slice-major, row-major) into a new volume.
#[no_mangle]
pub unsafe extern "C" fn olseg_volume_new(
    slices: usize,
    height: usize,
    width: usize,
    data: *const f32,
    out: *mut *mut OlsegVolume,
) -> OlsegStatus {
    guard(|| {
        let n = slices
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or(Fail::Lib(Error::Shape("volume size overflows".into())))?;
        let d = slice(data, n, "data")?;
        store(out, OlsegVolume(Volume::new(slices, height, width, d.to_vec())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn olseg_volume_read(path: *const c_char, out: *mut *mut OlsegVolume) -> OlsegStatus {
    guard(|| {
        let p = c_str(path, "path")?;
        store(out, OlsegVolume(read_volume(p.as_ref())?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn olseg_volume_write(vol: *const OlsegVolume, path: *const c_char) -> OlsegStatus {
    guard(|| {
        let v = non_null(vol, "volume")?;
        write_volume(&v.0, c_str(path, "path")?.as_ref())?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn olseg_volume_dims(
    vol: *const OlsegVolume,
    slices: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> OlsegStatus {
    guard(|| {
        let v = &non_null(vol, "volume")?.0;
        *non_null_mut(slices, "slices")? = v.slices;
        *non_null_mut(height, "height")? = v.height;
        *non_null_mut(width, "width")? = v.width;
        Ok(())
    })
}

/// Copies all samples into `out`, which must hold `len ≥ slices*height*width` floats.
#[no_mangle]
pub unsafe extern "C" fn olseg_volume_copy_data(vol: *const OlsegVolume, out: *mut f32, len: usize) -> OlsegStatus {
    guard(|| {
        let v = &non_null(vol, "volume")?.0;
        if len < v.data.len() {
            return Err(Error::Shape(format!("buffer holds {len} floats, volume has {}", v.data.len())).into());
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, v.data.len()).copy_from_slice(&v.data);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn olseg_volume_free(vol: *mut OlsegVolume) {
    free(vol)
}

// ---- preprocessing ----

/// Preprocesses every slice of `vol` under `cfg`. Rejected slices come back
/// black, with no transform record.
#[no_mangle]
pub unsafe extern "C" fn olseg_preprocess(
    cfg: *const OlsegConfig,
    vol: *const OlsegVolume,
    out_volume: *mut *mut OlsegVolume,
    out_transforms: *mut *mut OlsegTransforms,
) -> OlsegStatus {
    guard(|| {
        let cfg = &non_null(cfg, "config")?.0;
        let v = &non_null(vol, "volume")?.0;
        if out_volume.is_null() || out_transforms.is_null() {
            return Err(Fail::Null("output pointer"));
        }
        let (processed, transforms, _) = harness::preprocess_volume(v, &cfg.preprocess_config())?;
        store(out_volume, OlsegVolume(processed))?;
        store(out_transforms, OlsegTransforms(transforms))
    })
}

/// Whether slice `slice` survived preprocessing (1) or was rejected (0).
#[no_mangle]
pub unsafe extern "C" fn olseg_transforms_usable(
    t: *const OlsegTransforms,
    slice: usize,
    usable: *mut u8,
) -> OlsegStatus {
    guard(|| {
        let t = &non_null(t, "transforms")?.0;
        let rec = t
            .get(slice)
            .ok_or_else(|| Error::InvalidArgument(format!("slice {slice} of {}", t.len())))?;
        *non_null_mut(usable, "usable")? = rec.is_some() as u8;
        Ok(())
    })
}

unsafe fn record<'a>(t: *const OlsegTransforms, slice: usize, col: usize) -> Result<&'a TransformRecord, Fail> {
    let t = &non_null(t, "transforms")?.0;
    let rec = t
        .get(slice)
        .ok_or_else(|| Error::InvalidArgument(format!("slice {slice} of {}", t.len())))?
        .as_ref()
        .ok_or_else(|| Error::Data(format!("slice {slice} was rejected by preprocessing")))?;
    if col >= rec.original_width {
        return Err(Error::InvalidArgument(format!("column {col} of {}", rec.original_width)).into());
    }
    Ok(rec)
}

/// Original row at original column `col` → network-space row.
#[no_mangle]
pub unsafe extern "C" fn olseg_transform_row_to_output(
    t: *const OlsegTransforms,
    slice: usize,
    col: usize,
    row: f64,
    out: *mut f64,
) -> OlsegStatus {
    guard(|| {
        let rec = record(t, slice, col)?;
        *non_null_mut(out, "out")? = rec.row_to_output(col, row);
        Ok(())
    })
}

/// Network-space row at original column `col` → original row.
#[no_mangle]
pub unsafe extern "C" fn olseg_transform_row_to_original(
    t: *const OlsegTransforms,
    slice: usize,
    col: usize,
    row: f64,
    out: *mut f64,
) -> OlsegStatus {
    guard(|| {
        let rec = record(t, slice, col)?;
        *non_null_mut(out, "out")? = rec.row_to_original(col, row);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn olseg_transforms_free(t: *mut OlsegTransforms) {
    free(t)
}

// ---- models ----

/// Loads a checkpoint for the model described by `cfg`.
#[no_mangle]
pub unsafe extern "C" fn olseg_model_load(
    cfg: *const OlsegConfig,
    checkpoint: *const c_char,
    out: *mut *mut OlsegModel,
) -> OlsegStatus {
    guard(|| {
        let cfg = &non_null(cfg, "config")?.0;
        let path = PathBuf::from(c_str(checkpoint, "checkpoint")?);
        let params = harness::load_model(cfg, &path)?;
        store(
            out,
            OlsegModel {
                params,
                config: cfg.clone(),
            },
        )
    })
}

/// Predicts every slice of a raw volume. `out` receives
/// `slices × surfaces × width` rows in original coordinates (slice-major,
/// then surface, then column); rejected slices are filled with NaN.
#[no_mangle]
pub unsafe extern "C" fn olseg_model_predict(
    model: *const OlsegModel,
    vol: *const OlsegVolume,
    out: *mut f64,
    len: usize,
) -> OlsegStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let v = &non_null(vol, "volume")?.0;
        let need = v.slices * N_SURFACES * v.width;
        if len < need {
            return Err(Error::Shape(format!("buffer holds {len} values, prediction needs {need}")).into());
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let pv = PreparedVolume::new("volume", v.clone(), None, &m.config.preprocess_config())?;
        let pred = harness::predict_original(&m.params, &pv)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (chunk, p) in dst.chunks_mut(N_SURFACES * v.width).zip(pred) {
            match p {
                Some(rows) => chunk.copy_from_slice(&rows),
                None => chunk.fill(f64::NAN),
            }
        }
        Ok(())
    })
}

/// Mean absolute change of predicted surfaces between adjacent slices.
#[no_mangle]
pub unsafe extern "C" fn olseg_model_consistency(
    model: *const OlsegModel,
    vol: *const OlsegVolume,
    out: *mut f64,
) -> OlsegStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let v = &non_null(vol, "volume")?.0;
        let pv = PreparedVolume::new("volume", v.clone(), None, &m.config.preprocess_config())?;
        let score = harness::consistency(&m.params, &pv)?;
        *non_null_mut(out, "out")? = score;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn olseg_model_free(model: *mut OlsegModel) {
    free(model)
}

// ---- metrics ----

unsafe fn metric_args<'a>(
    pred: *const f64,
    gt: *const f64,
    valid: *const u8,
    n: usize,
) -> Result<(&'a [f64], &'a [f64], Vec<bool>), Fail> {
    Ok((
        slice(pred, n, "pred")?,
        slice(gt, n, "gt")?,
        slice(valid, n, "valid")?.iter().map(|&v| v != 0).collect(),
    ))
}

/// Mean absolute distance over columns with `valid[i] != 0`.
#[no_mangle]
pub unsafe extern "C" fn olseg_mad(
    pred: *const f64,
    gt: *const f64,
    valid: *const u8,
    n: usize,
    out: *mut f64,
) -> OlsegStatus {
    guard(|| {
        let (p, g, v) = metric_args(pred, gt, valid, n)?;
        *non_null_mut(out, "out")? = metrics::mad(p, g, &v)?;
        Ok(())
    })
}

/// Root mean squared distance over columns with `valid[i] != 0`.
#[no_mangle]
pub unsafe extern "C" fn olseg_rmse(
    pred: *const f64,
    gt: *const f64,
    valid: *const u8,
    n: usize,
    out: *mut f64,
) -> OlsegStatus {
    guard(|| {
        let (p, g, v) = metric_args(pred, gt, valid, n)?;
        *non_null_mut(out, "out")? = metrics::rmse(p, g, &v)?;
        Ok(())
    })
}
