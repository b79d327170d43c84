//! C ABI over `svam-core`.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every fallible call returns an [`SvamStatus`]; on failure the
//! message is available from [`svam_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use svam::inference::{self, Pipeline};
use svam::metrics;
use svam::model::{self, ModelConfig, ModelParams, Variant, WidthScale};
use svam::training;
use svam::{Error, SaliencyMap, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvamVariant {
    /// Encoder, top-down decoder and refinement.
    Full = 0,
    /// Encoder and bottom-up head.
    Light = 1,
}

impl From<SvamVariant> for Variant {
    fn from(v: SvamVariant) -> Self {
        match v {
            SvamVariant::Full => Variant::Full,
            SvamVariant::Light => Variant::Light,
        }
    }
}

/// Per-image scores.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SvamMetrics {
    pub mae: f64,
    pub s_measure: f64,
    pub f_beta_max: f64,
}

/// Network configuration and parameters.
pub struct SvamModel {
    config: ModelConfig,
    params: ModelParams,
}

/// Decoupled inference pipeline.
pub struct SvamPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SvamStatus {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownParameter(_) => SvamStatus::InvalidArgument,
        Error::Io { .. } => SvamStatus::Io,
        Error::WeightFormat(_) | Error::Image { .. } | Error::Dataset(_) => SvamStatus::Format,
        Error::ShapeMismatch { .. } | Error::InvalidShape { .. } | Error::NonScalarLoss(_) => SvamStatus::Shape,
        Error::NonFinite { .. } | Error::MissingGradient(_) => SvamStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), SvamStatus>) -> SvamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SvamStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            SvamStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, SvamStatus>;
}

impl<T> OrStatus<T> for svam::Result<T> {
    fn or_status(self) -> Result<T, SvamStatus> {
        self.map_err(|e| {
            set_error(e.to_string());
            status_of(&e)
        })
    }
}

fn invalid(msg: &str) -> SvamStatus {
    set_error(msg.to_string());
    SvamStatus::InvalidArgument
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SvamStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(SvamStatus::NullPointer);
    }
    Ok(&*p)
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SvamStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(SvamStatus::NullPointer);
    }
    Ok(&mut *p)
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, SvamStatus> {
    if p.is_null() {
        set_error("path is null".into());
        return Err(SvamStatus::NullPointer);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], SvamStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(SvamStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn config(input_size: usize, width_num: u32, width_den: u32) -> Result<ModelConfig, SvamStatus> {
    let cfg = ModelConfig {
        input_size,
        width_scale: WidthScale::new(width_num, width_den).or_status()?,
        ..ModelConfig::default()
    };
    cfg.validate().or_status()?;
    Ok(cfg)
}

fn boxed<T>(v: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(v));
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn svam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Freshly initialized network with every head enabled. The width scale is
/// `width_num / width_den`.
///
/// # Safety
/// `out` must be a valid pointer to write a handle into.
#[no_mangle]
pub unsafe extern "C" fn svam_model_new(
    input_size: usize,
    width_num: u32,
    width_den: u32,
    seed: u64,
    out: *mut *mut SvamModel,
) -> SvamStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = config(input_size, width_num, width_den)?;
        let params = model::build_model(&cfg, seed).or_status()?;
        boxed(SvamModel { config: cfg, params }, out);
        Ok(())
    })
}

/// Loads a weight file. Head switches follow the modules stored in the file;
/// geometry must match the given size and width.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn svam_model_load(
    path: *const c_char,
    input_size: usize,
    width_num: u32,
    width_den: u32,
    out: *mut *mut SvamModel,
) -> SvamStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path)?;
        let base = config(input_size, width_num, width_den)?;
        let loaded: ModelParams = training::import_weights(&path).or_status()?;
        let cfg = model::heads_of(&base, &loaded).or_status()?;
        let mut params = model::build_model(&cfg, 0).or_status()?;
        training::load_into(&mut params, &loaded).or_status()?;
        if params.len() != loaded.len() {
            set_error(format!("{}: file lacks {} tensors", path.display(), params.len() - loaded.len()));
            return Err(SvamStatus::Format);
        }
        boxed(SvamModel { config: cfg, params }, out);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn svam_model_save(model: *const SvamModel, path: *const c_char) -> SvamStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let path = path_arg(path)?;
        training::export_weights(&m.params, &path).or_status()
    })
}

/// Trainable scalars used by `variant`.
///
/// # Safety
/// `model` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn svam_model_param_count(
    model: *const SvamModel,
    variant: SvamVariant,
    out: *mut usize,
) -> SvamStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *out_ptr(out, "out")? = model::parameter_count(&m.params, variant.into());
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn svam_model_free(model: *mut SvamModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Pipeline holding a copy of the parameters `variant` needs. The model may
/// be freed afterwards.
///
/// # Safety
/// `model` must come from this library and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn svam_pipeline_new(
    model: *const SvamModel,
    variant: SvamVariant,
    out: *mut *mut SvamPipeline,
) -> SvamStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let out = out_ptr(out, "out")?;
        let inner = inference::decouple(&m.params, &m.config, variant.into()).or_status()?;
        boxed(SvamPipeline { inner }, out);
        Ok(())
    })
}

/// Side of the square input the pipeline expects.
///
/// # Safety
/// `pipeline` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn svam_pipeline_input_size(pipeline: *const SvamPipeline) -> usize {
    pipeline.as_ref().map_or(0, |p| p.inner.input_size())
}

/// Saliency map for one `S×S` RGB image in `[0, 1]`, row-major with
/// interleaved channels (`3·S·S` floats). Writes `S·S` values to `out`.
///
/// # Safety
/// `rgb` must hold `rgb_len` floats and `out` room for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn svam_pipeline_predict(
    pipeline: *const SvamPipeline,
    rgb: *const f32,
    rgb_len: usize,
    out: *mut f32,
    out_len: usize,
) -> SvamStatus {
    guard(|| {
        let p = deref(pipeline, "pipeline")?;
        let s = p.inner.input_size();
        if rgb_len != s * s * 3 || out_len != s * s {
            return Err(invalid(&format!(
                "expected {} input and {} output floats for a {s}x{s} pipeline",
                s * s * 3,
                s * s
            )));
        }
        let input = slice(rgb, rgb_len, "rgb")?;
        if out.is_null() {
            set_error("out is null".into());
            return Err(SvamStatus::NullPointer);
        }
        let x = Tensor::from_vec([s, s, 3], input.to_vec()).or_status()?;
        let map = p.inner.predict(&x).or_status()?;
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (d, &v) in dst.iter_mut().zip(map.data()) {
            *d = v as f32;
        }
        Ok(())
    })
}

/// # Safety
/// `pipeline` must come from this library or be null, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn svam_pipeline_free(pipeline: *mut SvamPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// MAE, S-measure and maximum F-measure of one prediction in `[0, 1]`
/// against a binary mask, both `height·width` row-major.
///
/// # Safety
/// `pred` and `gt` must each hold `height·width` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn svam_metrics(
    pred: *const f64,
    gt: *const f64,
    height: usize,
    width: usize,
    out: *mut SvamMetrics,
) -> SvamStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = height.checked_mul(width).ok_or_else(|| invalid("extent overflows"))?;
        let p = SaliencyMap::new(height, width, slice(pred, n, "pred")?.to_vec()).or_status()?;
        let g = SaliencyMap::new(height, width, slice(gt, n, "gt")?.to_vec()).or_status()?;
        *out = SvamMetrics {
            mae: metrics::mae(&p, &g).or_status()?,
            s_measure: metrics::s_measure(&p, &g).or_status()?,
            f_beta_max: metrics::image_pr(&p, &g).or_status()?.f_beta_max().0,
        };
        Ok(())
    })
}
