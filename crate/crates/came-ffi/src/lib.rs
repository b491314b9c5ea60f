//! C ABI for the evaluation toolkit: opaque handles, status codes, and a
//! thread-local last-error message. The header is generated by cbindgen at
//! build time into `include/came.h`.
//!
//! Ownership rules: every `*_new`/`*_load` hands out a handle the caller must
//! release with the matching `*_free`; all other pointers are borrowed for
//! the duration of the call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use came::cotrain::{
    classification_accuracy, contrastive_accuracy, load_checkpoint, CoTrainedModel,
};
use came::data::{ImageTensor, LabeledDataset};
use came::regress::{
    fit_linear, mae, pearson, predict, spearman, AccuracyPair, FitMethod, RegressorFit,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    DegenerateInput = 3,
    IoError = 4,
    Internal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl Into<String>) {
    let owned = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(owned.replace('\0', " ")).unwrap_or_default();
    });
}

/// The last error message on this thread; valid until the next failing call
/// on the same thread. Never null.
#[no_mangle]
pub extern "C" fn came_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn came_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque fitted regressor.
pub struct CameFit {
    inner: RegressorFit,
}

/// Opaque trained model loaded from a checkpoint.
pub struct CameModel {
    inner: CoTrainedModel,
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

fn write_out<T>(out: *mut T, value: T) -> CameStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return CameStatus::NullArgument;
    }
    unsafe { ptr::write(out, value) };
    CameStatus::Ok
}

/// Pearson correlation of two equal-length arrays.
///
/// # Safety
/// `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn came_pearson(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut f64,
) -> CameStatus {
    let (Some(xs), Some(ys)) = (slice_arg(xs, n), slice_arg(ys, n)) else {
        set_error("xs/ys must not be null");
        return CameStatus::NullArgument;
    };
    match pearson(xs, ys) {
        Ok(r) => write_out(out, r),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::DegenerateInput
        }
    }
}

/// Spearman rank correlation of two equal-length arrays.
///
/// # Safety
/// `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn came_spearman(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    out: *mut f64,
) -> CameStatus {
    let (Some(xs), Some(ys)) = (slice_arg(xs, n), slice_arg(ys, n)) else {
        set_error("xs/ys must not be null");
        return CameStatus::NullArgument;
    };
    match spearman(xs, ys) {
        Ok(rho) => write_out(out, rho),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::DegenerateInput
        }
    }
}

/// Mean absolute error between two equal-length arrays.
///
/// # Safety
/// `pred` and `truth` must point to `n` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn came_mae(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut f64,
) -> CameStatus {
    let (Some(pred), Some(truth)) = (slice_arg(pred, n), slice_arg(truth, n)) else {
        set_error("pred/truth must not be null");
        return CameStatus::NullArgument;
    };
    match mae(pred, truth) {
        Ok(v) => write_out(out, v),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::DegenerateInput
        }
    }
}

/// Fit method selector for [`came_fit_linear`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameFitMethod {
    Ols = 0,
    Huber = 1,
}

/// Fit `acc_cla = slope * acc_con + intercept` on `n` accuracy pairs
/// (fractions in [0, 1]). On success writes a heap handle into `out`.
///
/// # Safety
/// `acc_con`/`acc_cla` must point to `n` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn came_fit_linear(
    acc_con: *const f64,
    acc_cla: *const f64,
    n: usize,
    method: CameFitMethod,
    out: *mut *mut CameFit,
) -> CameStatus {
    let (Some(xs), Some(ys)) = (slice_arg(acc_con, n), slice_arg(acc_cla, n)) else {
        set_error("acc_con/acc_cla must not be null");
        return CameStatus::NullArgument;
    };
    let pairs: Vec<AccuracyPair> = xs
        .iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (&x, &y))| AccuracyPair {
            sample_set_id: i.to_string(),
            acc_con: x,
            acc_cla: y,
        })
        .collect();
    let fit_method = match method {
        CameFitMethod::Ols => FitMethod::Ols,
        CameFitMethod::Huber => FitMethod::Huber,
    };
    match fit_linear(&pairs, fit_method) {
        Ok(fit) => write_out(out, Box::into_raw(Box::new(CameFit { inner: fit }))),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::DegenerateInput
        }
    }
}

/// Release a fit handle. Null is a no-op.
///
/// # Safety
/// `fit` must be a handle from [`came_fit_linear`] (or null), not yet freed.
#[no_mangle]
pub unsafe extern "C" fn came_fit_free(fit: *mut CameFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Read slope, intercept and the correlation statistics of a fit. Any output
/// pointer may be null to skip that field.
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn came_fit_params(
    fit: *const CameFit,
    slope: *mut f64,
    intercept: *mut f64,
    pearson_r: *mut f64,
    spearman_rho: *mut f64,
) -> CameStatus {
    let Some(fit) = fit.as_ref() else {
        set_error("fit handle is null");
        return CameStatus::NullArgument;
    };
    if !slope.is_null() {
        ptr::write(slope, fit.inner.slope);
    }
    if !intercept.is_null() {
        ptr::write(intercept, fit.inner.intercept);
    }
    if !pearson_r.is_null() {
        ptr::write(pearson_r, fit.inner.pearson_r);
    }
    if !spearman_rho.is_null() {
        ptr::write(spearman_rho, fit.inner.spearman_rho);
    }
    CameStatus::Ok
}

/// Predict classification accuracy from contrastive accuracy. The prediction
/// is clamped to [0, 1]; `clamped`/`extrapolated` flags may be null.
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn came_fit_predict(
    fit: *const CameFit,
    acc_con: f64,
    out_value: *mut f64,
    out_clamped: *mut i32,
    out_extrapolated: *mut i32,
) -> CameStatus {
    let Some(fit) = fit.as_ref() else {
        set_error("fit handle is null");
        return CameStatus::NullArgument;
    };
    let prediction = predict(&fit.inner, acc_con);
    if !out_clamped.is_null() {
        ptr::write(out_clamped, prediction.clamped as i32);
    }
    if !out_extrapolated.is_null() {
        ptr::write(out_extrapolated, prediction.extrapolated as i32);
    }
    write_out(out_value, prediction.value)
}

/// Serialize a fit to a JSON file.
///
/// # Safety
/// `fit` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn came_fit_save_json(
    fit: *const CameFit,
    path: *const c_char,
) -> CameStatus {
    let Some(fit) = fit.as_ref() else {
        set_error("fit handle is null");
        return CameStatus::NullArgument;
    };
    let Some(path) = cstr_path(path) else {
        return CameStatus::InvalidArgument;
    };
    let json = match serde_json::to_string_pretty(&fit.inner) {
        Ok(json) => json,
        Err(e) => {
            set_error(e.to_string());
            return CameStatus::Internal;
        }
    };
    match std::fs::write(Path::new(&path), json) {
        Ok(()) => CameStatus::Ok,
        Err(e) => {
            set_error(e.to_string());
            CameStatus::IoError
        }
    }
}

/// Load a fit previously saved with [`came_fit_save_json`].
///
/// # Safety
/// `path` must be NUL-terminated UTF-8; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn came_fit_load_json(
    path: *const c_char,
    out: *mut *mut CameFit,
) -> CameStatus {
    let Some(path) = cstr_path(path) else {
        return CameStatus::InvalidArgument;
    };
    let text = match std::fs::read_to_string(Path::new(&path)) {
        Ok(text) => text,
        Err(e) => {
            set_error(e.to_string());
            return CameStatus::IoError;
        }
    };
    match serde_json::from_str::<RegressorFit>(&text) {
        Ok(fit) => write_out(out, Box::into_raw(Box::new(CameFit { inner: fit }))),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::InvalidArgument
        }
    }
}

unsafe fn cstr_path(path: *const c_char) -> Option<String> {
    if path.is_null() {
        set_error("path is null");
        return None;
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Some(s.to_string()),
        Err(e) => {
            set_error(format!("path is not UTF-8: {e}"));
            None
        }
    }
}

/// Load a trained model from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated UTF-8; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn came_model_load(
    path: *const c_char,
    out: *mut *mut CameModel,
) -> CameStatus {
    let Some(path) = cstr_path(path) else {
        return CameStatus::InvalidArgument;
    };
    match load_checkpoint(Path::new(&path)) {
        Ok(model) => write_out(out, Box::into_raw(Box::new(CameModel { inner: model }))),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::IoError
        }
    }
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be a handle from [`came_model_load`] (or null), not yet freed.
#[no_mangle]
pub unsafe extern "C" fn came_model_free(model: *mut CameModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Basic model geometry: class count, expected input channels/height/width.
/// Any output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn came_model_info(
    model: *const CameModel,
    num_classes: *mut usize,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> CameStatus {
    let Some(model) = model.as_ref() else {
        set_error("model handle is null");
        return CameStatus::NullArgument;
    };
    if !num_classes.is_null() {
        ptr::write(num_classes, model.inner.num_classes);
    }
    if !channels.is_null() {
        ptr::write(channels, model.inner.arch.in_channels);
    }
    if !height.is_null() {
        ptr::write(height, model.inner.arch.height);
    }
    if !width.is_null() {
        ptr::write(width, model.inner.arch.width);
    }
    CameStatus::Ok
}

unsafe fn images_from_raw(
    images: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<Vec<ImageTensor>, CameStatus> {
    let Some(data) = slice_arg(images, n * c * h * w) else {
        set_error("images pointer is null");
        return Err(CameStatus::NullArgument);
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * c * h * w;
        let arr = ndarray::Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
            data[base + ci * h * w + y * w + x]
        });
        match ImageTensor::new(arr) {
            Ok(img) => out.push(img),
            Err(e) => {
                set_error(format!("image {i}: {e}"));
                return Err(CameStatus::InvalidArgument);
            }
        }
    }
    Ok(out)
}

/// Classification accuracy of the model on `n` images (NCHW f32 in [0, 1])
/// with labels in [0, num_classes).
///
/// # Safety
/// `images` must hold `n*c*h*w` floats, `labels` `n` entries; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn came_model_classification_accuracy(
    model: *const CameModel,
    images: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    labels: *const u32,
    out: *mut f64,
) -> CameStatus {
    let Some(model) = model.as_ref() else {
        set_error("model handle is null");
        return CameStatus::NullArgument;
    };
    let tensors = match images_from_raw(images, n, c, h, w) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let Some(labels) = slice_arg(labels, n) else {
        set_error("labels pointer is null");
        return CameStatus::NullArgument;
    };
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    if labels.iter().any(|&l| l >= model.inner.num_classes) {
        set_error("label out of range");
        return CameStatus::InvalidArgument;
    }
    let set = match LabeledDataset::new("ffi", tensors, labels) {
        Ok(set) => set,
        Err(e) => {
            set_error(e.to_string());
            return CameStatus::InvalidArgument;
        }
    };
    match classification_accuracy(&model.inner, &set) {
        Ok(acc) => write_out(out, acc),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::InvalidArgument
        }
    }
}

/// Contrastive accuracy of the model on `n` unlabeled images (NCHW f32),
/// evaluated in batches of `batch_n` under the model's default view policy.
///
/// # Safety
/// `images` must hold `n*c*h*w` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn came_model_contrastive_accuracy(
    model: *const CameModel,
    images: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    batch_n: usize,
    seed: u64,
    out: *mut f64,
) -> CameStatus {
    let Some(model) = model.as_ref() else {
        set_error("model handle is null");
        return CameStatus::NullArgument;
    };
    let tensors = match images_from_raw(images, n, c, h, w) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let policy = model.inner.default_policy();
    match contrastive_accuracy(&model.inner, &tensors, batch_n, &policy, seed) {
        Ok(acc) => write_out(out, acc),
        Err(e) => {
            set_error(e.to_string());
            CameStatus::InvalidArgument
        }
    }
}

/// Softmax probabilities for `n` images; writes `n * num_classes` doubles
/// row-major into `out_probs`.
///
/// # Safety
/// `images` must hold `n*c*h*w` floats and `out_probs` room for
/// `n * num_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn came_model_softmax(
    model: *const CameModel,
    images: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out_probs: *mut f64,
) -> CameStatus {
    let Some(model) = model.as_ref() else {
        set_error("model handle is null");
        return CameStatus::NullArgument;
    };
    let tensors = match images_from_raw(images, n, c, h, w) {
        Ok(t) => t,
        Err(status) => return status,
    };
    if out_probs.is_null() {
        set_error("out_probs is null");
        return CameStatus::NullArgument;
    }
    let refs: Vec<&ImageTensor> = tensors.iter().collect();
    match model.inner.softmax_probs(&refs) {
        Ok(probs) => {
            let k = probs.ncols();
            let out = std::slice::from_raw_parts_mut(out_probs, n * k);
            for (i, row) in probs.rows().into_iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    out[i * k + j] = v;
                }
            }
            CameStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            CameStatus::InvalidArgument
        }
    }
}
