//! Exercise the C ABI from Rust: statuses, handles, and numeric agreement
//! with the underlying library.

use std::ffi::CString;
use std::ptr;

use came_ffi::*;

#[test]
fn version_and_error_message_are_readable() {
    let version = unsafe { std::ffi::CStr::from_ptr(came_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    let message = unsafe { std::ffi::CStr::from_ptr(came_last_error_message()) };
    assert!(message.to_str().is_ok());
}

#[test]
fn stats_match_direct_library_calls() {
    let xs = [0.1f64, 0.3, 0.5, 0.8];
    let ys = [0.2f64, 0.35, 0.62, 0.9];
    let mut r = 0.0f64;
    let status = unsafe { came_pearson(xs.as_ptr(), ys.as_ptr(), 4, &mut r) };
    assert_eq!(status, CameStatus::Ok);
    assert!((r - came::regress::pearson(&xs, &ys).unwrap()).abs() < 1e-15);

    let mut rho = 0.0f64;
    assert_eq!(
        unsafe { came_spearman(xs.as_ptr(), ys.as_ptr(), 4, &mut rho) },
        CameStatus::Ok
    );
    assert!((rho - 1.0).abs() < 1e-12);

    let mut err = 0.0f64;
    assert_eq!(
        unsafe { came_mae(xs.as_ptr(), ys.as_ptr(), 4, &mut err) },
        CameStatus::Ok
    );
    assert!((err - came::regress::mae(&xs, &ys).unwrap()).abs() < 1e-15);
}

#[test]
fn null_arguments_are_reported() {
    let mut out = 0.0f64;
    let status = unsafe { came_pearson(ptr::null(), ptr::null(), 3, &mut out) };
    assert_eq!(status, CameStatus::NullArgument);
    let message = unsafe { std::ffi::CStr::from_ptr(came_last_error_message()) };
    assert!(!message.to_bytes().is_empty());
}

#[test]
fn degenerate_variance_is_reported() {
    let xs = [0.5f64, 0.5, 0.5];
    let ys = [0.1f64, 0.2, 0.3];
    let mut out = 0.0f64;
    let status = unsafe { came_pearson(xs.as_ptr(), ys.as_ptr(), 3, &mut out) };
    assert_eq!(status, CameStatus::DegenerateInput);
}

#[test]
fn fit_predict_roundtrip_through_json() {
    let xs = [0.2f64, 0.4, 0.6, 0.8];
    let ys: Vec<f64> = xs.iter().map(|x| 0.9 * x + 0.05).collect();
    let mut fit: *mut CameFit = ptr::null_mut();
    let status =
        unsafe { came_fit_linear(xs.as_ptr(), ys.as_ptr(), 4, CameFitMethod::Huber, &mut fit) };
    assert_eq!(status, CameStatus::Ok);
    assert!(!fit.is_null());

    let mut slope = 0.0;
    let mut intercept = 0.0;
    assert_eq!(
        unsafe { came_fit_params(fit, &mut slope, &mut intercept, ptr::null_mut(), ptr::null_mut()) },
        CameStatus::Ok
    );
    assert!((slope - 0.9).abs() < 1e-8);
    assert!((intercept - 0.05).abs() < 1e-8);

    let mut value = 0.0;
    let mut clamped = 0i32;
    let mut extrapolated = 0i32;
    assert_eq!(
        unsafe { came_fit_predict(fit, 0.5, &mut value, &mut clamped, &mut extrapolated) },
        CameStatus::Ok
    );
    assert!((value - 0.5f64.mul_add(0.9, 0.05)).abs() < 1e-8);
    assert_eq!(clamped, 0);
    assert_eq!(extrapolated, 0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("fit.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { came_fit_save_json(fit, path.as_ptr()) }, CameStatus::Ok);
    let mut loaded: *mut CameFit = ptr::null_mut();
    assert_eq!(
        unsafe { came_fit_load_json(path.as_ptr(), &mut loaded) },
        CameStatus::Ok
    );
    let mut loaded_slope = 0.0;
    assert_eq!(
        unsafe {
            came_fit_params(
                loaded,
                &mut loaded_slope,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        },
        CameStatus::Ok
    );
    assert_eq!(loaded_slope, slope);

    unsafe {
        came_fit_free(fit);
        came_fit_free(loaded);
        came_fit_free(ptr::null_mut()); // null is a no-op
    }
}

#[test]
fn model_load_info_and_accuracies() {
    use came::cotrain::{save_checkpoint, CoTrainedModel, HyperParams, OptimizerSpec};
    let hp = HyperParams {
        arch: "tiny-mlp".to_string(),
        lambda: 0.001,
        tau: 0.07,
        batch_size: 4,
        epochs: 1,
        optimizer: OptimizerSpec::Adam { lr: 1e-3 },
        projection_dim: 8,
        seed: 3,
    };
    let model = CoTrainedModel::init(&hp, 1, 6, 6, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&model, &ckpt).unwrap();

    let path = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut handle: *mut CameModel = ptr::null_mut();
    assert_eq!(
        unsafe { came_model_load(path.as_ptr(), &mut handle) },
        CameStatus::Ok
    );
    let (mut k, mut c, mut h, mut w) = (0usize, 0usize, 0usize, 0usize);
    assert_eq!(
        unsafe { came_model_info(handle, &mut k, &mut c, &mut h, &mut w) },
        CameStatus::Ok
    );
    assert_eq!((k, c, h, w), (3, 1, 6, 6));

    // 8 images of 1x6x6, batch the contrastive metric at 4
    let n = 8usize;
    let mut images = vec![0.0f32; n * c * h * w];
    for (i, v) in images.iter_mut().enumerate() {
        *v = ((i as f32 * 0.37).sin() * 0.5 + 0.5).clamp(0.0, 1.0);
    }
    let labels: Vec<u32> = (0..n as u32).map(|i| i % 3).collect();
    let mut acc = -1.0f64;
    assert_eq!(
        unsafe {
            came_model_classification_accuracy(
                handle,
                images.as_ptr(),
                n,
                c,
                h,
                w,
                labels.as_ptr(),
                &mut acc,
            )
        },
        CameStatus::Ok
    );
    assert!((0.0..=1.0).contains(&acc));

    let mut con = -1.0f64;
    assert_eq!(
        unsafe {
            came_model_contrastive_accuracy(handle, images.as_ptr(), n, c, h, w, 4, 9, &mut con)
        },
        CameStatus::Ok
    );
    assert!((0.0..=1.0).contains(&con));

    let mut probs = vec![0.0f64; n * k];
    assert_eq!(
        unsafe { came_model_softmax(handle, images.as_ptr(), n, c, h, w, probs.as_mut_ptr()) },
        CameStatus::Ok
    );
    for row in probs.chunks(k) {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    // out-of-range pixels are rejected with a message
    let bad = vec![2.0f32; n * c * h * w];
    let status = unsafe {
        came_model_classification_accuracy(
            handle,
            bad.as_ptr(),
            n,
            c,
            h,
            w,
            labels.as_ptr(),
            &mut acc,
        )
    };
    assert_eq!(status, CameStatus::InvalidArgument);

    unsafe { came_model_free(handle) };
}
