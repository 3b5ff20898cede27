use std::ffi::{CStr, CString};
use std::ptr;

use multidepth_ffi::*;

fn last_error() -> String {
    let p = md_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn k() -> MdIntrinsics {
    MdIntrinsics { fx: 20.0, fy: 20.0, cx: 7.5, cy: 5.5 }
}

fn scene(h: usize, w: usize) -> (Vec<f32>, Vec<f32>, Vec<u16>) {
    let rgb = (0..h * w * 3).map(|i| (i % 7) as f32 / 7.0).collect();
    let depth = (0..h * w).map(|i| 1.5 + (i % w) as f32 * 0.05).collect();
    let labels = (0..h * w).map(|i| if i % w < w / 2 { 1 } else { 2 }).collect();
    (rgb, depth, labels)
}

#[test]
fn identity_refiner_without_noise_returns_input() {
    let (h, w) = (12, 16);
    let (rgb, depth, labels) = scene(h, w);
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(md_refiner_new_identity(2, 4, &mut r), MdStatus::Ok);
        assert_eq!(md_refiner_set_noise(r, 0.0), MdStatus::Ok);
        assert_eq!(md_refiner_set_iterations(r, 3), MdStatus::Ok);
        let mut out = vec![-1.0f32; h * w];
        assert_eq!(md_refine(r, rgb.as_ptr(), depth.as_ptr(), labels.as_ptr(), h, w, out.as_mut_ptr()), MdStatus::Ok);
        assert_eq!(out, depth);
        md_refiner_free(r);
    }
}

#[test]
fn holes_come_back_as_zero() {
    let (h, w) = (8, 8);
    let (rgb, mut depth, _) = scene(h, w);
    depth[5] = 0.0;
    depth[9] = f32::NAN;
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(md_refiner_new_identity(2, 4, &mut r), MdStatus::Ok);
        let mut out = vec![7.0f32; h * w];
        assert_eq!(md_refine(r, rgb.as_ptr(), depth.as_ptr(), ptr::null(), h, w, out.as_mut_ptr()), MdStatus::Ok);
        assert_eq!((out[5], out[9]), (0.0, 0.0));
        assert!(out.iter().enumerate().all(|(i, v)| i == 5 || i == 9 || *v > 0.0));
        md_refiner_free(r);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(md_refiner_new_identity(0, 4, &mut r), MdStatus::Config);
        assert!(last_error().contains("levels"), "{}", last_error());
        assert_eq!(md_refiner_new_identity(2, 4, ptr::null_mut()), MdStatus::NullPointer);
        assert_eq!(last_error(), "out is null");

        let missing = CString::new("/nonexistent/w.mdpt").unwrap();
        assert_eq!(md_refiner_load(missing.as_ptr(), &mut r), MdStatus::Io);
        assert!(last_error().contains("/nonexistent/w.mdpt"));

        assert_eq!(md_refiner_new_identity(2, 4, &mut r), MdStatus::Ok);
        assert!(md_last_error().is_null(), "success clears the message");
        let (rgb, depth, _) = scene(4, 4);
        let mut out = vec![0.0f32; 16];
        assert_eq!(md_refine(r, rgb.as_ptr(), depth.as_ptr(), ptr::null(), 0, 4, out.as_mut_ptr()), MdStatus::InvalidInput);
        assert_eq!(md_refiner_set_noise(r, -1.0), MdStatus::InvalidInput);
        md_refiner_free(r);
        md_refiner_free(ptr::null_mut());
    }
}

#[test]
fn load_trained_weights() {
    use multidepth::formats::save_weights;
    use multidepth::rng::Rng;
    use multidepth::rnet::{init_random_weights, RNetConfig};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.mdpt");
    let cfg = RNetConfig { levels: 2, base_channels: 4, ..Default::default() };
    save_weights(&init_random_weights(&cfg, 0.1, &mut Rng::new(1)).unwrap().to_weights_file(), &path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let (h, w) = (8, 12);
    let (rgb, depth, _) = scene(h, w);
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(md_refiner_load(c.as_ptr(), &mut r), MdStatus::Ok);
        md_refiner_set_seed(r, 4);
        let mut a = vec![0.0f32; h * w];
        let mut b = vec![0.0f32; h * w];
        assert_eq!(md_refine(r, rgb.as_ptr(), depth.as_ptr(), ptr::null(), h, w, a.as_mut_ptr()), MdStatus::Ok);
        assert_eq!(md_refine(r, rgb.as_ptr(), depth.as_ptr(), ptr::null(), h, w, b.as_mut_ptr()), MdStatus::Ok);
        assert_eq!(a, b, "same seed, same result");
        assert_ne!(a, depth, "a non-identity net changes depth");
        md_refiner_free(r);
    }
}

#[test]
fn evaluate_constant_ratio() {
    let (h, w) = (6, 8);
    let gt = vec![2.0f32; h * w];
    let pred: Vec<f32> = gt.iter().map(|v| v * 1.1).collect();
    let mut m = MdMetrics::default();
    unsafe {
        assert_eq!(md_evaluate(pred.as_ptr(), gt.as_ptr(), h, w, k(), 0.25, &mut m), MdStatus::Ok);
    }
    // ratio 1.1: outside 1.25^0.25, inside 1.25^0.5
    assert_eq!((m.delta_0_25, m.delta_0_5, m.delta_1), (0.0, 1.0, 1.0));
    assert!((m.abs_rel - 0.1).abs() < 1e-6);
    assert!((m.rmse - 0.2).abs() < 1e-6);
    assert!(m.si_log.abs() < 1e-12);
    assert_eq!(m.valid_pixels, (h * w) as u64);
    unsafe {
        assert_eq!(md_evaluate(pred.as_ptr(), gt.as_ptr(), h, w, k(), 0.0, &mut m), MdStatus::InvalidInput);
    }
}

#[test]
fn unproject_sizes_then_fills() {
    let (h, w) = (4, 5);
    let mut depth = vec![2.0f32; h * w];
    depth[0] = 0.0;
    let mut n = 0usize;
    unsafe {
        assert_eq!(md_unproject(depth.as_ptr(), h, w, k(), 1.0, ptr::null_mut(), 0, &mut n), MdStatus::BufferTooSmall);
        assert_eq!(n, h * w - 1);
        let mut xyz = vec![0.0f64; n * 3];
        assert_eq!(md_unproject(depth.as_ptr(), h, w, k(), 2.0, xyz.as_mut_ptr(), n, &mut n), MdStatus::Ok);
        // pixel (1, 0) is the first valid one: x = (1 − cx)·z/fx
        let z = 4.0;
        assert!((xyz[0] - (1.0 - 7.5) * z / 20.0).abs() < 1e-12);
        assert!((xyz[1] - (0.0 - 5.5) * z / 20.0).abs() < 1e-12);
        assert_eq!(xyz[2], z);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(md_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
