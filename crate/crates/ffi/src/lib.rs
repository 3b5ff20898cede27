//! C interface to the multidepth refiner.
//!
//! Every function returns an [`MdStatus`]; on failure a description is kept
//! per thread and read with [`md_last_error`]. Images are row-major, RGB
//! interleaved with values in [0, 1]; depth is in meters with zero, negative
//! or non-finite values marking holes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use multidepth::config::PipelineConfig;
use multidepth::formats::{load_weights, MaskSet};
use multidepth::geometry::unproject;
use multidepth::metrics::evaluate;
use multidepth::pipeline::refine;
use multidepth::rng::Rng;
use multidepth::rnet::{init_weights, RNetConfig, RNetWeights};
use multidepth::tensor::{CameraIntrinsics, DepthMap, ImageTensor};
use multidepth::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Numeric = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for MdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => MdStatus::Io,
            Error::Format { .. } => MdStatus::Format,
            Error::InvalidInput(_) => MdStatus::InvalidInput,
            Error::Shape(_) => MdStatus::Shape,
            Error::Numeric(_) => MdStatus::Numeric,
            Error::Config(_) => MdStatus::Config,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MdStatus, msg: impl Into<String>) -> MdStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), MdStatus>) -> MdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MdStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(MdStatus::Panic, format!("internal error: {msg}"))
        }
    }
}

fn check(r: multidepth::Result<()>) -> Result<(), MdStatus> {
    r.map_err(|e| fail(MdStatus::from(&e), e.to_string()))
}

fn lift<T>(r: multidepth::Result<T>) -> Result<T, MdStatus> {
    r.map_err(|e| fail(MdStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), MdStatus> {
    if p.is_null() {
        Err(fail(MdStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Opaque refiner: network weights plus pipeline settings.
pub struct MdRefiner {
    net: RNetWeights,
    cfg: PipelineConfig,
}

/// Metrics of one prediction against ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MdMetrics {
    pub delta_0_25: f64,
    pub delta_0_5: f64,
    pub delta_1: f64,
    pub si_log: f64,
    pub abs_rel: f64,
    pub rmse: f64,
    pub f_score: f64,
    pub valid_pixels: u64,
}

/// Pinhole intrinsics in pixels; pixel centers at integer coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MdIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl MdIntrinsics {
    fn to_core(self) -> Result<CameraIntrinsics, MdStatus> {
        lift(CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy))
    }
}

fn dims(height: usize, width: usize) -> Result<usize, MdStatus> {
    if height == 0 || width == 0 {
        return Err(fail(MdStatus::InvalidInput, "image size must be nonzero"));
    }
    height
        .checked_mul(width)
        .filter(|n| n.checked_mul(3).is_some())
        .ok_or_else(|| fail(MdStatus::InvalidInput, "image size overflows"))
}

unsafe fn depth_from(ptr: *const f32, height: usize, width: usize) -> Result<DepthMap, MdStatus> {
    let n = dims(height, width)?;
    let values = std::slice::from_raw_parts(ptr, n).to_vec();
    lift(DepthMap::from_values(height, width, values))
}

unsafe fn rgb_from(ptr: *const f32, height: usize, width: usize) -> Result<ImageTensor, MdStatus> {
    let n = dims(height, width)?;
    let interleaved = std::slice::from_raw_parts(ptr, n * 3);
    let mut planar = vec![0.0f32; n * 3];
    for (i, px) in interleaved.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * n + i] = px[c];
        }
    }
    lift(ImageTensor::new(3, height, width, planar))
}

unsafe fn masks_from(labels: *const u16, height: usize, width: usize) -> Result<Option<MaskSet>, MdStatus> {
    if labels.is_null() {
        return Ok(None);
    }
    let n = height * width;
    let labels = std::slice::from_raw_parts(labels, n);
    let mut ids: Vec<u16> = labels.iter().copied().filter(|l| *l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut set = MaskSet::new(height, width);
    for id in ids {
        check(set.push(format!("{id}"), labels.iter().map(|l| *l == id).collect()))?;
    }
    Ok(Some(set))
}

fn boxed(net: RNetWeights) -> *mut MdRefiner {
    let mut cfg = PipelineConfig::desk();
    cfg.rnet = net.config.clone();
    Box::into_raw(Box::new(MdRefiner { net, cfg }))
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn md_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn md_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Loads a trained network from an MDPT weights file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_refiner_load(path: *const c_char, out: *mut *mut MdRefiner) -> MdStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(MdStatus::InvalidInput, "path is not UTF-8"))?;
        let net = lift(load_weights(PathBuf::from(path)).and_then(|f| RNetWeights::from_weights_file(&f)))?;
        *out = boxed(net);
        Ok(())
    })
}

/// Creates the identity refiner (zero output layer), which leaves depth
/// unchanged when the input noise is disabled.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_refiner_new_identity(levels: u32, base_channels: u32, out: *mut *mut MdRefiner) -> MdStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = RNetConfig {
            levels: levels as usize,
            base_channels: base_channels as usize,
            ..RNetConfig::default()
        };
        let net = lift(init_weights(&cfg, &mut Rng::new(0)))?;
        *out = boxed(net);
        Ok(())
    })
}

/// Releases a refiner; NULL is ignored.
///
/// # Safety
/// `refiner` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn md_refiner_free(refiner: *mut MdRefiner) {
    if !refiner.is_null() {
        drop(Box::from_raw(refiner));
    }
}

/// Sets the number of refinement cycles (default 5; 0 returns the input).
///
/// # Safety
/// `refiner` must be a live refiner.
#[no_mangle]
pub unsafe extern "C" fn md_refiner_set_iterations(refiner: *mut MdRefiner, iterations: u32) -> MdStatus {
    guard(|| {
        non_null(refiner, "refiner")?;
        (*refiner).cfg.iterations = iterations as usize;
        Ok(())
    })
}

/// Sets the seed of the sampling and input-noise streams.
///
/// # Safety
/// `refiner` must be a live refiner.
#[no_mangle]
pub unsafe extern "C" fn md_refiner_set_seed(refiner: *mut MdRefiner, seed: u64) -> MdStatus {
    guard(|| {
        non_null(refiner, "refiner")?;
        (*refiner).cfg.seed = seed;
        Ok(())
    })
}

/// Sets the relative input-noise σ applied before every refinement (≥ 0).
///
/// # Safety
/// `refiner` must be a live refiner.
#[no_mangle]
pub unsafe extern "C" fn md_refiner_set_noise(refiner: *mut MdRefiner, sigma: f64) -> MdStatus {
    guard(|| {
        non_null(refiner, "refiner")?;
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(fail(MdStatus::InvalidInput, format!("noise sigma must be >= 0, got {sigma}")));
        }
        (*refiner).cfg.rnet.depth_noise_sigma = sigma;
        Ok(())
    })
}

/// Refines `depth` (height·width floats) guided by `rgb` (height·width·3
/// floats). `labels` is an optional instance label image (0 = unlabeled)
/// whose regions become segment samples. Holes in the result are written as 0.
///
/// # Safety
/// All non-null pointers must reference buffers of the stated sizes;
/// `out_depth` may alias neither input.
#[no_mangle]
pub unsafe extern "C" fn md_refine(
    refiner: *const MdRefiner,
    rgb: *const f32,
    depth: *const f32,
    labels: *const u16,
    height: usize,
    width: usize,
    out_depth: *mut f32,
) -> MdStatus {
    guard(|| {
        non_null(refiner, "refiner")?;
        non_null(rgb, "rgb")?;
        non_null(depth, "depth")?;
        non_null(out_depth, "out_depth")?;
        let r = &*refiner;
        let image = rgb_from(rgb, height, width)?;
        let d = depth_from(depth, height, width)?;
        let masks = masks_from(labels, height, width)?;
        let refined = lift(refine(&r.net, &image, &d, masks.as_ref(), &r.cfg))?;
        let out = std::slice::from_raw_parts_mut(out_depth, height * width);
        for ((o, v), ok) in out.iter_mut().zip(refined.depth()).zip(refined.valid()) {
            *o = if *ok { *v } else { 0.0 };
        }
        Ok(())
    })
}

/// Depth metrics of `pred` against `gt` (both height·width floats). `tau` is
/// the F-score distance threshold in meters.
///
/// # Safety
/// Buffers must hold height·width floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_evaluate(
    pred: *const f32,
    gt: *const f32,
    height: usize,
    width: usize,
    intrinsics: MdIntrinsics,
    tau: f64,
    out: *mut MdMetrics,
) -> MdStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(gt, "gt")?;
        non_null(out, "out")?;
        if tau.is_nan() || tau <= 0.0 {
            return Err(fail(MdStatus::InvalidInput, format!("tau must be > 0, got {tau}")));
        }
        let k = intrinsics.to_core()?;
        let p = depth_from(pred, height, width)?;
        let g = depth_from(gt, height, width)?;
        let m = lift(evaluate(&p, &g, &k, tau))?;
        *out = MdMetrics {
            delta_0_25: m.delta_at(0.25),
            delta_0_5: m.delta_at(0.5),
            delta_1: m.delta_at(1.0),
            si_log: m.si_log,
            abs_rel: m.abs_rel,
            rmse: m.rmse,
            f_score: m.f_score,
            valid_pixels: m.valid_pixel_count as u64,
        };
        Ok(())
    })
}

/// Un-projects valid pixels of `depth`, scaled by `scale`, into `out_xyz`
/// (x, y, z triples in row-major pixel order). `count` receives the number of
/// points; when `capacity` points do not fit nothing is written and
/// `BufferTooSmall` is returned, so a first call with capacity 0 sizes the buffer.
///
/// # Safety
/// `depth` must hold height·width floats, `out_xyz` 3·capacity doubles (may be
/// NULL when capacity is 0), `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn md_unproject(
    depth: *const f32,
    height: usize,
    width: usize,
    intrinsics: MdIntrinsics,
    scale: f64,
    out_xyz: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> MdStatus {
    guard(|| {
        non_null(depth, "depth")?;
        non_null(count, "count")?;
        let k = intrinsics.to_core()?;
        let d = depth_from(depth, height, width)?;
        let pc = lift(unproject(&d, &k, scale, None))?;
        *count = pc.len();
        if pc.len() > capacity {
            return Err(fail(
                MdStatus::BufferTooSmall,
                format!("{} points do not fit in {capacity}", pc.len()),
            ));
        }
        if pc.is_empty() {
            return Ok(());
        }
        non_null(out_xyz, "out_xyz")?;
        let out = std::slice::from_raw_parts_mut(out_xyz, pc.len() * 3);
        for (dst, p) in out.chunks_exact_mut(3).zip(pc.points()) {
            dst.copy_from_slice(p);
        }
        Ok(())
    })
}
