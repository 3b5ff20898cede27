//! Wrapping the network as a depth refiner: input assembly (noise, log
//! normalization, reflective padding) and the residual-to-depth map.

use super::conv::Activation;
use super::{forward, RNet, RNetWeights, Scalar};
use crate::error::{ensure, Result};
use crate::resample::reflect_index;
use crate::rng::Rng;
use crate::tensor::{DepthMap, ImageTensor};

/// A padded 4-channel network input plus what is needed to undo the padding.
#[derive(Debug, Clone)]
pub struct NetworkInput<T> {
    pub tensor: Activation<T>,
    pub height: usize,
    pub width: usize,
}

/// Builds the RGB + normalized log-depth input.
///
/// With `sigma_d > 0` a log-normal factor `exp(η)`, `η ~ N(0, σ_d)`, is drawn
/// for every pixel in row-major order and applied before taking logs; the
/// normalizer is the median of the noisy valid depths. Invalid pixels get 0.
/// The result is padded on the bottom/right by reflection up to a multiple of
/// `multiple`.
pub fn network_input<T: Scalar>(
    rgb: &ImageTensor,
    depth: &DepthMap,
    sigma_d: f64,
    rng: Option<&mut Rng>,
    multiple: usize,
) -> Result<NetworkInput<T>> {
    let (h, w) = depth.dims();
    ensure!(rgb.dims() == (h, w), Shape, "rgb {:?} and depth {:?} differ", rgb.dims(), (h, w));
    ensure!(rgb.channels() == 1 || rgb.channels() == 3, Shape, "rgb must have 1 or 3 channels");
    ensure!(depth.valid_count() > 0, InvalidInput, "depth has no valid pixels to refine");
    let mut logd: Vec<f64> = depth.depth().iter().map(|d| f64::from(*d).ln()).collect();
    if sigma_d > 0.0 {
        let rng = rng.expect("an rng is required when depth noise is enabled");
        for v in logd.iter_mut() {
            *v += rng.normal(0.0, sigma_d);
        }
    }
    let mut noisy: Vec<f64> = logd
        .iter()
        .zip(depth.valid())
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| v.exp())
        .collect();
    let med = median_f64(&mut noisy).ln();

    let hp = h.div_ceil(multiple) * multiple;
    let wp = w.div_ceil(multiple) * multiple;
    let mut t = Activation::zeros(super::INPUT_CHANNELS, hp, wp);
    for y in 0..hp {
        let sy = reflect_index(y as isize, h);
        for x in 0..wp {
            let sx = reflect_index(x as isize, w);
            for c in 0..3 {
                let src_c = if rgb.channels() == 1 { 0 } else { c };
                t.data[(c * hp + y) * wp + x] = T::of(f64::from(rgb.get(src_c, sy, sx)));
            }
            let i = sy * w + sx;
            let v = if depth.valid()[i] { logd[i] - med } else { 0.0 };
            t.data[(3 * hp + y) * wp + x] = T::of(v);
        }
    }
    Ok(NetworkInput {
        tensor: t,
        height: h,
        width: w,
    })
}

pub(crate) fn median_f64(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Refined depth in f64 and the local derivative d(d̂)/dr (zero where clamped or invalid).
#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub d_depth_d_residual: Vec<f64>,
}

impl RefineOutput {
    pub fn to_depth_map(&self) -> DepthMap {
        let d = self.depth.iter().map(|v| *v as f32).collect();
        DepthMap::new(self.height, self.width, d, self.valid.clone()).expect("refined depth is finite and positive")
    }
}

/// `d̂ = d_in · exp(clamp(r, ±clamp))` on valid pixels, cropping the padded residual.
pub fn residual_to_depth<T: Scalar>(depth: &DepthMap, residual: &Activation<T>, clamp: f64) -> RefineOutput {
    let (h, w) = depth.dims();
    let mut out = RefineOutput {
        height: h,
        width: w,
        depth: vec![0.0; h * w],
        valid: depth.valid().to_vec(),
        d_depth_d_residual: vec![0.0; h * w],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !out.valid[i] {
                continue;
            }
            let r = residual.data[y * residual.w + x].as_f64();
            let rc = r.clamp(-clamp, clamp);
            let d = f64::from(depth.depth()[i]) * rc.exp();
            out.depth[i] = d;
            out.d_depth_d_residual[i] = if r.abs() < clamp { d } else { 0.0 };
        }
    }
    out
}

/// Gradient w.r.t. the padded residual from a gradient w.r.t. the refined depth.
pub fn residual_grad<T: Scalar>(out: &RefineOutput, grad_depth: &[f64], padded_h: usize, padded_w: usize) -> Activation<T> {
    let mut g = Activation::zeros(1, padded_h, padded_w);
    for y in 0..out.height {
        for x in 0..out.width {
            let i = y * out.width + x;
            g.data[y * padded_w + x] = T::of(grad_depth[i] * out.d_depth_d_residual[i]);
        }
    }
    g
}

/// Anything that maps (RGB, depth) to a refined depth without noise.
pub trait Refiner: Sync {
    fn refine_depth(&self, rgb: &ImageTensor, depth: &DepthMap) -> Result<DepthMap>;

    /// Refinement with log-normal input noise; refiners that ignore their
    /// depth input's noise fall back to [`Refiner::refine_depth`].
    fn refine_noisy(&self, rgb: &ImageTensor, depth: &DepthMap, sigma_d: f64, rng: &mut Rng) -> Result<DepthMap> {
        let _ = (sigma_d, rng);
        self.refine_depth(rgb, depth)
    }
}

/// Returns the input depth unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn refine_depth(&self, _rgb: &ImageTensor, depth: &DepthMap) -> Result<DepthMap> {
        ensure!(depth.valid_count() > 0, InvalidInput, "depth has no valid pixels to refine");
        Ok(depth.clone())
    }
}

impl<T: Scalar> RNet<T> {
    /// Full refinement in f64 precision past the network output.
    pub fn refine_output(&self, rgb: &ImageTensor, depth: &DepthMap, sigma_d: f64, rng: Option<&mut Rng>) -> Result<RefineOutput> {
        let input = network_input::<T>(rgb, depth, sigma_d, rng, self.config.size_multiple())?;
        let (r, _) = forward(self, &input.tensor);
        Ok(residual_to_depth(depth, &r, self.config.residual_clamp))
    }
}

impl RNetWeights {
    /// Refines `depth` with per-pixel log-normal input noise of σ `sigma_d`.
    pub fn refine(&self, rgb: &ImageTensor, depth: &DepthMap, sigma_d: f64, rng: &mut Rng) -> Result<DepthMap> {
        Ok(self.refine_output(rgb, depth, sigma_d, Some(rng))?.to_depth_map())
    }
}

impl<T: Scalar> Refiner for RNet<T> {
    fn refine_depth(&self, rgb: &ImageTensor, depth: &DepthMap) -> Result<DepthMap> {
        Ok(self.refine_output(rgb, depth, 0.0, None)?.to_depth_map())
    }

    fn refine_noisy(&self, rgb: &ImageTensor, depth: &DepthMap, sigma_d: f64, rng: &mut Rng) -> Result<DepthMap> {
        Ok(self.refine_output(rgb, depth, sigma_d, Some(rng))?.to_depth_map())
    }
}
