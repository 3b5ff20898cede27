//! Inference-side orchestration: fitting inputs to the working size, running
//! refinement cycles, and the consistency-probe analysis.

use serde::{Deserialize, Serialize};

use crate::config::{FitPolicy, InputConfig, PipelineConfig, ProbeConfig};
use crate::error::{ensure, Result};
use crate::formats::MaskSet;
use crate::metrics::{pud_branch_means, pud_probe, subsample_probe, ProbeMap};
use crate::mrcm::{run_iteration, IterationOutput};
use crate::resample::{resize_bilinear, resize_depth};
use crate::rng::Rng;
use crate::rnet::Refiner;
use crate::sampling::shuffle_depth;
use crate::tensor::{CameraIntrinsics, DepthMap, ImageTensor};

/// Inputs at the working resolution.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub rgb: ImageTensor,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub masks: Option<MaskSet>,
}

#[allow(clippy::too_many_arguments)]
fn resize_mask(mask: &[bool], h: usize, w: usize, x0: usize, y0: usize, cw: usize, ch: usize, oh: usize, ow: usize) -> Vec<bool> {
    let mut out = vec![false; oh * ow];
    for y in 0..oh {
        let sy = y0 + ((y as f64 + 0.5) * ch as f64 / oh as f64) as usize;
        for x in 0..ow {
            let sx = x0 + ((x as f64 + 0.5) * cw as f64 / ow as f64) as usize;
            out[y * ow + x] = mask[sy.min(h - 1) * w + sx.min(w - 1)];
        }
    }
    out
}

/// Resamples the (x0, y0, cw, ch) window of every mask to `size`, pasted at
/// `offset` into a `canvas`-sized grid. Masks that vanish are dropped.
fn fit_masks(
    masks: &MaskSet,
    window: (usize, usize, usize, usize),
    size: (usize, usize),
    canvas: (usize, usize),
    offset: (usize, usize),
) -> Result<MaskSet> {
    let (x0, y0, cw, ch) = window;
    let (oh, ow) = size;
    let (th, tw) = canvas;
    let mut out = MaskSet::new(th, tw);
    for (id, m) in masks.iter() {
        let small = resize_mask(m, masks.height(), masks.width(), x0, y0, cw, ch, oh, ow);
        let mut full = vec![false; th * tw];
        for y in 0..oh {
            full[(y + offset.1) * tw + offset.0..][..ow].copy_from_slice(&small[y * ow..(y + 1) * ow]);
        }
        if full.iter().any(|v| *v) {
            out.push(id.to_string(), full)?;
        }
    }
    Ok(out)
}

/// Brings the inputs to the configured working size. Native size passes through untouched.
pub fn fit_inputs(
    rgb: &ImageTensor,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    masks: Option<&MaskSet>,
    input: &InputConfig,
) -> Result<Fitted> {
    ensure!(
        rgb.dims() == depth.dims(),
        Shape,
        "image is {:?} but depth is {:?}",
        rgb.dims(),
        depth.dims()
    );
    if let Some(m) = masks {
        ensure!((m.height(), m.width()) == depth.dims(), Shape, "masks do not match the depth size");
    }
    let (h, w) = depth.dims();
    let [th, tw] = match input.size {
        Some(s) if s != [h, w] => s,
        _ => {
            return Ok(Fitted {
                rgb: rgb.clone(),
                depth: depth.clone(),
                intrinsics: *k,
                masks: masks.cloned(),
            })
        }
    };
    match input.fit {
        FitPolicy::CenterCrop => {
            // largest centered window with the target aspect ratio
            let (cw, ch) = if h * tw > w * th {
                (w, ((w * th) as f64 / tw as f64).round().max(1.0) as usize)
            } else {
                (((h * tw) as f64 / th as f64).round().max(1.0) as usize, h)
            };
            let (x0, y0) = ((w - cw) / 2, (h - ch) / 2);
            let rgb = resize_bilinear(&rgb.crop(x0, y0, cw, ch)?, th, tw)?;
            let depth = resize_depth(&depth.crop(x0, y0, cw, ch)?, th, tw)?;
            let intrinsics = k.cropped(x0 as f64, y0 as f64).scaled(tw as f64 / cw as f64, th as f64 / ch as f64);
            let masks = masks
                .map(|m| fit_masks(m, (x0, y0, cw, ch), (th, tw), (th, tw), (0, 0)))
                .transpose()?;
            Ok(Fitted { rgb, depth, intrinsics, masks })
        }
        FitPolicy::Letterbox => {
            let scale = (th as f64 / h as f64).min(tw as f64 / w as f64);
            let oh = ((h as f64 * scale).round() as usize).clamp(1, th);
            let ow = ((w as f64 * scale).round() as usize).clamp(1, tw);
            let (px, py) = ((tw - ow) / 2, (th - oh) / 2);
            let small_rgb = resize_bilinear(rgb, oh, ow)?;
            let small_depth = resize_depth(depth, oh, ow)?;
            let c = rgb.channels();
            let mut data = vec![0.0f32; c * th * tw];
            for ch in 0..c {
                let plane = small_rgb.plane(ch);
                for y in 0..oh {
                    data[(ch * th + y + py) * tw + px..][..ow].copy_from_slice(&plane[y * ow..(y + 1) * ow]);
                }
            }
            let mut d = vec![0.0f32; th * tw];
            let mut v = vec![false; th * tw];
            for y in 0..oh {
                let dst = (y + py) * tw + px;
                d[dst..dst + ow].copy_from_slice(&small_depth.depth()[y * ow..(y + 1) * ow]);
                v[dst..dst + ow].copy_from_slice(&small_depth.valid()[y * ow..(y + 1) * ow]);
            }
            let intrinsics = k
                .scaled(ow as f64 / w as f64, oh as f64 / h as f64)
                .cropped(-(px as f64), -(py as f64));
            let masks = masks
                .map(|m| fit_masks(m, (0, 0, w, h), (oh, ow), (th, tw), (px, py)))
                .transpose()?;
            Ok(Fitted {
                rgb: ImageTensor::new(c, th, tw, data)?,
                depth: DepthMap::new(th, tw, d, v)?,
                intrinsics,
                masks,
            })
        }
    }
}

/// Noise stream of refinement cycle `iteration` (0-based, counted from the
/// ingested depth). Keying on the absolute index lets a run be split and resumed.
pub fn iteration_rng(seed: u64, iteration: usize) -> Rng {
    Rng::with_stream(seed ^ 0x6d75_6c74_6964_6570, iteration as u64)
}

/// Runs cycles `first..first + count` starting from `depth`, calling `on_iter`
/// with the 1-based cycle number after each. `count = 0` returns `depth` unchanged.
#[allow(clippy::too_many_arguments)]
pub fn refine_cycles(
    refiner: &dyn Refiner,
    rgb: &ImageTensor,
    depth: &DepthMap,
    masks: Option<&MaskSet>,
    cfg: &PipelineConfig,
    first: usize,
    count: usize,
    mut on_iter: impl FnMut(usize, &IterationOutput) -> Result<()>,
) -> Result<DepthMap> {
    let mut current = depth.clone();
    for t in first..first + count {
        let mut rng = iteration_rng(cfg.seed, t);
        let out = run_iteration(
            refiner,
            rgb,
            &current,
            masks,
            &cfg.sampler,
            &cfg.mrcm,
            cfg.rnet.depth_noise_sigma,
            &mut rng,
        )?;
        for w in &out.warnings {
            log::warn!("iteration {}: {w}", t + 1);
        }
        on_iter(t + 1, &out)?;
        current = out.depth;
    }
    Ok(current)
}

/// Runs the configured number of cycles from the start.
pub fn refine(
    refiner: &dyn Refiner,
    rgb: &ImageTensor,
    depth: &DepthMap,
    masks: Option<&MaskSet>,
    cfg: &PipelineConfig,
) -> Result<DepthMap> {
    refine_cycles(refiner, rgb, depth, masks, cfg, 0, cfg.iterations, |_, _| Ok(()))
}

/// Result of probing one set of unshuffle-branch predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PudAnalysis {
    pub s: usize,
    /// Edge-forgiven mean L1 over the whole image.
    pub mean: f64,
    /// Edge-forgiven mean L1 per branch, in unshuffle order.
    pub branch_means: Vec<f64>,
    pub forgiven_pixels: usize,
    #[serde(skip)]
    pub map: Option<ProbeMap>,
}

/// Recomposes branch predictions into a full-size map. Either one already
/// recomposed map or s² branch maps (in unshuffle order) are accepted; the
/// recomposed grid covers the centered divisible region and is padded with
/// invalid pixels to `full_dims`.
pub fn recompose_pud(branches: &[DepthMap], s: usize, full_dims: (usize, usize)) -> Result<DepthMap> {
    ensure!(s >= 1, InvalidInput, "s must be >= 1");
    if branches.len() == 1 && branches[0].dims() == full_dims {
        return Ok(branches[0].clone());
    }
    ensure!(
        branches.len() == s * s,
        InvalidInput,
        "expected 1 recomposed map or {} branch maps for s = {s}, got {}",
        s * s,
        branches.len()
    );
    let grid = shuffle_depth(branches, s)?;
    let (h, w) = full_dims;
    let (y0, x0, hh, ww) = crate::sampling::divisible_crop(h, w, s);
    ensure!(
        grid.dims() == (hh, ww),
        Shape,
        "branch maps recompose to {:?}, expected {:?}",
        grid.dims(),
        (hh, ww)
    );
    let mut d = vec![0.0f32; h * w];
    let mut v = vec![false; h * w];
    for y in 0..hh {
        let dst = (y + y0) * w + x0;
        d[dst..dst + ww].copy_from_slice(&grid.depth()[y * ww..(y + 1) * ww]);
        v[dst..dst + ww].copy_from_slice(&grid.valid()[y * ww..(y + 1) * ww]);
    }
    DepthMap::new(h, w, d, v)
}

pub fn analyze_pud(full: &DepthMap, from_pud: &DepthMap, reference: &DepthMap, s: usize, probe: &ProbeConfig) -> Result<PudAnalysis> {
    let map = pud_probe(full, from_pud, reference, probe.edge_sigma, probe.edge_threshold)?;
    let valid = full.valid().iter().zip(from_pud.valid()).filter(|(a, b)| **a && **b).count();
    let compared = map.weight.iter().filter(|w| **w > 0.0).count();
    Ok(PudAnalysis {
        s,
        mean: map.mean,
        branch_means: pud_branch_means(&map, s),
        forgiven_pixels: valid - compared,
        map: Some(map),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CropAnalysis {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub mean: f64,
    #[serde(skip)]
    pub map: Option<ProbeMap>,
}

/// L1 between a prediction made on a crop and the same window of the full prediction.
pub fn analyze_crop(full: &DepthMap, on_crop: &DepthMap, x: usize, y: usize) -> Result<CropAnalysis> {
    let (height, width) = on_crop.dims();
    let window = full.crop(x, y, width, height)?;
    let map = subsample_probe(on_crop, &window)?;
    Ok(CropAnalysis {
        x,
        y,
        width,
        height,
        mean: map.mean,
        map: Some(map),
    })
}

/// Maps values in [0, max] onto a dark-blue to yellow ramp; zero-weight pixels are black.
pub fn colormap(values: &[f64], weight: Option<&[f64]>, max: f64) -> Vec<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [0.05, 0.03, 0.33],
        [0.23, 0.32, 0.55],
        [0.13, 0.57, 0.55],
        [0.37, 0.79, 0.38],
        [0.99, 0.91, 0.14],
    ];
    let mut out = Vec::with_capacity(values.len() * 3);
    for (i, v) in values.iter().enumerate() {
        if weight.is_some_and(|w| w[i] == 0.0) {
            out.extend([0, 0, 0]);
            continue;
        }
        let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
        let pos = t * (STOPS.len() - 1) as f64;
        let j = (pos.floor() as usize).min(STOPS.len() - 2);
        let f = pos - j as f64;
        for (a, b) in STOPS[j].iter().zip(&STOPS[j + 1]) {
            let x = a * (1.0 - f) + b * f;
            out.push((x * 255.0).round() as u8);
        }
    }
    out
}
