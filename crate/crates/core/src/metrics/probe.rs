//! Consistency probes: L1 error maps between full-image predictions and
//! predictions recomposed from unshuffled or cropped inputs, with
//! forgiveness near depth edges.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::resample::{blur_plane, reflect_index};
use crate::sampling::divisible_crop;
use crate::tensor::DepthMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMap {
    pub height: usize,
    pub width: usize,
    /// Weighted absolute error per pixel (0 where not compared).
    pub error: Vec<f64>,
    /// 1 where compared, 0 where forgiven or invalid.
    pub weight: Vec<f64>,
    /// `Σ w·|a − b| / Σ w` (0 when nothing is compared).
    pub mean: f64,
}

/// 0 where the gradient magnitude of the blurred reference exceeds the threshold (or
/// the reference is invalid), else 1. Central differences with reflected borders.
pub fn edge_weights(reference: &DepthMap, edge_sigma: f64, edge_threshold: f64) -> Vec<f64> {
    let (h, w) = reference.dims();
    let blurred = blur_plane(reference.depth(), h, w, edge_sigma.max(0.0));
    let at = |y: isize, x: isize| f64::from(blurred[reflect_index(y, h) * w + reflect_index(x, w)]);
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if !reference.valid()[i] {
                continue;
            }
            let gx = 0.5 * (at(y, x + 1) - at(y, x - 1));
            let gy = 0.5 * (at(y + 1, x) - at(y - 1, x));
            if (gx * gx + gy * gy).sqrt() <= edge_threshold {
                out[i] = 1.0;
            }
        }
    }
    out
}

fn weighted_l1(a: &DepthMap, b: &DepthMap, weight: Vec<f64>) -> ProbeMap {
    let (h, w) = a.dims();
    let mut map = ProbeMap {
        height: h,
        width: w,
        error: vec![0.0; h * w],
        weight,
        mean: 0.0,
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..h * w {
        if !(a.valid()[i] && b.valid()[i]) {
            map.weight[i] = 0.0;
            continue;
        }
        let e = map.weight[i] * (f64::from(a.depth()[i]) - f64::from(b.depth()[i])).abs();
        map.error[i] = e;
        num += e;
        den += map.weight[i];
    }
    map.mean = if den > 0.0 { num / den } else { 0.0 };
    map
}

/// Edge-forgiven L1 between a full-resolution prediction and one recomposed
/// from pixel-unshuffled predictions.
pub fn pud_probe(full: &DepthMap, from_pud: &DepthMap, reference: &DepthMap, edge_sigma: f64, edge_threshold: f64) -> Result<ProbeMap> {
    ensure!(
        full.dims() == from_pud.dims() && full.dims() == reference.dims(),
        Shape,
        "probe inputs differ in size: {:?} {:?} {:?}",
        full.dims(),
        from_pud.dims(),
        reference.dims()
    );
    Ok(weighted_l1(full, from_pud, edge_weights(reference, edge_sigma, edge_threshold)))
}

/// Mean of the probe map restricted to each unshuffle branch (s² entries,
/// branch i covering offsets (i mod s, ⌊i/s⌋) of the centered divisible region).
pub fn pud_branch_means(map: &ProbeMap, s: usize) -> Vec<f64> {
    let (y0, x0, hh, ww) = divisible_crop(map.height, map.width, s);
    (0..s * s)
        .map(|i| {
            let (dx, dy) = (i % s, i / s);
            let (mut num, mut den) = (0.0, 0.0);
            for y in (y0 + dy..y0 + hh).step_by(s) {
                for x in (x0 + dx..x0 + ww).step_by(s) {
                    let j = y * map.width + x;
                    num += map.error[j];
                    den += map.weight[j];
                }
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}

/// Plain masked L1 between a prediction on a crop and the same crop of the
/// full-image prediction.
pub fn subsample_probe(pred_on_crop: &DepthMap, crop_of_full: &DepthMap) -> Result<ProbeMap> {
    ensure!(pred_on_crop.dims() == crop_of_full.dims(), Shape, "crop predictions differ in size");
    ensure!(!pred_on_crop.is_empty(), InvalidInput, "empty crop");
    Ok(weighted_l1(pred_on_crop, crop_of_full, vec![1.0; pred_on_crop.len()]))
}
