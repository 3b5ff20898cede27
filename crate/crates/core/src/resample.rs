//! Resizing and smoothing of image and depth grids.
//!
//! Upscaling interpolates with half-pixel-centered bilinear (or bicubic)
//! weights; downscaling averages source area. Equal sizes are copied verbatim.

use crate::error::{ensure, Result};
use crate::tensor::{DepthMap, ImageTensor};

/// Kernel used when an axis is enlarged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    #[default]
    Bilinear,
    Bicubic,
}

/// Index into `0..n` under half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Contributing (source index, weight) pairs for every output index along one axis.
pub(crate) fn axis_weights(input: usize, output: usize, interp: Interp) -> Vec<Vec<(usize, f64)>> {
    if input == output {
        return (0..output).map(|i| vec![(i, 1.0)]).collect();
    }
    let scale = input as f64 / output as f64;
    if output < input {
        return (0..output)
            .map(|j| {
                let lo = j as f64 * scale;
                let hi = (j + 1) as f64 * scale;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(input);
                (first..last)
                    .filter_map(|i| {
                        let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                        (overlap > 0.0).then_some((i, overlap / scale))
                    })
                    .collect()
            })
            .collect();
    }
    (0..output)
        .map(|j| {
            let src = (j as f64 + 0.5) * scale - 0.5;
            match interp {
                Interp::Bilinear => {
                    let src = src.clamp(0.0, (input - 1) as f64);
                    let i0 = src.floor() as usize;
                    let t = src - i0 as f64;
                    let mut w = vec![(i0, 1.0 - t)];
                    if t > 0.0 && i0 + 1 < input {
                        w.push((i0 + 1, t));
                    }
                    w.retain(|(_, wt)| *wt > 0.0);
                    w
                }
                Interp::Bicubic => {
                    let base = src.floor();
                    let t = src - base;
                    let mut taps: Vec<(usize, f64)> = Vec::with_capacity(4);
                    for k in -1..=2isize {
                        let wt = keys_cubic(t - k as f64);
                        if wt == 0.0 {
                            continue;
                        }
                        let idx = (base as isize + k).clamp(0, input as isize - 1) as usize;
                        match taps.iter_mut().find(|(i, _)| *i == idx) {
                            Some(entry) => entry.1 += wt,
                            None => taps.push((idx, wt)),
                        }
                    }
                    taps
                }
            }
        })
        .collect()
}

fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

fn resize_plane(
    src: &[f32],
    h: usize,
    w: usize,
    wy: &[Vec<(usize, f64)>],
    wx: &[Vec<(usize, f64)>],
    out: &mut Vec<f32>,
) {
    for row in wy {
        for col in wx {
            let mut acc = 0.0f64;
            for &(yi, a) in row {
                for &(xi, b) in col {
                    debug_assert!(yi < h && xi < w);
                    acc += a * b * f64::from(src[yi * w + xi]);
                }
            }
            out.push((acc as f32).clamp(0.0, 1.0));
        }
    }
}

/// Resamples an image to `out_h × out_w`.
pub fn resize_image(img: &ImageTensor, out_h: usize, out_w: usize, interp: Interp) -> Result<ImageTensor> {
    ensure!(out_h >= 1 && out_w >= 1, InvalidInput, "output size must be at least 1x1");
    let (h, w) = img.dims();
    ensure!(h >= 1 && w >= 1 && img.channels() >= 1, InvalidInput, "cannot resize an empty image");
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let wy = axis_weights(h, out_h, interp);
    let wx = axis_weights(w, out_w, interp);
    let mut data = Vec::with_capacity(img.channels() * out_h * out_w);
    for c in 0..img.channels() {
        resize_plane(img.plane(c), h, w, &wy, &wx, &mut data);
    }
    ImageTensor::new(img.channels(), out_h, out_w, data)
}

pub fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    resize_image(img, out_h, out_w, Interp::Bilinear)
}

pub fn resize_bicubic(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    resize_image(img, out_h, out_w, Interp::Bicubic)
}

/// Validity-aware bilinear/area resampling of depth.
///
/// Weights are renormalized over valid contributors; an output pixel is valid
/// iff at least one contributing source pixel is valid.
pub fn resize_depth(d: &DepthMap, out_h: usize, out_w: usize) -> Result<DepthMap> {
    ensure!(out_h >= 1 && out_w >= 1, InvalidInput, "output size must be at least 1x1");
    let (h, w) = d.dims();
    ensure!(h >= 1 && w >= 1, InvalidInput, "cannot resize an empty depth map");
    if (h, w) == (out_h, out_w) {
        return Ok(d.clone());
    }
    let wy = axis_weights(h, out_h, Interp::Bilinear);
    let wx = axis_weights(w, out_w, Interp::Bilinear);
    let (depth_in, valid_in) = (d.depth(), d.valid());
    let mut depth = Vec::with_capacity(out_h * out_w);
    let mut valid = Vec::with_capacity(out_h * out_w);
    for row in &wy {
        for col in &wx {
            let (mut acc, mut norm) = (0.0f64, 0.0f64);
            for &(yi, a) in row {
                for &(xi, b) in col {
                    let i = yi * w + xi;
                    if valid_in[i] {
                        acc += a * b * f64::from(depth_in[i]);
                        norm += a * b;
                    }
                }
            }
            if norm > 0.0 {
                depth.push((acc / norm) as f32);
                valid.push(true);
            } else {
                depth.push(0.0);
                valid.push(false);
            }
        }
    }
    DepthMap::new(out_h, out_w, depth, valid)
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of one H×W plane, reflect-padded, kernel cut at ±3σ.
pub(crate) fn blur_plane(src: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return src.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xi = reflect_index(x as isize + t as isize - r, w);
                acc += kv * f64::from(src[y * w + xi]);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yi = reflect_index(y as isize + t as isize - r, h);
                acc += kv * tmp[yi * w + x];
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}

/// Gaussian blur of every channel; σ = 0 returns the input unchanged.
pub fn gaussian_blur(img: &ImageTensor, sigma: f32) -> Result<ImageTensor> {
    ensure!(sigma.is_finite() && sigma >= 0.0, InvalidInput, "sigma must be >= 0, got {sigma}");
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        data.extend(blur_plane(img.plane(c), h, w, f64::from(sigma)));
    }
    ImageTensor::from_clamped(img.channels(), h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> ImageTensor {
        let n = c * h * w;
        ImageTensor::new(c, h, w, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn constant_image_any_size() {
        let img = ImageTensor::filled(1, 2, 2, 0.5);
        for (h, w) in [(1, 1), (3, 7), (8, 8), (2, 2)] {
            let out = resize_bilinear(&img, h, w).unwrap();
            assert!(out.data().iter().all(|v| *v == 0.5));
        }
    }

    #[test]
    fn identity_dims_bit_identical() {
        let img = ramp(3, 5, 7);
        assert_eq!(resize_bilinear(&img, 5, 7).unwrap(), img);
        assert_eq!(resize_bicubic(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn one_by_two_upscale_matches_hand_weights() {
        // Half-pixel centers: dst j maps to src (j + 0.5) * 2/4 - 0.5, clamped to [0, 1].
        // j=0 -> -0.25 -> 0, j=1 -> 0.25, j=2 -> 0.75, j=3 -> 1.25 -> 1.
        let img = ImageTensor::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 1, 4).unwrap();
        let expected = [0.0f32, 0.25, 0.75, 1.0];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_sized_request_rejected() {
        let img = ramp(1, 2, 2);
        assert!(resize_bilinear(&img, 0, 2).is_err());
        assert!(resize_depth(&DepthMap::filled(2, 2, 1.0).unwrap(), 2, 0).is_err());
    }

    #[test]
    fn area_downscale_averages() {
        let img = ImageTensor::new(1, 2, 2, vec![0.0, 0.2, 0.4, 0.6]).unwrap();
        let out = resize_bilinear(&img, 1, 1).unwrap();
        assert!((out.data()[0] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn depth_constant_and_identity() {
        let d = DepthMap::filled(3, 4, 2.0).unwrap();
        let up = resize_depth(&d, 7, 9).unwrap();
        assert!(up.depth().iter().all(|v| *v == 2.0));
        assert_eq!(resize_depth(&d, 3, 4).unwrap(), d);
    }

    #[test]
    fn depth_renormalizes_over_valid_neighbors() {
        // 2x2 source with one hole, upscaled to 4x4; output (1,1) maps to src (0.25, 0.25).
        let d = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 0.0], vec![true, true, true, false]).unwrap();
        let out = resize_depth(&d, 4, 4).unwrap();
        // direct oracle: weights (0.75,0.25) per axis, drop the invalid (1,1) tap, renormalize
        let taps = [(0.75 * 0.75, 1.0), (0.75 * 0.25, 2.0), (0.25 * 0.75, 3.0)];
        let norm: f64 = taps.iter().map(|t| t.0).sum();
        let expected = taps.iter().map(|t| t.0 * t.1).sum::<f64>() / norm;
        assert!((f64::from(out.at(1, 1).unwrap()) - expected).abs() < 1e-6);
        // bottom-right output only sees the hole
        assert_eq!(out.at(3, 3), None);
    }

    #[test]
    fn all_invalid_depth_stays_invalid() {
        let d = DepthMap::invalid(2, 3);
        let out = resize_depth(&d, 5, 5).unwrap();
        assert_eq!(out.valid_count(), 0);
    }

    #[test]
    fn blur_sigma_zero_and_constant() {
        let img = ramp(2, 4, 5);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        let c = ImageTensor::filled(1, 6, 6, 0.3);
        let out = gaussian_blur(&c, 1.3).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-7));
        assert!(gaussian_blur(&c, -1.0).is_err());
    }

    #[test]
    fn blur_impulse_matches_padded_kernel_oracle() {
        let mut data = vec![0.0f32; 5];
        data[2] = 1.0;
        let img = ImageTensor::new(1, 1, 5, data.clone()).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        // oracle: explicit symmetric padding by 3, then direct evaluation of exp(-t^2/2)
        let raw: Vec<f64> = (-3..=3).map(|t: i32| (-(t * t) as f64 / 2.0).exp()).collect();
        let norm: f64 = raw.iter().sum();
        let mut padded = Vec::new();
        for i in -3i32..8 {
            let j = if i < 0 { -i - 1 } else if i > 4 { 9 - i } else { i };
            padded.push(f64::from(data[j as usize]));
        }
        for x in 0..5 {
            let expected: f64 = (0..7).map(|t| raw[t] / norm * padded[x + t]).sum();
            assert!((f64::from(out.data()[x]) - expected).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn reflect_index_folds() {
        assert_eq!(reflect_index(-1, 4), 0);
        assert_eq!(reflect_index(-2, 4), 1);
        assert_eq!(reflect_index(4, 4), 3);
        assert_eq!(reflect_index(9, 4), 1);
        assert_eq!(reflect_index(-3, 1), 0);
    }

    proptest::proptest! {
        #[test]
        fn constant_resize_roundtrip(v in 0.0f32..=1.0, h in 1usize..9, w in 1usize..9, oh in 1usize..17, ow in 1usize..17) {
            let img = ImageTensor::filled(1, h, w, v);
            let there = resize_bilinear(&img, oh, ow).unwrap();
            let back = resize_bilinear(&there, h, w).unwrap();
            proptest::prop_assert_eq!(back, img);
        }

        #[test]
        fn blur_preserves_mean(seed in 0u64..1000, h in 1usize..12, w in 1usize..12, sigma in 0.1f32..4.0) {
            let mut r = crate::rng::Rng::new(seed);
            let data: Vec<f32> = (0..h * w).map(|_| r.uniform() as f32).collect();
            let img = ImageTensor::new(1, h, w, data).unwrap();
            let out = gaussian_blur(&img, sigma).unwrap();
            let m0: f64 = img.data().iter().map(|v| f64::from(*v)).sum::<f64>() / (h * w) as f64;
            let m1: f64 = out.data().iter().map(|v| f64::from(*v)).sum::<f64>() / (h * w) as f64;
            proptest::prop_assert!((m0 - m1).abs() < 1e-6);
        }
    }
}
