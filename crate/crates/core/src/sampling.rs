//! Multi-sample views of an RGB-D input.
//!
//! A batch holds the full image, the s² pixel-unshuffled sub-grids, `n_r`
//! jittered random crops, and up to `n_s` segmentation-masked views. Each
//! sample records the full-resolution pixels it covers and how its own
//! pixels map onto them, so refined predictions can be placed back exactly.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::formats::MaskSet;
use crate::rng::Rng;
use crate::tensor::{DepthMap, ImageTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Pixel-unshuffle factor s.
    pub s_pud: usize,
    /// Number of random crops.
    pub n_r: usize,
    /// Crop side as a fraction of the image side, drawn uniformly from [lo, hi].
    pub crop_scale_range: [f64; 2],
    /// Maximum absolute brightness offset added to crops.
    pub jitter_brightness: f64,
    /// Maximum deviation of the crop contrast factor from 1.
    pub jitter_contrast: f64,
    /// Number of segmentation masks drawn per batch.
    pub n_s: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            s_pud: 2,
            n_r: 3,
            crop_scale_range: [0.2, 0.7],
            jitter_brightness: 0.1,
            jitter_contrast: 0.1,
            n_s: 4,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.crop_scale_range;
        ensure!(self.s_pud >= 1, Config, "s_pud must be >= 1");
        ensure!(
            lo > 0.0 && lo <= hi && hi <= 1.0,
            Config,
            "crop_scale_range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"
        );
        ensure!(
            self.jitter_brightness >= 0.0 && self.jitter_contrast >= 0.0 && self.jitter_contrast < 1.0,
            Config,
            "jitter bounds must be >= 0 (contrast < 1)"
        );
        Ok(())
    }
}

/// Axis-aligned rectangle in full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleKind {
    Full,
    Pud { index: usize },
    Crop { rect: Rect, brightness: f32, contrast: f32 },
    Seg { mask_id: String },
}

impl SampleKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SampleKind::Full => "full",
            SampleKind::Pud { .. } => "pud",
            SampleKind::Crop { .. } => "crop",
            SampleKind::Seg { .. } => "seg",
        }
    }
}

/// Mapping from sample pixel (x, y) to full-resolution pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Same grid.
    Identity,
    /// `(x0 + step·x, y0 + step·y)`.
    Strided { step: usize, x0: usize, y0: usize },
    /// `(x0 + x, y0 + y)`.
    Offset { x0: usize, y0: usize },
}

impl Alignment {
    #[inline]
    pub fn map(&self, x: usize, y: usize) -> (usize, usize) {
        match *self {
            Alignment::Identity => (x, y),
            Alignment::Strided { step, x0, y0 } => (x0 + step * x, y0 + step * y),
            Alignment::Offset { x0, y0 } => (x0 + x, y0 + y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub kind: SampleKind,
    pub rgb: ImageTensor,
    pub depth: DepthMap,
    /// Full-resolution pixels this sample maps onto.
    pub coverage: Vec<bool>,
    pub alignment: Alignment,
}

impl Sample {
    /// The full image as a sample.
    pub fn full(rgb: &ImageTensor, depth: &DepthMap) -> Self {
        Sample {
            kind: SampleKind::Full,
            rgb: rgb.clone(),
            depth: depth.clone(),
            coverage: vec![true; depth.len()],
            alignment: Alignment::Identity,
        }
    }

    /// Full-resolution flat index of every sample pixel that maps onto a covered pixel.
    pub fn full_index_map(&self, full_w: usize) -> Vec<Option<usize>> {
        let (h, w) = self.depth.dims();
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = self.alignment.map(x, y);
                let i = fy * full_w + fx;
                out.push(self.coverage.get(i).copied().unwrap_or(false).then_some(i));
            }
        }
        out
    }
}

/// Largest `s`-divisible dimensions and the centered offset: `(y0, x0, h, w)`.
pub fn divisible_crop(h: usize, w: usize, s: usize) -> (usize, usize, usize, usize) {
    let (rh, rw) = (h % s, w % s);
    (rh / 2, rw / 2, h - rh, w - rw)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn unshuffle_plane<T: Copy>(src: &[T], w: usize, s: usize, i: usize, y0: usize, x0: usize, sh: usize, sw: usize) -> Vec<T> {
    let (dx, dy) = (i % s, i / s);
    let mut out = Vec::with_capacity(sh * sw);
    for y in 0..sh {
        let row = (y0 + s * y + dy) * w + x0 + dx;
        for x in 0..sw {
            out.push(src[row + s * x]);
        }
    }
    out
}

fn check_factor(s: usize) -> Result<()> {
    ensure!(s >= 1, InvalidInput, "pixel (un)shuffle factor must be >= 1");
    Ok(())
}

/// Splits an image into s² sub-images; sub-image i at (x, y) is the source at
/// `(s·x + i mod s, s·y + ⌊i/s⌋)`. Dimensions not divisible by s are first
/// center-cropped to the largest divisible size.
pub fn pixel_unshuffle(img: &ImageTensor, s: usize) -> Result<Vec<ImageTensor>> {
    check_factor(s)?;
    let (h, w) = img.dims();
    let (y0, x0, ch, cw) = divisible_crop(h, w, s);
    ensure!(ch >= s && cw >= s, InvalidInput, "image {h}x{w} too small for factor {s}");
    let (sh, sw) = (ch / s, cw / s);
    (0..s * s)
        .map(|i| {
            let mut data = Vec::with_capacity(img.channels() * sh * sw);
            for c in 0..img.channels() {
                data.extend(unshuffle_plane(img.plane(c), w, s, i, y0, x0, sh, sw));
            }
            ImageTensor::new(img.channels(), sh, sw, data)
        })
        .collect()
}

/// Exact inverse of [`pixel_unshuffle`] on divisible dimensions.
pub fn pixel_shuffle(subs: &[ImageTensor], s: usize) -> Result<ImageTensor> {
    check_factor(s)?;
    ensure!(subs.len() == s * s, InvalidInput, "pixel_shuffle needs {} sub-images, got {}", s * s, subs.len());
    let (c, sh, sw) = (subs[0].channels(), subs[0].height(), subs[0].width());
    ensure!(
        subs.iter().all(|t| t.channels() == c && t.dims() == (sh, sw)),
        Shape,
        "pixel_shuffle sub-images differ in shape"
    );
    let (h, w) = (sh * s, sw * s);
    let mut data = vec![0.0f32; c * h * w];
    for (i, sub) in subs.iter().enumerate() {
        let (dx, dy) = (i % s, i / s);
        for ch in 0..c {
            let plane = sub.plane(ch);
            for y in 0..sh {
                for x in 0..sw {
                    data[(ch * h + s * y + dy) * w + s * x + dx] = plane[y * sw + x];
                }
            }
        }
    }
    ImageTensor::new(c, h, w, data)
}

/// Depth counterpart of [`pixel_unshuffle`]; validity travels with each pixel.
pub fn unshuffle_depth(d: &DepthMap, s: usize) -> Result<Vec<DepthMap>> {
    check_factor(s)?;
    let (h, w) = d.dims();
    let (y0, x0, ch, cw) = divisible_crop(h, w, s);
    ensure!(ch >= s && cw >= s, InvalidInput, "depth {h}x{w} too small for factor {s}");
    let (sh, sw) = (ch / s, cw / s);
    (0..s * s)
        .map(|i| {
            DepthMap::new(
                sh,
                sw,
                unshuffle_plane(d.depth(), w, s, i, y0, x0, sh, sw),
                unshuffle_plane(d.valid(), w, s, i, y0, x0, sh, sw),
            )
        })
        .collect()
}

/// Depth counterpart of [`pixel_shuffle`].
pub fn shuffle_depth(subs: &[DepthMap], s: usize) -> Result<DepthMap> {
    check_factor(s)?;
    ensure!(subs.len() == s * s, InvalidInput, "shuffle_depth needs {} maps, got {}", s * s, subs.len());
    let (sh, sw) = subs[0].dims();
    ensure!(subs.iter().all(|t| t.dims() == (sh, sw)), Shape, "shuffle_depth maps differ in shape");
    let (h, w) = (sh * s, sw * s);
    let mut depth = vec![0.0f32; h * w];
    let mut valid = vec![false; h * w];
    for (i, sub) in subs.iter().enumerate() {
        let (dx, dy) = (i % s, i / s);
        for y in 0..sh {
            for x in 0..sw {
                let o = (s * y + dy) * w + s * x + dx;
                depth[o] = sub.depth()[y * sw + x];
                valid[o] = sub.valid()[y * sw + x];
            }
        }
    }
    DepthMap::new(h, w, depth, valid)
}

fn check_pair(rgb: &ImageTensor, depth: &DepthMap) -> Result<()> {
    ensure!(
        rgb.dims() == depth.dims(),
        Shape,
        "image {:?} and depth {:?} differ in size",
        rgb.dims(),
        depth.dims()
    );
    Ok(())
}

/// The s² pixel-unshuffled samples (none when s = 1, which would repeat the full image).
pub fn pud_samples(rgb: &ImageTensor, depth: &DepthMap, s: usize) -> Result<Vec<Sample>> {
    check_pair(rgb, depth)?;
    check_factor(s)?;
    if s == 1 {
        return Ok(Vec::new());
    }
    let (h, w) = depth.dims();
    let (y0, x0, _, _) = divisible_crop(h, w, s);
    let images = pixel_unshuffle(rgb, s)?;
    let depths = unshuffle_depth(depth, s)?;
    Ok(images
        .into_iter()
        .zip(depths)
        .enumerate()
        .map(|(i, (rgb, d))| {
            let alignment = Alignment::Strided {
                step: s,
                x0: x0 + i % s,
                y0: y0 + i / s,
            };
            let mut coverage = vec![false; h * w];
            let (sh, sw) = d.dims();
            for y in 0..sh {
                for x in 0..sw {
                    let (fx, fy) = alignment.map(x, y);
                    coverage[fy * w + fx] = true;
                }
            }
            Sample {
                kind: SampleKind::Pud { index: i },
                rgb,
                depth: d,
                coverage,
                alignment,
            }
        })
        .collect())
}

/// Applies `clamp(c·(v − 0.5) + 0.5 + b, 0, 1)`; identity when c = 1 and b = 0.
pub fn photometric_jitter(img: &ImageTensor, brightness: f32, contrast: f32) -> Result<ImageTensor> {
    if brightness == 0.0 && contrast == 1.0 {
        return Ok(img.clone());
    }
    let data = img
        .data()
        .iter()
        .map(|v| contrast * (v - 0.5) + 0.5 + brightness)
        .collect();
    ImageTensor::from_clamped(img.channels(), img.height(), img.width(), data)
}

/// `n_r` random crops keeping the image aspect ratio, with photometric jitter
/// on RGB only.
pub fn random_subsample(rgb: &ImageTensor, depth: &DepthMap, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Vec<Sample>> {
    check_pair(rgb, depth)?;
    cfg.validate()?;
    let (h, w) = depth.dims();
    let [lo, hi] = cfg.crop_scale_range;
    let mut out = Vec::with_capacity(cfg.n_r);
    for _ in 0..cfg.n_r {
        let scale = rng.uniform_range(lo, hi);
        let cw = ((scale * w as f64).round() as usize).clamp(1, w);
        let ch = ((scale * h as f64).round() as usize).clamp(1, h);
        let x = rng.below(w - cw + 1);
        let y = rng.below(h - ch + 1);
        let brightness = rng.uniform_range(-cfg.jitter_brightness, cfg.jitter_brightness) as f32;
        let contrast = 1.0 + rng.uniform_range(-cfg.jitter_contrast, cfg.jitter_contrast) as f32;
        let rect = Rect { x, y, w: cw, h: ch };
        let crop_rgb = photometric_jitter(&rgb.crop(x, y, cw, ch)?, brightness, contrast)?;
        let mut coverage = vec![false; h * w];
        for yy in y..y + ch {
            coverage[yy * w + x..yy * w + x + cw].iter_mut().for_each(|c| *c = true);
        }
        out.push(Sample {
            kind: SampleKind::Crop { rect, brightness, contrast },
            rgb: crop_rgb,
            depth: depth.crop(x, y, cw, ch)?,
            coverage,
            alignment: Alignment::Offset { x0: x, y0: y },
        });
    }
    Ok(out)
}

/// Masked view of the full image: RGB zeroed and depth invalidated outside the mask.
pub fn masked_sample(rgb: &ImageTensor, depth: &DepthMap, id: &str, mask: &[bool]) -> Result<Sample> {
    check_pair(rgb, depth)?;
    ensure!(mask.len() == depth.len(), Shape, "mask {id} does not match the image");
    let n = depth.len();
    let data = rgb
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| if mask[i % n] { *v } else { 0.0 })
        .collect();
    Ok(Sample {
        kind: SampleKind::Seg { mask_id: id.to_string() },
        rgb: ImageTensor::new(rgb.channels(), rgb.height(), rgb.width(), data)?,
        depth: depth.masked(mask)?,
        coverage: mask.to_vec(),
        alignment: Alignment::Identity,
    })
}

/// Draws `min(n_s, |masks|)` masks uniformly without replacement. The flag is
/// set when the mask set is empty.
pub fn select_masks(
    masks: &MaskSet,
    rgb: &ImageTensor,
    depth: &DepthMap,
    n_s: usize,
    rng: &mut Rng,
) -> Result<(Vec<Sample>, bool)> {
    check_pair(rgb, depth)?;
    if masks.is_empty() {
        log::warn!("segmentation sampling requested but the mask set is empty");
        return Ok((Vec::new(), true));
    }
    ensure!(
        masks.dims() == depth.dims(),
        Shape,
        "masks {:?} do not match image {:?}",
        masks.dims(),
        depth.dims()
    );
    let picked = rng.sample_indices(masks.len(), n_s);
    let samples = picked
        .into_iter()
        .map(|i| masked_sample(rgb, depth, masks.id(i), masks.mask(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// `[Full] + Pud(0..s²) + n_r Crop + ≤ n_s Seg`, in that order.
pub fn build_sample_batch(
    rgb: &ImageTensor,
    depth: &DepthMap,
    masks: Option<&MaskSet>,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<SampleBatch> {
    check_pair(rgb, depth)?;
    cfg.validate()?;
    let mut samples = vec![Sample::full(rgb, depth)];
    let (h, w) = depth.dims();
    if h >= cfg.s_pud && w >= cfg.s_pud {
        samples.extend(pud_samples(rgb, depth, cfg.s_pud)?);
    }
    samples.extend(random_subsample(rgb, depth, cfg, rng)?);
    let mut warnings = Vec::new();
    if let (Some(masks), true) = (masks, cfg.n_s > 0) {
        let (segs, empty) = select_masks(masks, rgb, depth, cfg.n_s, rng)?;
        if empty {
            warnings.push("mask set is empty; no segmentation samples".to_string());
        }
        samples.extend(segs);
    }
    Ok(SampleBatch { samples, warnings })
}
