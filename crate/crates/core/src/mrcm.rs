//! Multi-resolution consistency: align every sample's refined depth back onto
//! the full-resolution grid and fuse per pixel by the mean of the k median
//! predictions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::formats::MaskSet;
use crate::resample::resize_depth;
use crate::rng::Rng;
use crate::rnet::Refiner;
use crate::sampling::{build_sample_batch, Sample, SamplerConfig};
use crate::tensor::{DepthMap, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MrcmConfig {
    pub k: usize,
    /// Pixels with fewer predictions than this take the Full-layer value.
    pub min_support: usize,
}

impl Default for MrcmConfig {
    fn default() -> Self {
        Self { k: 3, min_support: 1 }
    }
}

impl MrcmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1, Config, "mrcm.k must be >= 1");
        Ok(())
    }
}

/// One sample's prediction placed on the full-resolution grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedLayer {
    pub tag: &'static str,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub coverage: Vec<bool>,
}

/// Predictions from all samples of one image, Full layer first.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<AlignedLayer>,
}

impl PredictionStack {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: AlignedLayer) -> Result<()> {
        let n = self.height * self.width;
        ensure!(
            layer.depth.len() == n && layer.valid.len() == n && layer.coverage.len() == n,
            Shape,
            "aligned layer does not match the {}x{} grid",
            self.height,
            self.width
        );
        ensure!(
            layer.valid.iter().zip(&layer.coverage).all(|(v, c)| !*v || *c),
            Shape,
            "layer {} is valid outside its coverage",
            layer.tag
        );
        if self.layers.is_empty() {
            ensure!(layer.tag == "full", Shape, "the first layer must be the full-image prediction");
        }
        self.layers.push(layer);
        Ok(())
    }
}

/// Places sample-grid values onto the full grid through the sample's alignment.
pub fn align_values(sample: &Sample, pred: &[f64], pred_valid: &[bool], full_h: usize, full_w: usize) -> Result<AlignedLayer> {
    ensure!(pred.len() == sample.depth.len() && pred_valid.len() == pred.len(), Shape, "prediction does not match its sample");
    ensure!(sample.coverage.len() == full_h * full_w, Shape, "sample coverage does not match the full grid");
    let n = full_h * full_w;
    let mut layer = AlignedLayer {
        tag: sample.kind.tag(),
        depth: vec![0.0; n],
        valid: vec![false; n],
        coverage: sample.coverage.clone(),
    };
    for (j, fi) in sample.full_index_map(full_w).into_iter().enumerate() {
        if let Some(fi) = fi {
            if pred_valid[j] {
                layer.depth[fi] = pred[j];
                layer.valid[fi] = true;
            }
        }
    }
    Ok(layer)
}

/// Aligns a refined sample depth; a prediction made at another resolution is
/// first resampled onto the sample grid.
pub fn align_to_full(sample: &Sample, refined: &DepthMap, full_dims: (usize, usize)) -> Result<AlignedLayer> {
    let refined = if refined.dims() == sample.depth.dims() {
        refined.clone()
    } else {
        let (h, w) = sample.depth.dims();
        resize_depth(refined, h, w)?
    };
    let pred: Vec<f64> = refined.depth().iter().map(|v| f64::from(*v)).collect();
    align_values(sample, &pred, refined.valid(), full_dims.0, full_dims.1)
}

/// Window `[start, start + len)` into the sorted prediction multiset.
#[inline]
pub fn median_window(m: usize, k: usize) -> (usize, usize) {
    if m >= k {
        ((m - k) / 2, k)
    } else {
        (0, m)
    }
}

/// Mean of the k median values of `values` (all of them when fewer than k).
pub fn mean_of_k_medians(values: &[f64], k: usize) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let (s, len) = median_window(v.len(), k);
    Some(v[s..s + len].iter().sum::<f64>() / len as f64)
}

/// Fused depth plus, per pixel, which layers were averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub selected: Vec<Vec<u16>>,
}

impl Aggregate {
    pub fn to_depth_map(&self) -> DepthMap {
        DepthMap::new(self.height, self.width, self.depth.iter().map(|v| *v as f32).collect(), self.valid.clone())
            .expect("aggregate of positive depths is positive")
    }
}

/// Per-pixel fusion with selection trace. Validity follows the Full layer.
pub fn aggregate_traced(stack: &PredictionStack, cfg: &MrcmConfig) -> Result<Aggregate> {
    cfg.validate()?;
    ensure!(!stack.layers.is_empty(), InvalidInput, "prediction stack is empty");
    let n = stack.height * stack.width;
    let full = &stack.layers[0];
    let mut out = Aggregate {
        height: stack.height,
        width: stack.width,
        depth: vec![0.0; n],
        valid: full.valid.clone(),
        selected: vec![Vec::new(); n],
    };
    let mut vals: Vec<(f64, u16)> = Vec::with_capacity(stack.layers.len());
    for p in 0..n {
        if !full.valid[p] {
            continue;
        }
        vals.clear();
        vals.extend(
            stack
                .layers
                .iter()
                .enumerate()
                .filter(|(_, l)| l.valid[p])
                .map(|(i, l)| (l.depth[p], i as u16)),
        );
        if vals.len() < cfg.min_support {
            out.depth[p] = full.depth[p];
            out.selected[p] = vec![0];
            continue;
        }
        // stable: equal values keep layer order
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (s, len) = median_window(vals.len(), cfg.k);
        let window = &vals[s..s + len];
        out.depth[p] = window.iter().map(|v| v.0).sum::<f64>() / len as f64;
        out.selected[p] = window.iter().map(|v| v.1).collect();
    }
    Ok(out)
}

pub fn aggregate(stack: &PredictionStack, cfg: &MrcmConfig) -> Result<DepthMap> {
    Ok(aggregate_traced(stack, cfg)?.to_depth_map())
}

/// Result of one refinement iteration.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub depth: DepthMap,
    pub stack: PredictionStack,
    pub warnings: Vec<String>,
}

/// One refinement iteration: sample the current depth, refine every sample
/// (with input noise), align, aggregate.
#[allow(clippy::too_many_arguments)]
pub fn run_iteration(
    refiner: &dyn Refiner,
    rgb: &ImageTensor,
    depth: &DepthMap,
    masks: Option<&MaskSet>,
    sampler: &SamplerConfig,
    cfg: &MrcmConfig,
    sigma_d: f64,
    rng: &mut Rng,
) -> Result<IterationOutput> {
    ensure!(depth.valid_count() > 0, InvalidInput, "depth has no valid pixels");
    let batch = build_sample_batch(rgb, depth, masks, sampler, rng)?;
    let (h, w) = depth.dims();
    // one noise stream per sample so refinement can fan out without
    // changing results
    let seeds: Vec<u64> = batch.samples.iter().map(|_| rng.next_u64()).collect();
    let layers: Vec<Option<AlignedLayer>> = batch
        .samples
        .par_iter()
        .zip(&seeds)
        .map(|(sample, seed)| {
            if sample.depth.valid_count() == 0 {
                return Ok(None);
            }
            let refined = refiner.refine_noisy(&sample.rgb, &sample.depth, sigma_d, &mut Rng::new(*seed))?;
            align_to_full(sample, &refined, (h, w)).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut stack = PredictionStack::new(h, w);
    for layer in layers.into_iter().flatten() {
        stack.push(layer)?;
    }
    Ok(IterationOutput {
        depth: aggregate(&stack, cfg)?,
        stack,
        warnings: batch.warnings,
    })
}
