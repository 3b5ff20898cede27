//! Training objectives: λ-reweighted MSE in spherical coordinates, Huber
//! distance, and the sampling-consistency losses with their combination.
//!
//! Values are computed in f64. The `*_grad` variants also return the gradient
//! with respect to the predicted depth(s), which is how the training loop
//! backpropagates into the network.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::to_spherical;
use crate::rnet::Refiner;
use crate::sampling::{pud_samples, Sample};
use crate::tensor::{CameraIntrinsics, DepthMap, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// (θ, φ, z) weights on the squared mean error.
    pub lambda: [f64; 3],
    /// (PUD, sub, SAM) weights.
    pub lambda_sample: [f64; 3],
    pub w_sample: f64,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: [1.0; 3],
            lambda_sample: [1.0; 3],
            w_sample: 1.0,
            huber_delta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.lambda.iter().chain(&self.lambda_sample).chain([&self.w_sample]);
        for v in all {
            ensure!(v.is_finite() && *v >= 0.0, Config, "loss weights must be finite and >= 0");
        }
        ensure!(self.huber_delta > 0.0, Config, "huber_delta must be > 0");
        Ok(())
    }
}

/// Per-term values of the combined objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lambda_mse: f64,
    pub pud: f64,
    pub sub: f64,
    pub seg: f64,
    pub total: f64,
}

/// `L_λMSE + w_sample · (λ_PUD·L_PUD + λ_sub·L_sub + λ_SAM·L_SAM)`.
pub fn total_loss(lambda_mse: f64, pud: f64, sub: f64, seg: f64, w: &LossWeights) -> Result<LossBreakdown> {
    for v in [lambda_mse, pud, sub, seg] {
        ensure!(v.is_finite(), Numeric, "non-finite loss component {v}");
    }
    let [a, b, c] = w.lambda_sample;
    Ok(LossBreakdown {
        lambda_mse,
        pud,
        sub,
        seg,
        total: lambda_mse + w.w_sample * (a * pud + b * sub + c * seg),
    })
}

/// `‖V[ε]‖₁ + λᵀ(E[ε] ⊙ E[ε])` over jointly valid pixels, with ε the difference
/// of spherical coordinates (θ, φ, ln z).
pub fn lambda_mse(pred: &DepthMap, gt: &DepthMap, k: &CameraIntrinsics, lambda: [f64; 3]) -> Result<f64> {
    ensure!(pred.dims() == gt.dims(), Shape, "prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims());
    let p = to_spherical(pred, k)?;
    let g = to_spherical(gt, k)?;
    let idx: Vec<usize> = (0..pred.len()).filter(|&i| p.valid[i] && g.valid[i]).collect();
    ensure!(idx.len() >= 2, InvalidInput, "lambda_mse needs at least 2 jointly valid pixels, got {}", idx.len());
    let comps = [(&p.theta, &g.theta), (&p.phi, &g.phi), (&p.z, &g.z)];
    let n = idx.len() as f64;
    let mut loss = 0.0;
    for ((a, b), l) in comps.iter().zip(lambda) {
        let mean = idx.iter().map(|&i| a[i] - b[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (a[i] - b[i] - mean).powi(2)).sum::<f64>() / n;
        loss += var + l * mean * mean;
    }
    Ok(loss)
}

/// [`lambda_mse`] on an f64 prediction, with its gradient w.r.t. the predicted depth.
///
/// Prediction and ground truth share the pixel grid, so the angular errors
/// vanish identically and only the log-depth component contributes.
pub fn lambda_mse_grad(
    pred: &[f64],
    pred_valid: &[bool],
    gt: &DepthMap,
    lambda: [f64; 3],
) -> Result<(f64, Vec<f64>)> {
    ensure!(pred.len() == gt.len() && pred_valid.len() == gt.len(), Shape, "prediction does not match ground truth");
    let idx: Vec<usize> = (0..pred.len()).filter(|&i| pred_valid[i] && gt.valid()[i]).collect();
    ensure!(idx.len() >= 2, InvalidInput, "lambda_mse needs at least 2 jointly valid pixels, got {}", idx.len());
    let n = idx.len() as f64;
    let eps: Vec<f64> = idx.iter().map(|&i| pred[i].ln() - f64::from(gt.depth()[i]).ln()).collect();
    let mean = eps.iter().sum::<f64>() / n;
    let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let lz = lambda[2];
    let mut grad = vec![0.0; pred.len()];
    for (&i, e) in idx.iter().zip(&eps) {
        grad[i] = 2.0 / n * (e + (lz - 1.0) * mean) / pred[i];
    }
    Ok((var + lz * mean * mean, grad))
}

#[inline]
fn huber_elem(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r, r)
    } else {
        (delta * (r.abs() - 0.5 * delta), delta * r.signum())
    }
}

/// Mean Huber penalty of `a − b` over jointly valid pixels.
pub fn huber(a: &DepthMap, b: &DepthMap, delta: f64) -> Result<f64> {
    ensure!(a.dims() == b.dims(), Shape, "huber operands differ in size");
    ensure!(delta > 0.0, InvalidInput, "huber delta must be > 0");
    let pairs = a.valid().iter().zip(b.valid()).zip(a.depth().iter().zip(b.depth()));
    let (mut sum, mut n) = (0.0, 0usize);
    for ((va, vb), (x, y)) in pairs {
        if *va && *vb {
            sum += huber_elem(f64::from(*x) - f64::from(*y), delta).0;
            n += 1;
        }
    }
    ensure!(n > 0, InvalidInput, "huber: no jointly valid pixels");
    Ok(sum / n as f64)
}

/// Gradient of one consistency comparison.
#[derive(Debug, Clone)]
pub struct PairGrad {
    pub value: f64,
    /// d/d(sample prediction), in sample pixel order.
    pub sample: Vec<f64>,
    /// d/d(full prediction), full-resolution.
    pub full: Vec<f64>,
}

/// Huber between a sample's prediction and the full-image prediction at the
/// pixels the sample maps onto. `None` when no pixel is valid on both sides.
pub fn sample_consistency_grad(
    sample: &Sample,
    pred: &[f64],
    pred_valid: &[bool],
    full: &[f64],
    full_valid: &[bool],
    full_w: usize,
    delta: f64,
) -> Option<PairGrad> {
    let map = sample.full_index_map(full_w);
    let pairs: Vec<(usize, usize)> = map
        .iter()
        .enumerate()
        .filter_map(|(j, fi)| fi.map(|fi| (j, fi)))
        .filter(|&(j, fi)| pred_valid[j] && full_valid[fi])
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mut out = PairGrad {
        value: 0.0,
        sample: vec![0.0; pred.len()],
        full: vec![0.0; full.len()],
    };
    for &(j, fi) in &pairs {
        let (v, d) = huber_elem(pred[j] - full[fi], delta);
        out.value += v;
        out.sample[j] += d / n;
        out.full[fi] -= d / n;
    }
    out.value /= n;
    Some(out)
}

fn consistency_value(sample: &Sample, refined: &DepthMap, full: &DepthMap, delta: f64) -> Option<f64> {
    let pred: Vec<f64> = refined.depth().iter().map(|v| f64::from(*v)).collect();
    let fullv: Vec<f64> = full.depth().iter().map(|v| f64::from(*v)).collect();
    sample_consistency_grad(sample, &pred, refined.valid(), &fullv, full.valid(), full.width(), delta).map(|g| g.value)
}

/// Mean of per-sample consistency values; the flag is set when nothing was compared.
fn mean_consistency(refiner: &dyn Refiner, samples: &[Sample], full_pred: &DepthMap, delta: f64) -> Result<(f64, bool)> {
    let mut vals = Vec::new();
    for s in samples {
        if s.depth.valid_count() == 0 {
            continue;
        }
        let refined = refiner.refine_depth(&s.rgb, &s.depth)?;
        if let Some(v) = consistency_value(s, &refined, full_pred, delta) {
            vals.push(v);
        }
    }
    if vals.is_empty() {
        return Ok((0.0, true));
    }
    Ok((vals.iter().sum::<f64>() / vals.len() as f64, false))
}

/// Mean over the s² unshuffled sub-images of the Huber distance between each
/// refined sub-image and the matching pixels of the refined full image.
pub fn pud_consistency(refiner: &dyn Refiner, rgb: &ImageTensor, depth: &DepthMap, s: usize, delta: f64) -> Result<f64> {
    let full = refiner.refine_depth(rgb, depth)?;
    let samples = pud_samples(rgb, depth, s)?;
    if samples.is_empty() {
        // s = 1: the only sub-image is the image itself
        return huber(&full, &full, delta);
    }
    Ok(mean_consistency(refiner, &samples, &full, delta)?.0)
}

/// Mean over crops of the Huber distance between the refined crop and the
/// same rectangle of the refined full image. Flag set for an empty crop list.
pub fn sub_consistency(refiner: &dyn Refiner, crops: &[Sample], full_pred: &DepthMap, delta: f64) -> Result<(f64, bool)> {
    mean_consistency(refiner, crops, full_pred, delta)
}

/// Like [`sub_consistency`] for segment samples, restricted to mask pixels;
/// masks with no valid depth are skipped.
pub fn seg_consistency(refiner: &dyn Refiner, segs: &[Sample], full_pred: &DepthMap, delta: f64) -> Result<(f64, bool)> {
    mean_consistency(refiner, segs, full_pred, delta)
}
