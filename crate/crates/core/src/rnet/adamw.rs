//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{Grads, RNetWeights};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            lr: 3.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub params: AdamWParams,
    pub step: u64,
    /// First and second moments per parameter tensor, in [`RNetWeights::params`] order.
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimState {
    pub fn new(net: &RNetWeights, params: AdamWParams) -> Self {
        let zeros: Vec<Vec<f32>> = net.params().map(|p| vec![0.0; p.len()]).collect();
        Self {
            params,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update. Rejects non-finite gradients without touching anything.
pub fn adamw_step(net: &mut RNetWeights, grads: &Grads<f32>, state: &mut OptimState) -> Result<()> {
    ensure!(grads.is_finite(), Numeric, "non-finite gradient; step rejected");
    ensure!(grads.layers.len() == net.layers.len(), Shape, "gradient/weight layer count mismatch");
    ensure!(state.m.len() == 2 * net.layers.len(), Shape, "optimizer state does not match network");
    let p = state.params;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - p.beta1.powi(t);
    let bc2 = 1.0 - p.beta2.powi(t);
    let grad_tensors = grads.layers.iter().flat_map(|(w, b)| [w, b]);
    for (((w, g), m), v) in net.params_mut().zip(grad_tensors).zip(&mut state.m).zip(&mut state.v) {
        ensure!(w.len() == g.len() && w.len() == m.len(), Shape, "parameter shape mismatch");
        for i in 0..w.len() {
            let gi = f64::from(g[i]);
            let mut wi = f64::from(w[i]);
            wi -= p.lr * p.weight_decay * wi;
            let mi = p.beta1 * f64::from(m[i]) + (1.0 - p.beta1) * gi;
            let vi = p.beta2 * f64::from(v[i]) + (1.0 - p.beta2) * gi * gi;
            wi -= p.lr * (mi / bc1) / ((vi / bc2).sqrt() + p.eps);
            m[i] = mi as f32;
            v[i] = vi as f32;
            w[i] = wi as f32;
        }
    }
    Ok(())
}
