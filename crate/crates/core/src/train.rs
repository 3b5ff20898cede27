//! The training objective with its analytic gradient, and the staged training loop.
//!
//! One training step on a scene runs two passes over the same sample batch:
//!
//! * main pass: every sample is refined from noisy input, aligned and
//!   aggregated; the λ-MSE of the aggregate against ground truth is
//!   backpropagated through the median window into the selected samples;
//! * consistency pass: the samples and the full image are refined without
//!   noise and compared with Huber losses, gradients flowing into both sides.
//!
//! In feedback stages the depth input is first replaced by the aggregate
//! after a random number of refinement cycles, run without gradients.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{ensure, Error, Result};
use crate::formats::{load_weights, save_weights, MaskSet, WeightsFile};
use crate::losses::{lambda_mse_grad, sample_consistency_grad, total_loss, LossBreakdown};
use crate::mrcm::{aggregate_traced, align_values, run_iteration, PredictionStack};
use crate::rng::Rng;
use crate::rnet::{
    adamw_step, backward_into, forward, network_input, residual_grad, residual_to_depth, ForwardCache, Grads,
    OptimState, RNet, RNetWeights, RefineOutput, Scalar,
};
use crate::sampling::{build_sample_batch, Sample, SampleKind};
use crate::tensor::{CameraIntrinsics, DepthMap, ImageTensor};

/// One training example.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub name: String,
    pub rgb: ImageTensor,
    pub gt: DepthMap,
    /// Depth from the upstream estimator.
    pub init: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub masks: Option<MaskSet>,
}

struct Evaluated<T> {
    sample: usize,
    cache: ForwardCache<T>,
    padded: (usize, usize),
    out: RefineOutput,
}

fn evaluate<T: Scalar>(net: &RNet<T>, sample: &Sample, idx: usize, sigma_d: f64, rng: &mut Rng) -> Result<Evaluated<T>> {
    let input = network_input::<T>(&sample.rgb, &sample.depth, sigma_d, Some(rng), net.config.size_multiple())?;
    let (r, cache) = forward(net, &input.tensor);
    Ok(Evaluated {
        sample: idx,
        cache,
        padded: (input.tensor.h, input.tensor.w),
        out: residual_to_depth(&sample.depth, &r, net.config.residual_clamp),
    })
}

fn accumulate<T: Scalar>(net: &RNet<T>, ev: &Evaluated<T>, grad_depth: &[f64], grads: &mut Grads<T>) {
    if grad_depth.iter().all(|g| *g == 0.0) {
        return;
    }
    let g = residual_grad::<T>(&ev.out, grad_depth, ev.padded.0, ev.padded.1);
    backward_into(net, &ev.cache, &g, grads);
}

/// Loss breakdown of one scene and, when `need_grad`, its parameter gradient.
pub fn scene_objective<T: Scalar>(
    net: &RNet<T>,
    scene: &TrainScene,
    cfg: &PipelineConfig,
    feedback_iterations: usize,
    need_grad: bool,
    rng: &mut Rng,
) -> Result<(LossBreakdown, Option<Grads<T>>)> {
    let sigma_d = net.config.depth_noise_sigma;
    let mut depth_in = scene.init.clone();
    if feedback_iterations > 0 {
        let j = rng.below(feedback_iterations);
        for _ in 0..j {
            depth_in = run_iteration(net, &scene.rgb, &depth_in, scene.masks.as_ref(), &cfg.sampler, &cfg.mrcm, sigma_d, rng)?.depth;
        }
    }
    let batch = build_sample_batch(&scene.rgb, &depth_in, scene.masks.as_ref(), &cfg.sampler, rng)?;
    let samples = &batch.samples;
    let (h, w) = scene.gt.dims();
    ensure!(depth_in.dims() == (h, w), Shape, "{}: initial depth and ground truth differ in size", scene.name);

    // main pass
    let mut main = Vec::new();
    let mut stack = PredictionStack::new(h, w);
    for (i, s) in samples.iter().enumerate() {
        if s.depth.valid_count() == 0 {
            continue;
        }
        let ev = evaluate(net, s, i, sigma_d, rng)?;
        stack.push(align_values(s, &ev.out.depth, &ev.out.valid, h, w)?)?;
        main.push(ev);
    }
    let agg = aggregate_traced(&stack, &cfg.mrcm)?;
    let (l_mse, g_agg) = lambda_mse_grad(&agg.depth, &agg.valid, &scene.gt, cfg.losses.lambda)?;

    // consistency pass
    let delta = cfg.losses.huber_delta;
    let full_c = evaluate(net, &samples[0], 0, 0.0, rng)?;
    let mut cons = Vec::new();
    let mut sums = [(0.0f64, 0usize); 3];
    for (i, s) in samples.iter().enumerate().skip(1) {
        if s.depth.valid_count() == 0 {
            continue;
        }
        let ev = evaluate(net, s, i, 0.0, rng)?;
        let pg = sample_consistency_grad(s, &ev.out.depth, &ev.out.valid, &full_c.out.depth, &full_c.out.valid, w, delta);
        if let Some(pg) = pg {
            let slot = kind_slot(&s.kind);
            sums[slot].0 += pg.value;
            sums[slot].1 += 1;
            cons.push((ev, slot, pg));
        }
    }
    let mean = |(v, n): (f64, usize)| if n > 0 { v / n as f64 } else { 0.0 };
    let breakdown = total_loss(l_mse, mean(sums[0]), mean(sums[1]), mean(sums[2]), &cfg.losses)?;
    if !need_grad {
        return Ok((breakdown, None));
    }

    let mut grads = Grads::zeros_like(net);
    // λ-MSE through the median window
    let mut layer_grads = vec![vec![0.0f64; h * w]; main.len()];
    for p in 0..h * w {
        if g_agg[p] == 0.0 {
            continue;
        }
        let sel = &agg.selected[p];
        let share = g_agg[p] / sel.len() as f64;
        for &l in sel {
            layer_grads[l as usize][p] += share;
        }
    }
    for (ev, lg) in main.iter().zip(&layer_grads) {
        let map = samples[ev.sample].full_index_map(w);
        let gd: Vec<f64> = map.iter().map(|fi| fi.map_or(0.0, |fi| lg[fi])).collect();
        accumulate(net, ev, &gd, &mut grads);
    }
    // consistency terms, each a mean over its samples
    let mut full_grad = vec![0.0f64; h * w];
    for (ev, slot, pg) in &cons {
        let coef = cfg.losses.w_sample * cfg.losses.lambda_sample[*slot] / sums[*slot].1 as f64;
        if coef == 0.0 {
            continue;
        }
        let gd: Vec<f64> = pg.sample.iter().map(|g| g * coef).collect();
        accumulate(net, ev, &gd, &mut grads);
        full_grad.iter_mut().zip(&pg.full).for_each(|(a, b)| *a += b * coef);
    }
    accumulate(net, &full_c, &full_grad, &mut grads);
    Ok((breakdown, Some(grads)))
}

fn kind_slot(kind: &SampleKind) -> usize {
    match kind {
        SampleKind::Pud { .. } => 0,
        SampleKind::Crop { .. } => 1,
        SampleKind::Seg { .. } => 2,
        SampleKind::Full => unreachable!("the full image is not a consistency sample"),
    }
}

/// Sum of per-scene objectives over a batch, gradients summed in batch order.
pub fn batch_objective<T: Scalar>(
    net: &RNet<T>,
    scenes: &[&TrainScene],
    seeds: &[u64],
    cfg: &PipelineConfig,
    feedback_iterations: usize,
) -> Result<(Vec<LossBreakdown>, Grads<T>)> {
    let results: Vec<(LossBreakdown, Option<Grads<T>>)> = scenes
        .par_iter()
        .zip(seeds)
        .map(|(s, seed)| scene_objective(net, s, cfg, feedback_iterations, true, &mut Rng::new(*seed)))
        .collect::<Result<_>>()?;
    let mut total = Grads::zeros_like(net);
    let mut losses = Vec::with_capacity(results.len());
    for (l, g) in results {
        total.add_assign(&g.expect("gradients requested"));
        losses.push(l);
    }
    Ok((losses, total))
}

/// Mutable training state; everything needed to resume bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: RNetWeights,
    pub opt: OptimState,
    /// Epochs completed.
    pub epoch: usize,
    /// Weights at the end of stage 0, kept for stages that restart from them.
    pub base: Option<RNetWeights>,
}

impl TrainState {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        let net = crate::rnet::init_weights(&cfg.rnet, &mut Rng::with_stream(cfg.seed, u64::MAX))?;
        let opt = OptimState::new(&net, cfg.optimizer.adamw);
        Ok(Self { net, opt, epoch: 0, base: None })
    }

    pub fn to_weights_file(&self) -> Result<WeightsFile> {
        let mut f = self.net.to_weights_file();
        for (i, (m, v)) in self.opt.m.iter().zip(&self.opt.v).enumerate() {
            f.insert(format!("opt.m.{i}"), vec![m.len()], m.clone())?;
            f.insert(format!("opt.v.{i}"), vec![v.len()], v.clone())?;
        }
        // counters split into 16-bit halves so f32 storage stays exact
        for (name, value) in [("train.step", self.opt.step), ("train.epoch", self.epoch as u64)] {
            f.insert(name, vec![2], vec![(value >> 16) as f32, (value & 0xffff) as f32])?;
        }
        if let Some(base) = &self.base {
            base.append_to(&mut f, "base.")?;
        }
        Ok(f)
    }

    pub fn from_weights_file(f: &WeightsFile, cfg: &PipelineConfig) -> Result<Self> {
        let net = RNetWeights::from_weights_file(f)?;
        ensure!(net.config == cfg.rnet, Config, "checkpoint network does not match the configured network");
        let mut opt = OptimState::new(&net, cfg.optimizer.adamw);
        for i in 0..opt.m.len() {
            for (prefix, dst) in [("opt.m", &mut opt.m[i]), ("opt.v", &mut opt.v[i])] {
                let name = format!("{prefix}.{i}");
                let t = f.get(&name).ok_or_else(|| Error::InvalidInput(format!("checkpoint missing {name}")))?;
                ensure!(t.data.len() == dst.len(), Shape, "{name} has the wrong size");
                dst.copy_from_slice(&t.data);
            }
        }
        let counter = |name: &str| -> Result<u64> {
            let t = f.get(name).ok_or_else(|| Error::InvalidInput(format!("checkpoint missing {name}")))?;
            ensure!(t.data.len() == 2, Shape, "{name} must hold two values");
            Ok(((t.data[0] as u64) << 16) | t.data[1] as u64)
        };
        opt.step = counter("train.step")?;
        let epoch = counter("train.epoch")? as usize;
        let base = if f.get("base.meta.levels").is_some() {
            Some(RNetWeights::from_weights_file_prefixed(f, "base.")?)
        } else {
            None
        };
        Ok(Self { net, opt, epoch, base })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        // write then rename so an interrupted save never clobbers the last good checkpoint
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        save_weights(&self.to_weights_file()?, &tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<Self> {
        Self::from_weights_file(&load_weights(path)?, cfg)
    }
}

/// Per-epoch record written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: usize,
    pub feedback_iterations: usize,
    pub lr: f64,
    pub steps: u64,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

/// Stage index and position inside it for a global epoch, or `None` past the schedule.
pub fn stage_of(cfg: &PipelineConfig, epoch: usize) -> Option<(usize, usize)> {
    let mut start = 0;
    for (i, s) in cfg.schedule.iter().enumerate() {
        if epoch < start + s.epochs {
            return Some((i, epoch - start));
        }
        start += s.epochs;
    }
    None
}

fn mean_breakdown(ls: &[LossBreakdown]) -> LossBreakdown {
    let n = ls.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| ls.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        lambda_mse: sum(|l| l.lambda_mse),
        pud: sum(|l| l.pud),
        sub: sum(|l| l.sub),
        seg: sum(|l| l.seg),
        total: sum(|l| l.total),
    }
}

/// Runs one epoch at `state.epoch` and advances it.
pub fn train_epoch(scenes: &[TrainScene], cfg: &PipelineConfig, state: &mut TrainState) -> Result<EpochLog> {
    ensure!(!scenes.is_empty(), InvalidInput, "no training scenes");
    let (stage_idx, pos) = stage_of(cfg, state.epoch).ok_or_else(|| Error::InvalidInput("schedule already complete".into()))?;
    let stage = cfg.schedule[stage_idx];
    if pos == 0 && stage_idx > 0 {
        if state.base.is_none() {
            state.base = Some(state.net.clone());
        }
        if stage.restart_from_base {
            state.net = state.base.clone().expect("base weights recorded");
            state.opt = OptimState::new(&state.net, cfg.optimizer.adamw);
        }
    }
    state.opt.params.lr = stage.lr;
    let started = Instant::now();
    let mut rng = Rng::with_stream(cfg.seed, state.epoch as u64);
    let order = rng.sample_indices(scenes.len(), scenes.len());
    let mut losses = Vec::with_capacity(scenes.len());
    for chunk in order.chunks(cfg.optimizer.batch_size) {
        let batch: Vec<&TrainScene> = chunk.iter().map(|&i| &scenes[i]).collect();
        let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
        let (ls, mut grads) = batch_objective(&state.net, &batch, &seeds, cfg, stage.iterations)?;
        for (l, s) in ls.iter().zip(&batch) {
            ensure!(l.total.is_finite(), Numeric, "non-finite loss on {} at epoch {}", s.name, state.epoch);
        }
        grads.scale(1.0 / batch.len() as f32);
        adamw_step(&mut state.net, &grads, &mut state.opt)?;
        losses.extend(ls);
    }
    ensure!(state.net.is_finite(), Numeric, "weights became non-finite at epoch {}", state.epoch);
    let log = EpochLog {
        epoch: state.epoch,
        stage: stage_idx,
        feedback_iterations: stage.iterations,
        lr: stage.lr,
        steps: state.opt.step,
        loss: mean_breakdown(&losses),
        seconds: started.elapsed().as_secs_f64(),
    };
    state.epoch += 1;
    Ok(log)
}

/// Trains until the schedule (or `max_epochs` more epochs) is done, calling
/// `on_epoch` after each epoch.
pub fn train(
    scenes: &[TrainScene],
    cfg: &PipelineConfig,
    state: &mut TrainState,
    max_epochs: Option<usize>,
    on_epoch: &mut dyn FnMut(&EpochLog, &TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let total = cfg.total_epochs();
    let stop = max_epochs.map_or(total, |m| (state.epoch + m).min(total));
    while state.epoch < stop {
        let log = train_epoch(scenes, cfg, state)?;
        on_epoch(&log, state)?;
    }
    Ok(())
}
