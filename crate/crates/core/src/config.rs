//! Pipeline configuration, TOML I/O and named presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::losses::LossWeights;
use crate::metrics::DEFAULT_FSCORE_TAU;
use crate::mrcm::MrcmConfig;
use crate::rnet::{AdamWParams, RNetConfig};
use crate::sampling::SamplerConfig;

/// One training stage: feedback iteration count, length and learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// MRCM feedback iterations; the input of each training step is the
    /// aggregate after a uniformly drawn j ∈ [0, iterations) cycles. 0 feeds
    /// the initial depth directly.
    pub iterations: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Start this stage from the weights that ended stage 0 instead of the
    /// previous stage, with fresh optimizer moments.
    #[serde(default)]
    pub restart_from_base: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub adamw: AdamWParams,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            adamw: AdamWParams::default(),
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub edge_sigma: f64,
    /// Gradient magnitude (meters per pixel) above which a pixel is forgiven.
    pub edge_threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            edge_sigma: 1.0,
            edge_threshold: 0.05,
        }
    }
}

/// How inputs whose size differs from the working size are fitted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitPolicy {
    /// Crop the largest centered region of the working aspect ratio, then resize.
    #[default]
    CenterCrop,
    /// Resize to fit inside, pad with black and invalid depth.
    Letterbox,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    /// Working size as [height, width]; unset keeps the native size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<[usize; 2]>,
    pub fit: FitPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub deterministic: bool,
    /// Refinement cycles at inference.
    pub iterations: usize,
    pub fscore_tau: f64,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub input: InputConfig,
    pub sampler: SamplerConfig,
    pub rnet: RNetConfig,
    pub mrcm: MrcmConfig,
    pub losses: LossWeights,
    pub optimizer: OptimizerConfig,
    pub schedule: Vec<Stage>,
    pub probe: ProbeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Small images and a narrow network; runs on one CPU core.
    Desk,
    /// Published hyperparameters, stages continuing from one another.
    Paper,
    /// Published hyperparameters, each feedback stage fine-tuned from the stage-0 weights.
    PaperFresh,
}

impl PipelineConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            iterations: 5,
            fscore_tau: DEFAULT_FSCORE_TAU,
            checkpoint_every: 10,
            input: InputConfig::default(),
            sampler: SamplerConfig {
                n_s: 2,
                n_r: 2,
                ..SamplerConfig::default()
            },
            rnet: RNetConfig {
                base_channels: 8,
                ..RNetConfig::default()
            },
            mrcm: MrcmConfig::default(),
            losses: LossWeights::default(),
            // batch 1: larger Adam batches at this lr kill the decoder ReLUs
            optimizer: OptimizerConfig {
                adamw: AdamWParams {
                    lr: 1e-3,
                    ..AdamWParams::default()
                },
                batch_size: 1,
            },
            schedule: vec![
                Stage { iterations: 0, epochs: 60, lr: 1e-3, restart_from_base: false },
                Stage { iterations: 0, epochs: 15, lr: 3e-4, restart_from_base: false },
                Stage { iterations: 2, epochs: 10, lr: 2e-4, restart_from_base: false },
                Stage { iterations: 5, epochs: 30, lr: 1e-4, restart_from_base: false },
            ],
            probe: ProbeConfig::default(),
        }
    }

    pub fn paper() -> Self {
        let tail = [2, 5, 10, 30].map(|n| Stage {
            iterations: n,
            epochs: 1000,
            lr: 1e-5,
            restart_from_base: false,
        });
        let mut schedule = vec![Stage {
            iterations: 0,
            epochs: 2000,
            lr: 3.5e-4,
            restart_from_base: false,
        }];
        schedule.extend(tail);
        Self {
            seed: 0,
            deterministic: false,
            iterations: 5,
            fscore_tau: DEFAULT_FSCORE_TAU,
            checkpoint_every: 50,
            input: InputConfig {
                size: Some([512, 512]),
                fit: FitPolicy::CenterCrop,
            },
            sampler: SamplerConfig::default(),
            rnet: RNetConfig::default(),
            mrcm: MrcmConfig::default(),
            losses: LossWeights::default(),
            optimizer: OptimizerConfig {
                adamw: AdamWParams {
                    lr: 3.5e-4,
                    beta1: 0.9,
                    beta2: 0.999,
                    ..AdamWParams::default()
                },
                batch_size: 16,
            },
            schedule,
            probe: ProbeConfig::default(),
        }
    }

    pub fn paper_fresh() -> Self {
        let mut c = Self::paper();
        for s in c.schedule.iter_mut().skip(1) {
            s.restart_from_base = true;
        }
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
            Preset::PaperFresh => Self::paper_fresh(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.rnet.validate()?;
        self.mrcm.validate()?;
        self.losses.validate()?;
        ensure!(self.fscore_tau > 0.0, Config, "fscore_tau must be > 0");
        if let Some([h, w]) = self.input.size {
            ensure!(h >= 1 && w >= 1, Config, "input.size must be positive, got {h}x{w}");
        }
        ensure!(self.optimizer.batch_size >= 1, Config, "optimizer.batch_size must be >= 1");
        let a = &self.optimizer.adamw;
        ensure!(
            a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0 && a.weight_decay >= 0.0,
            Config,
            "invalid optimizer hyperparameters"
        );
        for (i, s) in self.schedule.iter().enumerate() {
            ensure!(s.lr > 0.0, Config, "schedule[{i}].lr must be > 0");
            ensure!(!(i == 0 && s.restart_from_base), Config, "schedule[0] cannot restart from itself");
        }
        ensure!(self.probe.edge_sigma >= 0.0, Config, "probe.edge_sigma must be >= 0");
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
