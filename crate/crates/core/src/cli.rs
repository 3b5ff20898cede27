//! Command-line front end: `multidepth {refine|train|eval|synth|analyze|unproject}`.
//!
//! Every command returns a [`Result`]; [`run`] maps errors to exit code 2
//! (bad input) or 3 (numeric failure).

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{PipelineConfig, Preset};
use crate::dataset::{self, SynthSpec};
use crate::error::{ensure, Error, Result};
use crate::formats::{
    load_depth_auto, load_image_png, load_intrinsics, load_masks, load_weights, save_depth, save_ply, save_rgb8_png,
    save_weights, DepthUnit,
};
use crate::geometry::unproject;
use crate::metrics::{evaluate, MetricsReport};
use crate::pipeline::{analyze_crop, analyze_pud, colormap, fit_inputs, recompose_pud, refine_cycles, CropAnalysis, PudAnalysis};
use crate::rnet::{init_weights, RNetWeights};
use crate::rng::Rng;
use crate::tensor::{CameraIntrinsics, DepthMap};
use crate::train::{train, EpochLog, TrainScene, TrainState};

#[derive(Debug, Parser)]
#[command(name = "multidepth", version, about = "Iterative multi-sample refinement of metric depth maps")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML file merged over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single worker thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Refinement cycles at inference.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine a depth map.
    Refine(RefineArgs),
    /// Train the refinement network on a dataset directory.
    Train(TrainArgs),
    /// Compare predicted depth against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Consistency probes between full-image and sampled predictions.
    Analyze(AnalyzeArgs),
    /// Convert a depth map to a PLY point cloud.
    Unproject(UnprojectArgs),
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    /// Initial depth (.png in millimeters or .pfm in meters).
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Directory of instance masks.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Trained network; without it the identity network is used.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output depth (.png or .pfm); the other encoding is written alongside.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the refined depth as a point cloud.
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub ply_scale: f64,
    /// Write every intermediate aggregate here.
    #[arg(long)]
    pub dump_iters: Option<PathBuf>,
    /// Ground truth for per-iteration metrics.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Number of cycles already applied to `--depth` (continues a split run).
    #[arg(long, default_value_t = 0)]
    pub start_iteration: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory with a manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for weights, checkpoint and log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from `<out>/checkpoint.mdpt`.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many more epochs.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction file or directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth file or directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Intrinsics for every pair; defaults to each dataset scene's own.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// F-score distance threshold in meters.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Depth file looked up inside scene subdirectories of `--pred`.
    #[arg(long, default_value = dataset::GT_FILE)]
    pub pred_name: String,
    /// Write the per-image and mean reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML with `[scene]` and `[degrade]` tables.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Degradation noise σ in meters.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Degradation blur σ in pixels.
    #[arg(long)]
    pub blur: Option<f64>,
    /// Low-frequency bias amplitude in meters.
    #[arg(long)]
    pub bias: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Prediction on the full image.
    #[arg(long)]
    pub full: PathBuf,
    /// Either one recomposed map or s² branch predictions in unshuffle order.
    #[arg(long, num_args = 1.., required = true)]
    pub pud: Vec<PathBuf>,
    /// Depth whose edges are forgiven (usually ground truth).
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    /// Prediction made on a crop of the image.
    #[arg(long, requires = "crop_x")]
    pub crop: Option<PathBuf>,
    #[arg(long, requires = "crop_y")]
    pub crop_x: Option<usize>,
    #[arg(long)]
    pub crop_y: Option<usize>,
    /// Output directory for maps and `stats.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct UnprojectArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Color points from this image.
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// ASCII instead of binary PLY.
    #[arg(long)]
    pub ascii: bool,
}

fn merge_toml(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Preset, then config file, then command-line overrides.
pub fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::preset(g.preset);
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let over: toml::Value = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let mut base = toml::Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        merge_toml(&mut base, over);
        cfg = base.try_into().map_err(|e: toml::de::Error| Error::format(path, e.to_string()))?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = g.iterations {
        cfg.iterations = n;
    }
    cfg.deterministic |= g.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes depth in the encoding named by the extension plus the other one alongside.
fn save_depth_pair(d: &DepthMap, path: &Path) -> Result<()> {
    let unit = DepthUnit::from_path(path)?;
    save_depth(d, path, unit)?;
    match unit {
        DepthUnit::MillimeterPng16 => save_depth(d, sibling(path, "pfm"), DepthUnit::PfmMeters),
        DepthUnit::PfmMeters => save_depth(d, sibling(path, "png"), DepthUnit::MillimeterPng16),
    }
}

fn load_net(path: Option<&Path>, cfg: &mut PipelineConfig) -> Result<RNetWeights> {
    match path {
        Some(p) => {
            let net = RNetWeights::from_weights_file(&load_weights(p)?)?;
            if net.config != cfg.rnet {
                log::info!("using the network settings stored in {}", p.display());
                cfg.rnet = net.config.clone();
            }
            Ok(net)
        }
        None => {
            log::warn!("no --weights given; the identity network leaves depth unchanged");
            init_weights(&cfg.rnet, &mut Rng::new(cfg.seed))
        }
    }
}

#[derive(Debug, Serialize)]
struct IterationRecord {
    iteration: usize,
    valid_pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
}

pub fn cmd_refine(args: &RefineArgs, cfg: &PipelineConfig) -> Result<DepthMap> {
    let mut cfg = cfg.clone();
    let rgb = load_image_png(&args.rgb)?;
    let depth = load_depth_auto(&args.depth)?;
    let k = load_intrinsics(&args.intrinsics)?;
    let masks = args.masks.as_deref().map(load_masks).transpose()?;
    let net = load_net(args.weights.as_deref(), &mut cfg)?;
    let fitted = fit_inputs(&rgb, &depth, &k, masks.as_ref(), &cfg.input)?;
    let gt = match &args.gt {
        Some(p) => Some(fit_inputs(&rgb, &load_depth_auto(p)?, &k, None, &cfg.input)?.depth),
        None => None,
    };
    if let Some(dir) = &args.dump_iters {
        create_dir(dir)?;
    }
    let mut records = Vec::new();
    if let Some(gt) = &gt {
        records.push(IterationRecord {
            iteration: args.start_iteration,
            valid_pixels: fitted.depth.valid_count(),
            metrics: Some(evaluate(&fitted.depth, gt, &fitted.intrinsics, cfg.fscore_tau)?),
        });
    }
    let refined = refine_cycles(
        &net,
        &fitted.rgb,
        &fitted.depth,
        fitted.masks.as_ref(),
        &cfg,
        args.start_iteration,
        cfg.iterations,
        |t, out| {
            if let Some(dir) = &args.dump_iters {
                save_depth_pair(&out.depth, &dir.join(format!("iter_{t:02}.png")))?;
            }
            let metrics = gt
                .as_ref()
                .map(|g| evaluate(&out.depth, g, &fitted.intrinsics, cfg.fscore_tau))
                .transpose()?;
            if let Some(m) = &metrics {
                log::info!("iteration {t}: δ0.25 {:.4} SI_log {:.4}", m.delta_at(0.25), m.si_log);
            }
            records.push(IterationRecord {
                iteration: t,
                valid_pixels: out.depth.valid_count(),
                metrics,
            });
            Ok(())
        },
    )?;

    let passthrough = cfg.iterations == 0 && fitted.depth.dims() == depth.dims();
    let same_encoding = DepthUnit::from_path(&args.out)? == DepthUnit::from_path(&args.depth)?;
    if passthrough && same_encoding {
        // no cycles: hand back the ingested file byte for byte
        std::fs::copy(&args.depth, &args.out).map_err(|e| Error::io(&args.out, e))?;
        let other = match DepthUnit::from_path(&args.out)? {
            DepthUnit::MillimeterPng16 => (sibling(&args.out, "pfm"), DepthUnit::PfmMeters),
            DepthUnit::PfmMeters => (sibling(&args.out, "png"), DepthUnit::MillimeterPng16),
        };
        save_depth(&refined, other.0, other.1)?;
    } else {
        save_depth_pair(&refined, &args.out)?;
    }
    if let Some(ply) = &args.ply {
        let pc = unproject(&refined, &fitted.intrinsics, args.ply_scale, Some(&fitted.rgb))?;
        save_ply(&pc, ply, true)?;
    }
    if let Some(dir) = &args.dump_iters {
        let mut f = std::fs::File::create(dir.join("iterations.jsonl")).map_err(|e| Error::io(dir, e))?;
        for r in &records {
            writeln!(f, "{}", serde_json::to_string(r).expect("serializable")).map_err(|e| Error::io(dir, e))?;
        }
    }
    if gt.is_some() {
        println!("{}", MetricsReport::table_header());
        for r in &records {
            if let Some(m) = &r.metrics {
                println!("{}", m.table_row(&format!("iter {}", r.iteration)));
            }
        }
    }
    Ok(refined)
}

fn fit_scene(s: TrainScene, cfg: &PipelineConfig) -> Result<TrainScene> {
    if cfg.input.size.is_none() {
        return Ok(s);
    }
    let f = fit_inputs(&s.rgb, &s.init, &s.intrinsics, s.masks.as_ref(), &cfg.input)?;
    let gt = fit_inputs(&s.rgb, &s.gt, &s.intrinsics, None, &cfg.input)?.depth;
    Ok(TrainScene {
        name: s.name,
        rgb: f.rgb,
        gt,
        init: f.depth,
        intrinsics: f.intrinsics,
        masks: f.masks,
    })
}

pub const WEIGHTS_FILE: &str = "weights.mdpt";
pub const CHECKPOINT_FILE: &str = "checkpoint.mdpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

pub fn cmd_train(args: &TrainArgs, cfg: &PipelineConfig) -> Result<TrainState> {
    let scenes = dataset::load_dataset(&args.data)?
        .into_iter()
        .map(|s| fit_scene(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!scenes.is_empty(), InvalidInput, "{}: dataset has no scenes", args.data.display());
    create_dir(&args.out)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    let mut state = if args.resume {
        let s = TrainState::load(&ckpt, cfg)?;
        log::info!("resuming at epoch {}", s.epoch);
        s
    } else {
        TrainState::new(cfg)?
    };
    std::fs::write(args.out.join("config.toml"), cfg.to_toml_string()).map_err(|e| Error::io(&args.out, e))?;
    let log_path = args.out.join(TRAIN_LOG);
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(args.resume)
        .write(true)
        .truncate(!args.resume)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let total = cfg.total_epochs();
    let every = cfg.checkpoint_every;
    let mut on_epoch = |log: &EpochLog, st: &TrainState| -> Result<()> {
        writeln!(log_file, "{}", serde_json::to_string(log).expect("serializable")).map_err(|e| Error::io(&log_path, e))?;
        log::info!(
            "epoch {}/{} stage {} loss {:.5} (mse {:.5} pud {:.5} sub {:.5} seg {:.5}) {:.1}s",
            log.epoch + 1,
            total,
            log.stage,
            log.loss.total,
            log.loss.lambda_mse,
            log.loss.pud,
            log.loss.sub,
            log.loss.seg,
            log.seconds
        );
        if every > 0 && st.epoch % every == 0 {
            st.save(&ckpt)?;
        }
        Ok(())
    };
    let result = train(&scenes, cfg, &mut state, args.max_epochs, &mut on_epoch);
    if let Err(e) = result {
        log::error!("training stopped: {e}; last good checkpoint kept at {}", ckpt.display());
        return Err(e);
    }
    state.save(&ckpt)?;
    save_weights(&state.net.to_weights_file(), args.out.join(WEIGHTS_FILE))?;
    Ok(state)
}

fn is_depth_file(p: &Path) -> bool {
    DepthUnit::from_path(p).is_ok()
}

/// Depth files in a directory keyed by name: loose `*.png`/`*.pfm` files by
/// stem, and scene subdirectories holding `inner` by directory name.
fn collect_depths(dir: &Path, inner: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if path.is_dir() {
            let f = path.join(inner);
            if f.is_file() {
                out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), f);
            }
        } else if is_depth_file(&path) {
            // a PNG and PFM pair with one stem counts once, preferring PFM
            let keep_existing = out.get(&name).is_some_and(|p: &PathBuf| p.extension().is_some_and(|e| e == "pfm"));
            if !keep_existing {
                out.insert(name, path);
            }
        }
    }
    Ok(out)
}

fn scene_intrinsics(gt_path: &Path, fallback: Option<&CameraIntrinsics>) -> Result<CameraIntrinsics> {
    if let Some(k) = fallback {
        return Ok(*k);
    }
    let candidates = [
        gt_path.with_file_name(dataset::INTRINSICS_FILE),
        gt_path.with_extension("json"),
    ];
    for c in &candidates {
        if c.is_file() {
            return load_intrinsics(c);
        }
    }
    Err(Error::InvalidInput(format!(
        "no intrinsics for {} (pass --intrinsics)",
        gt_path.display()
    )))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub images: BTreeMap<String, MetricsReport>,
    pub mean: MetricsReport,
}

pub fn cmd_eval(args: &EvalArgs, cfg: &PipelineConfig) -> Result<EvalReport> {
    let tau = args.tau.unwrap_or(cfg.fscore_tau);
    ensure!(tau > 0.0, InvalidInput, "--tau must be > 0");
    let k = args.intrinsics.as_deref().map(load_intrinsics).transpose()?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if args.gt.is_dir() {
        ensure!(args.pred.is_dir(), InvalidInput, "--gt is a directory but --pred is not");
        let preds = collect_depths(&args.pred, &args.pred_name)?;
        let gts = collect_depths(&args.gt, dataset::GT_FILE)?;
        let missing_pred: Vec<&String> = gts.keys().filter(|n| !preds.contains_key(*n)).collect();
        let missing_gt: Vec<&String> = preds.keys().filter(|n| !gts.contains_key(*n)).collect();
        if !missing_pred.is_empty() || !missing_gt.is_empty() {
            for n in &missing_pred {
                eprintln!("unmatched ground truth: {n}");
            }
            for n in &missing_gt {
                eprintln!("unmatched prediction: {n}");
            }
            return Err(Error::InvalidInput(format!(
                "{} ground-truth and {} prediction files have no partner",
                missing_pred.len(),
                missing_gt.len()
            )));
        }
        gts.into_iter().map(|(n, g)| (n.clone(), preds[&n].clone(), g)).collect()
    } else {
        let name = args.pred.file_stem().and_then(|s| s.to_str()).unwrap_or("pred").to_string();
        vec![(name, args.pred.clone(), args.gt.clone())]
    };
    ensure!(!pairs.is_empty(), InvalidInput, "nothing to evaluate");
    let mut images = BTreeMap::new();
    for (name, p, g) in &pairs {
        let pred = load_depth_auto(p)?;
        let gt = load_depth_auto(g)?;
        let kk = scene_intrinsics(g, k.as_ref())?;
        images.insert(name.clone(), evaluate(&pred, &gt, &kk, tau)?);
    }
    let all: Vec<MetricsReport> = images.values().cloned().collect();
    let report = EvalReport {
        mean: MetricsReport::mean(&all)?,
        images,
    };
    println!("{}", MetricsReport::table_header());
    for (n, r) in &report.images {
        println!("{}", r.table_row(n));
    }
    if report.images.len() > 1 {
        println!("{}", report.mean.table_row("mean"));
    }
    if let Some(j) = &args.json {
        write_json(&report, j)?;
    }
    Ok(report)
}

pub fn cmd_synth(args: &SynthArgs, cfg: &PipelineConfig) -> Result<dataset::Manifest> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| Error::format(p, e.to_string()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(w) = args.width {
        spec.scene.width = w;
    }
    if let Some(h) = args.height {
        spec.scene.height = h;
    }
    if let Some(v) = args.noise {
        spec.degrade.noise_sigma = v;
    }
    if let Some(v) = args.blur {
        spec.degrade.blur_sigma = v;
    }
    if let Some(v) = args.bias {
        spec.degrade.bias_amplitude = v;
    }
    ensure!(
        spec.degrade.noise_sigma >= 0.0 && spec.degrade.blur_sigma >= 0.0 && spec.degrade.bias_amplitude >= 0.0,
        InvalidInput,
        "degradation parameters must be >= 0"
    );
    let m = dataset::write_synthetic(&args.out, &spec, args.count, cfg.seed)?;
    log::info!("wrote {} scenes to {}", m.scenes.len(), args.out.display());
    Ok(m)
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub pud: PudAnalysis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropAnalysis>,
}

fn save_map(values: &[f64], weight: Option<&[f64]>, h: usize, w: usize, path: &Path) -> Result<()> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    save_rgb8_png(&colormap(values, weight, max), h, w, path)
}

pub fn cmd_analyze(args: &AnalyzeArgs, cfg: &PipelineConfig) -> Result<AnalyzeReport> {
    let full = load_depth_auto(&args.full)?;
    let reference = load_depth_auto(&args.reference)?;
    let branches = args.pud.iter().map(load_depth_auto).collect::<Result<Vec<_>>>()?;
    let from_pud = recompose_pud(&branches, args.s, full.dims())?;
    let mut pud = analyze_pud(&full, &from_pud, &reference, args.s, &cfg.probe)?;
    create_dir(&args.out)?;
    let map = pud.map.take().expect("probe map");
    save_map(&map.error, Some(&map.weight), map.height, map.width, &args.out.join("pud_error.png"))?;
    let forgiven: Vec<f64> = map.weight.iter().map(|w| 1.0 - w).collect();
    save_map(&forgiven, None, map.height, map.width, &args.out.join("pud_forgiven.png"))?;
    let crop = match (&args.crop, args.crop_x, args.crop_y) {
        (Some(p), Some(x), Some(y)) => {
            let mut c = analyze_crop(&full, &load_depth_auto(p)?, x, y)?;
            let m = c.map.take().expect("probe map");
            save_map(&m.error, Some(&m.weight), m.height, m.width, &args.out.join("crop_error.png"))?;
            Some(c)
        }
        _ => None,
    };
    let report = AnalyzeReport { pud, crop };
    write_json(&report, &args.out.join("stats.json"))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(report)
}

pub fn cmd_unproject(args: &UnprojectArgs) -> Result<usize> {
    let d = load_depth_auto(&args.depth)?;
    let k = load_intrinsics(&args.intrinsics)?;
    let rgb = args.rgb.as_deref().map(load_image_png).transpose()?;
    let pc = unproject(&d, &k, args.scale, rgb.as_ref())?;
    save_ply(&pc, &args.out, !args.ascii)?;
    log::info!("wrote {} points to {}", pc.len(), args.out.display());
    Ok(pc.len())
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let run = || -> Result<()> {
        match &cli.command {
            Command::Refine(a) => cmd_refine(a, &cfg).map(drop),
            Command::Train(a) => cmd_train(a, &cfg).map(drop),
            Command::Eval(a) => cmd_eval(a, &cfg).map(drop),
            Command::Synth(a) => cmd_synth(a, &cfg).map(drop),
            Command::Analyze(a) => cmd_analyze(a, &cfg).map(drop),
            Command::Unproject(a) => cmd_unproject(a).map(drop),
        }
    };
    if cfg.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)
    } else {
        run()
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
