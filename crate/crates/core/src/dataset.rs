//! On-disk scene datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/scene_0000/rgb.png          8-bit RGB
//! <root>/scene_0000/depth.png        ground truth, 16-bit millimeters
//! <root>/scene_0000/init_depth.png   depth to refine, 16-bit millimeters
//! <root>/scene_0000/intrinsics.json
//! <root>/scene_0000/masks/<id>.png   optional instance masks
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::formats::{
    load_depth, load_image_png, load_intrinsics, load_masks, save_depth, save_image_png, save_intrinsics, save_masks_dir,
    DepthUnit,
};
use crate::rng::Rng;
use crate::synth::{degrade, generate_scene, DegradeSpec, SceneSpec};
use crate::train::TrainScene;

pub const MANIFEST: &str = "manifest.json";
pub const RGB_FILE: &str = "rgb.png";
pub const GT_FILE: &str = "depth.png";
pub const INIT_FILE: &str = "init_depth.png";
pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const MASKS_DIR: &str = "masks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
}

/// How a synthetic dataset was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub scene: SceneSpec,
    pub degrade: DegradeSpec,
}

/// Synthesis settings as read from a spec file: `[scene]` and `[degrade]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    pub degrade: DegradeSpec,
}

pub fn scene_name(i: usize) -> String {
    format!("scene_{i:04}")
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(root: impl AsRef<Path>) -> Result<Manifest> {
    let path = root.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Generates `count` scenes. Scene i uses stream 2i of `seed` for geometry
/// and 2i+1 for degradation, so any scene can be regenerated on its own.
pub fn write_synthetic(root: impl AsRef<Path>, spec: &SynthSpec, count: usize, seed: u64) -> Result<Manifest> {
    let root = root.as_ref();
    spec.scene.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut names = Vec::with_capacity(count);
    for i in 0..count {
        let name = scene_name(i);
        let dir = root.join(&name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let scene = generate_scene(&spec.scene, &mut Rng::with_stream(seed, 2 * i as u64))?;
        let init = degrade(&scene.depth, &spec.degrade, &mut Rng::with_stream(seed, 2 * i as u64 + 1))?;
        save_image_png(&scene.rgb, dir.join(RGB_FILE))?;
        save_depth(&scene.depth, dir.join(GT_FILE), DepthUnit::MillimeterPng16)?;
        save_depth(&init, dir.join(INIT_FILE), DepthUnit::MillimeterPng16)?;
        save_intrinsics(&scene.intrinsics, dir.join(INTRINSICS_FILE))?;
        save_masks_dir(&scene.masks, dir.join(MASKS_DIR))?;
        names.push(name);
    }
    let manifest = Manifest {
        scenes: names,
        generator: Some(GeneratorInfo {
            seed,
            scene: spec.scene.clone(),
            degrade: spec.degrade,
        }),
    };
    write_json(&manifest, &root.join(MANIFEST))?;
    Ok(manifest)
}

pub fn scene_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

pub fn load_scene(root: impl AsRef<Path>, name: &str) -> Result<TrainScene> {
    let dir = scene_dir(root.as_ref(), name);
    let rgb = load_image_png(dir.join(RGB_FILE))?;
    let gt = load_depth(dir.join(GT_FILE), DepthUnit::MillimeterPng16)?;
    let init = load_depth(dir.join(INIT_FILE), DepthUnit::MillimeterPng16)?;
    let intrinsics = load_intrinsics(dir.join(INTRINSICS_FILE))?;
    let mask_dir = dir.join(MASKS_DIR);
    let masks = if mask_dir.is_dir() { Some(load_masks(&mask_dir)?) } else { None };
    ensure!(
        rgb.dims() == gt.dims() && gt.dims() == init.dims(),
        Shape,
        "{}: rgb {:?}, depth {:?} and init_depth {:?} differ in size",
        dir.display(),
        rgb.dims(),
        gt.dims(),
        init.dims()
    );
    Ok(TrainScene {
        name: name.to_string(),
        rgb,
        gt,
        init,
        intrinsics,
        masks,
    })
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<TrainScene>> {
    let root = root.as_ref();
    let manifest = load_manifest(root)?;
    manifest.scenes.iter().map(|n| load_scene(root, n)).collect()
}
