//! File I/O: PNG images and depth, PFM, JSON intrinsics, binary masks, PLY
//! point clouds, and the MDPT tensor-table format.

mod image_png;
mod intrinsics;
mod masks;
mod pfm;
mod ply;
mod weights;

pub use image_png::{load_image_png, save_image_png, save_rgb8_png};
pub use intrinsics::{load_intrinsics, parse_intrinsics, save_intrinsics};
pub use masks::{load_masks, save_label_png, save_masks_dir, MaskSet};
pub use pfm::{read_pfm, write_pfm};
pub use ply::{read_ply, save_ply};
pub use weights::{load_weights, save_weights, NamedTensor, WeightsFile, MDPT_MAGIC, MDPT_VERSION};

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DepthMap;

/// On-disk depth encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnit {
    /// 16-bit grayscale PNG in millimeters; 0 marks a hole.
    MillimeterPng16,
    /// Single-channel PFM in meters.
    PfmMeters,
}

impl DepthUnit {
    /// Picks the encoding from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => Ok(DepthUnit::MillimeterPng16),
            Some("pfm") => Ok(DepthUnit::PfmMeters),
            _ => Err(Error::format(path, "unknown depth extension (expected .png or .pfm)")),
        }
    }
}

/// Loads depth in meters. Zero (PNG) and negative or non-finite (PFM) values become holes.
pub fn load_depth(path: impl AsRef<Path>, unit: DepthUnit) -> Result<DepthMap> {
    Ok(load_depth_with_report(path, unit)?.0)
}

/// Like [`load_depth`], also returning how many negative depths were dropped.
pub fn load_depth_with_report(path: impl AsRef<Path>, unit: DepthUnit) -> Result<(DepthMap, usize)> {
    let path = path.as_ref();
    match unit {
        DepthUnit::MillimeterPng16 => Ok((image_png::load_depth_png16(path)?, 0)),
        DepthUnit::PfmMeters => {
            let (h, w, _channels, values) = pfm::read_pfm_file(path)?;
            let negative = values.iter().filter(|v| **v < 0.0).count();
            if negative > 0 {
                log::warn!("{}: {} negative depth values marked invalid", path.display(), negative);
            }
            Ok((DepthMap::from_values(h, w, values)?, negative))
        }
    }
}

/// Loads depth choosing the encoding from the extension.
pub fn load_depth_auto(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    load_depth(path, DepthUnit::from_path(path)?)
}

/// Writes depth; holes are stored as 0.
pub fn save_depth(d: &DepthMap, path: impl AsRef<Path>, unit: DepthUnit) -> Result<()> {
    let path = path.as_ref();
    match unit {
        DepthUnit::MillimeterPng16 => image_png::save_depth_png16(d, path),
        DepthUnit::PfmMeters => {
            let bytes = write_pfm(d.height(), d.width(), 1, d.depth());
            std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
