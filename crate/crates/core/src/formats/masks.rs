use std::path::Path;

use png::ColorType;

use super::image_png::{decode_png, save_gray8_png};
use crate::error::{ensure, Error, Result};

/// Instance masks sharing the image grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    height: usize,
    width: usize,
    masks: Vec<(String, Vec<bool>)>,
}

impl MaskSet {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            masks: Vec::new(),
        }
    }

    /// Adds a mask; it must match the grid, be nonempty and carry a fresh id.
    pub fn push(&mut self, id: impl Into<String>, pixels: Vec<bool>) -> Result<()> {
        let id = id.into();
        ensure!(
            pixels.len() == self.height * self.width,
            Shape,
            "mask {id} has {} pixels, expected {}x{}",
            pixels.len(),
            self.height,
            self.width
        );
        ensure!(pixels.iter().any(|p| *p), InvalidInput, "mask {id} is empty");
        ensure!(
            self.masks.iter().all(|(other, _)| *other != id),
            InvalidInput,
            "duplicate mask id {id}"
        );
        self.masks.push((id, pixels));
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.masks[i].0
    }

    pub fn mask(&self, i: usize) -> &[bool] {
        &self.masks[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[bool])> {
        self.masks.iter().map(|(id, m)| (id.as_str(), m.as_slice()))
    }

    /// Pixels covered by at least one mask.
    pub fn union(&self) -> Vec<bool> {
        let mut out = vec![false; self.height * self.width];
        for (_, m) in &self.masks {
            for (o, v) in out.iter_mut().zip(m) {
                *o |= *v;
            }
        }
        out
    }
}

/// Loads masks from a directory of binary PNGs (nonzero = inside, id = file
/// stem, sorted by name) or from one label PNG where 0 is background and every
/// other value is an instance.
pub fn load_masks(path: impl AsRef<Path>) -> Result<MaskSet> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let mut set: Option<MaskSet> = None;
        for file in files {
            let raw = decode_png(&file)?;
            let stride = raw.channels();
            let pixels: Vec<bool> = raw
                .samples
                .chunks_exact(stride)
                .map(|px| px.iter().take(stride.min(3)).any(|v| *v != 0))
                .collect();
            let set = set.get_or_insert_with(|| MaskSet::new(raw.height, raw.width));
            if set.dims() != (raw.height, raw.width) {
                return Err(Error::format(
                    &file,
                    format!(
                        "mask is {}x{}, others are {}x{}",
                        raw.width, raw.height, set.width, set.height
                    ),
                ));
            }
            if !pixels.iter().any(|p| *p) {
                log::warn!("{}: empty mask skipped", file.display());
                continue;
            }
            let id = file.file_stem().and_then(|s| s.to_str()).unwrap_or("mask").to_string();
            set.push(id, pixels)?;
        }
        Ok(set.unwrap_or_default())
    } else {
        let raw = decode_png(path)?;
        if !matches!(raw.color, ColorType::Indexed | ColorType::Grayscale) || raw.bits > 8 {
            return Err(Error::format(path, "label masks must be an 8-bit (or smaller) indexed or gray PNG"));
        }
        let mut set = MaskSet::new(raw.height, raw.width);
        let mut labels: Vec<u16> = raw.samples.iter().copied().filter(|v| *v != 0).collect();
        labels.sort_unstable();
        labels.dedup();
        for label in labels {
            let pixels = raw.samples.iter().map(|v| *v == label).collect();
            set.push(label.to_string(), pixels)?;
        }
        Ok(set)
    }
}

/// Writes one binary PNG per mask (`<id>.png`, 255 inside).
pub fn save_masks_dir(set: &MaskSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, m) in set.iter() {
        let bytes: Vec<u8> = m.iter().map(|v| if *v { 255 } else { 0 }).collect();
        save_gray8_png(&bytes, set.height, set.width, &dir.join(format!("{id}.png")))?;
    }
    Ok(())
}

/// Writes an 8-bit label image (0 = background).
pub fn save_label_png(labels: &[u8], height: usize, width: usize, path: impl AsRef<Path>) -> Result<()> {
    ensure!(labels.len() == height * width, Shape, "label buffer size mismatch");
    save_gray8_png(labels, height, width, path.as_ref())
}
