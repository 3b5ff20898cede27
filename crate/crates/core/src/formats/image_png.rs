use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::{DepthMap, ImageTensor};

pub(crate) struct RawPng {
    pub width: usize,
    pub height: usize,
    pub color: ColorType,
    pub bits: u8,
    /// One sample per channel per pixel, widened to u16, row-major interleaved.
    pub samples: Vec<u16>,
}

impl RawPng {
    pub fn channels(&self) -> usize {
        match self.color {
            ColorType::Grayscale | ColorType::Indexed => 1,
            ColorType::GrayscaleAlpha => 2,
            ColorType::Rgb => 3,
            ColorType::Rgba => 4,
        }
    }
}

pub(crate) fn decode_png(path: &Path) -> Result<RawPng> {
    let bytes = super::read_file(path)?;
    decode_png_bytes(&bytes).map_err(|m| Error::format(path, m))
}

fn decode_png_bytes(bytes: &[u8]) -> std::result::Result<RawPng, String> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| format!("png decode: {e}"))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "png too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format!("png decode: {e}"))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let bits = match info.bit_depth {
        BitDepth::One => 1,
        BitDepth::Two => 2,
        BitDepth::Four => 4,
        BitDepth::Eight => 8,
        BitDepth::Sixteen => 16,
    };
    let mut raw = RawPng {
        width,
        height,
        color: info.color_type,
        bits,
        samples: Vec::new(),
    };
    let per_row = width * raw.channels();
    raw.samples.reserve(per_row * height);
    for row in buf.chunks(info.line_size).take(height) {
        match bits {
            16 => raw
                .samples
                .extend(row.chunks_exact(2).take(per_row).map(|b| u16::from_be_bytes([b[0], b[1]]))),
            8 => raw.samples.extend(row.iter().take(per_row).map(|b| u16::from(*b))),
            _ => {
                let per_byte = 8 / bits as usize;
                let mask = (1u16 << bits) - 1;
                for i in 0..per_row {
                    let byte = u16::from(row[i / per_byte]);
                    let shift = 8 - bits as usize * (i % per_byte + 1);
                    raw.samples.push((byte >> shift) & mask);
                }
            }
        }
    }
    if raw.samples.len() != per_row * height {
        return Err("truncated png image data".into());
    }
    Ok(raw)
}

/// Loads an 8- or 16-bit gray/RGB PNG as intensities in [0, 1]. Alpha is dropped.
pub fn load_image_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let raw = decode_png(path)?;
    let color_channels = match raw.color {
        ColorType::Grayscale | ColorType::GrayscaleAlpha => 1,
        ColorType::Rgb | ColorType::Rgba => 3,
        ColorType::Indexed => return Err(Error::format(path, "indexed PNG is not an intensity image")),
    };
    if raw.bits < 8 {
        return Err(Error::format(path, format!("unsupported bit depth {}", raw.bits)));
    }
    let max = if raw.bits == 16 { 65535.0f32 } else { 255.0 };
    let stride = raw.channels();
    let n = raw.width * raw.height;
    let mut data = vec![0.0f32; color_channels * n];
    for p in 0..n {
        for c in 0..color_channels {
            data[c * n + p] = f32::from(raw.samples[p * stride + c]) / max;
        }
    }
    ImageTensor::new(color_channels, raw.height, raw.width, data)
}

fn write_png(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path, format!("png encode: {e}")))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::format(path, format!("png encode: {e}")))?;
    writer.finish().map_err(|e| Error::format(path, format!("png encode: {e}")))
}

/// Saves a 1- or 3-channel image as an 8-bit PNG.
pub fn save_image_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dims();
    let n = h * w;
    let (color, channels) = match img.channels() {
        1 => (ColorType::Grayscale, 1),
        3 => (ColorType::Rgb, 3),
        c => return Err(Error::InvalidInput(format!("cannot save {c}-channel image as PNG"))),
    };
    let mut bytes = Vec::with_capacity(n * channels);
    for p in 0..n {
        for c in 0..channels {
            bytes.push((img.data()[c * n + p] * 255.0).round() as u8);
        }
    }
    write_png(path, w, h, color, BitDepth::Eight, &bytes)
}

/// Saves interleaved 8-bit RGB pixels.
pub fn save_rgb8_png(rgb: &[u8], height: usize, width: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != height * width * 3 {
        return Err(Error::Shape(format!("rgb buffer {} != {}x{}x3", rgb.len(), height, width)));
    }
    write_png(path, width, height, ColorType::Rgb, BitDepth::Eight, rgb)
}

pub(crate) fn save_gray8_png(values: &[u8], height: usize, width: usize, path: &Path) -> Result<()> {
    write_png(path, width, height, ColorType::Grayscale, BitDepth::Eight, values)
}

pub(crate) fn load_depth_png16(path: &Path) -> Result<DepthMap> {
    let raw = decode_png(path)?;
    if raw.color != ColorType::Grayscale || raw.bits != 16 {
        return Err(Error::format(path, "millimeter depth must be a 16-bit grayscale PNG"));
    }
    let depth: Vec<f32> = raw.samples.iter().map(|v| f32::from(*v) / 1000.0).collect();
    let valid: Vec<bool> = raw.samples.iter().map(|v| *v != 0).collect();
    DepthMap::new(raw.height, raw.width, depth, valid)
}

pub(crate) fn save_depth_png16(d: &DepthMap, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(d.len() * 2);
    for (v, ok) in d.depth().iter().zip(d.valid()) {
        let mm: u16 = if *ok {
            (f64::from(*v) * 1000.0).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        bytes.extend_from_slice(&mm.to_be_bytes());
    }
    write_png(path, d.width(), d.height(), ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

#[cfg(test)]
fn encode_png16_gray(values: &[u16], height: usize, width: usize, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    write_png(path, width, height, ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}
