//! Portable float map: `Pf` (1 channel) or `PF` (3 channels), rows stored
//! bottom-to-top, negative scale = little-endian.

use std::path::Path;

use crate::error::{Error, Result};

/// Encodes row-major top-to-bottom values (interleaved when `channels == 3`)
/// as little-endian PFM with scale -1.
pub fn write_pfm(height: usize, width: usize, channels: usize, values: &[f32]) -> Vec<u8> {
    assert!(channels == 1 || channels == 3, "PFM holds 1 or 3 channels");
    assert_eq!(values.len(), height * width * channels);
    let magic = if channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    let row_len = width * channels;
    for y in (0..height).rev() {
        for v in &values[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes PFM bytes into (height, width, channels, top-to-bottom values).
pub fn read_pfm(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, Vec<f32>), String> {
    let mut pos = 0;
    let mut next_line = || -> std::result::Result<String, String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err("truncated PFM header".into());
        }
        let line = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| "non-ASCII PFM header".to_string())?
            .trim()
            .to_string();
        pos += 1;
        Ok(line)
    };
    let channels = match next_line()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format!("bad PFM magic {other:?}")),
    };
    let dims = next_line()?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (width, height) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) => (w, h),
        _ => return Err(format!("bad PFM dimensions {dims:?}")),
    };
    let scale: f32 = next_line()?
        .parse()
        .map_err(|_| "bad PFM scale".to_string())?;
    if scale == 0.0 || !scale.is_finite() {
        return Err("PFM scale must be nonzero".into());
    }
    let little = scale < 0.0;
    let count = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() != count * 4 {
        return Err(format!("PFM payload {} bytes, expected {}", payload.len(), count * 4));
    }
    let row_len = width * channels;
    let mut values = vec![0.0f32; count];
    for (file_row, chunk) in payload.chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            values[y * row_len + i] = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok((height, width, channels, values))
}

/// Reads a PFM file keeping only the first channel.
pub(crate) fn read_pfm_file(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = super::read_file(path)?;
    let (h, w, c, values) = read_pfm(&bytes).map_err(|m| Error::format(path, m))?;
    let first = if c == 1 {
        values
    } else {
        values.chunks_exact(c).map(|px| px[0]).collect()
    };
    Ok((h, w, c, first))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn little_endian_roundtrip_is_bit_exact() {
        let values = vec![1.5f32, -0.0, 3.25e-7, 1234.5, f32::MIN_POSITIVE, 2.0];
        let bytes = write_pfm(2, 3, 1, &values);
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        let (h, w, c, back) = read_pfm(&bytes).unwrap();
        assert_eq!((h, w, c), (2, 3, 1));
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&values));
        assert_eq!(write_pfm(h, w, c, &back), bytes);
    }

    #[test]
    fn big_endian_and_row_order() {
        // one column, two rows; file stores bottom row first
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.0f32.to_be_bytes());
        bytes.extend_from_slice(&1.0f32.to_be_bytes());
        let (_, _, _, v) = read_pfm(&bytes).unwrap();
        assert_eq!(v, vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(read_pfm(b"P6\n1 1\n-1\n\0\0\0\0").is_err());
        assert!(read_pfm(b"Pf\n2 2\n-1\n\0\0\0\0").is_err());
        assert!(read_pfm(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
    }
}
