use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Writes x/y/z float and red/green/blue uchar per vertex, ASCII or binary
/// little-endian. Clouds without colors are written white.
pub fn save_ply(pc: &PointCloud, path: impl AsRef<Path>, binary: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(pc, binary)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_ply(pc: &PointCloud, binary: bool) -> Result<Vec<u8>> {
    if pc.points().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("point cloud contains non-finite coordinates".into()));
    }
    let mut out = Vec::new();
    let format = if binary { "binary_little_endian" } else { "ascii" };
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        pc.len()
    )
    .expect("write to Vec");
    for (i, p) in pc.points().iter().enumerate() {
        let c = pc.colors().map_or([255, 255, 255], |cs| cs[i]);
        let (x, y, z) = (p[0] as f32, p[1] as f32, p[2] as f32);
        if binary {
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
            out.extend_from_slice(&z.to_le_bytes());
            out.extend_from_slice(&c);
        } else {
            writeln!(out, "{x} {y} {z} {} {} {}", c[0], c[1], c[2]).expect("write to Vec");
        }
    }
    Ok(out)
}

/// Reads PLY files in the layout written by [`save_ply`].
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = super::read_file(path)?;
    decode_ply(&bytes).map_err(|m| Error::format(path, m))
}

pub(crate) fn decode_ply(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    const END: &[u8] = b"end_header\n";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or("missing end_header")?
        + END.len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| "non-ASCII header")?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err("missing ply magic".into());
    }
    let mut binary = None;
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "ascii", "1.0"] => binary = Some(false),
            ["format", "binary_little_endian", "1.0"] => binary = Some(true),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| "bad vertex count")?),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let binary = binary.ok_or("unsupported or missing format")?;
    let count = count.ok_or("missing vertex element")?;
    let expected = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ];
    if props.len() != expected.len() || props.iter().zip(expected).any(|((t, n), (et, en))| t != et || n != en) {
        return Err("unexpected vertex properties".into());
    }
    let body = &bytes[header_end..];
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    if binary {
        if body.len() != count * 15 {
            return Err(format!("binary body {} bytes, expected {}", body.len(), count * 15));
        }
        for rec in body.chunks_exact(15) {
            let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
            points.push([f(0), f(4), f(8)]);
            colors.push([rec[12], rec[13], rec[14]]);
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| "non-ASCII body")?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 6 {
                return Err(format!("bad vertex line {line:?}"));
            }
            let f = |i: usize| tok[i].parse::<f32>().map(f64::from).map_err(|_| format!("bad float {:?}", tok[i]));
            let u = |i: usize| tok[i].parse::<u8>().map_err(|_| format!("bad uchar {:?}", tok[i]));
            points.push([f(0)?, f(1)?, f(2)?]);
            colors.push([u(3)?, u(4)?, u(5)?]);
        }
        if points.len() != count {
            return Err(format!("{} vertices, header declares {count}", points.len()));
        }
    }
    PointCloud::with_colors(points, colors).map_err(|e| e.to_string())
}
