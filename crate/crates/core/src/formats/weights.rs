//! MDPT: a versioned little-endian table of named f32 tensors.
//!
//! ```text
//! "MDPT" | version u32 | count u32 | count × entry
//! entry = name_len u32 | name UTF-8 | rank u32 | rank × dim u32 | prod(dims) × f32
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MDPT_MAGIC: [u8; 4] = *b"MDPT";
pub const MDPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Ordered tensor table; order is preserved so rewrites are byte-identical.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightsFile {
    entries: Vec<NamedTensor>,
}

impl WeightsFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate tensor name {name}")));
        }
        self.entries.push(NamedTensor { name, dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.entries.iter().find(|t| t.name == name)
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MDPT_MAGIC);
        out.extend_from_slice(&MDPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for t in &self.entries {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MDPT_MAGIC {
            return Err("bad magic (expected MDPT)".into());
        }
        let version = cur.u32()?;
        if version != MDPT_VERSION {
            return Err(format!("unsupported MDPT version {version}"));
        }
        let count = cur.u32()? as usize;
        let mut file = WeightsFile::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| "tensor name is not UTF-8".to_string())?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| format!("tensor {name}: size overflow"))?;
            let raw = cur
                .take(n.checked_mul(4).ok_or("size overflow")?)
                .map_err(|_| format!("tensor {name}: payload shorter than declared size"))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            file.insert(name, dims, data).map_err(|e| e.to_string())?;
        }
        if cur.pos != bytes.len() {
            return Err(format!("{} trailing bytes after last tensor", bytes.len() - cur.pos));
        }
        Ok(file)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or("truncated MDPT file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_weights(file: &WeightsFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, file.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightsFile> {
    let path = path.as_ref();
    let bytes = super::read_file(path)?;
    WeightsFile::from_bytes(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn empty_table_roundtrip() {
        let f = WeightsFile::new();
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 12);
        assert_eq!(WeightsFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn two_by_two_bit_exact() {
        let mut f = WeightsFile::new();
        f.insert("w", vec![2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.0e38]).unwrap();
        let back = WeightsFile::from_bytes(&f.to_bytes()).unwrap();
        let bits: Vec<u32> = back.get("w").unwrap().data.iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u32> = f.get("w").unwrap().data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, orig);
        assert_eq!(back.to_bytes(), f.to_bytes());
    }

    #[test]
    fn randomized_fifty_tensor_table() {
        let mut r = Rng::new(50);
        let mut f = WeightsFile::new();
        for i in 0..50 {
            let rank = r.below(4);
            let dims: Vec<usize> = (0..rank).map(|_| 1 + r.below(5)).collect();
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| r.normal(0.0, 10.0) as f32).collect();
            f.insert(format!("t{i}.ü"), dims, data).unwrap();
        }
        assert_eq!(WeightsFile::from_bytes(&f.to_bytes()).unwrap(), f);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut f = WeightsFile::new();
        f.insert("a", vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let good = f.to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(WeightsFile::from_bytes(&bad_magic).unwrap_err().contains("magic"));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(WeightsFile::from_bytes(&bad_version).unwrap_err().contains("version"));

        assert!(WeightsFile::from_bytes(&good[..good.len() - 2]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(WeightsFile::from_bytes(&trailing).is_err());

        assert!(f.insert("a", vec![1], vec![0.0]).is_err());
        assert!(f.insert("b", vec![2], vec![0.0]).is_err());
    }
}
