//! Grid types shared by every stage of the pipeline.

use crate::error::{ensure, Result};

/// C×H×W grid of unit-interval intensities, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image, rejecting wrong lengths and values outside [0, 1].
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == channels * height * width,
            Shape,
            "image data length {} != {}x{}x{}",
            data.len(),
            channels,
            height,
            width
        );
        ensure!(
            data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            InvalidInput,
            "image values must be finite and within [0, 1]"
        );
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an image after clamping every value into [0, 1]; NaN becomes 0.
    pub fn from_clamped(channels: usize, height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(channels, height, width, data)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        let value = value.clamp(0.0, 1.0);
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Copies the sub-rectangle starting at (x, y).
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        ensure!(
            x + w <= self.width && y + h <= self.height && w > 0 && h > 0,
            Shape,
            "crop {}x{}+{}+{} outside {}x{} image",
            w,
            h,
            x,
            y,
            self.width,
            self.height
        );
        let mut data = Vec::with_capacity(self.channels * w * h);
        for c in 0..self.channels {
            for yy in y..y + h {
                let row = (c * self.height + yy) * self.width;
                data.extend_from_slice(&self.data[row + x..row + x + w]);
            }
        }
        Ok(Self {
            channels: self.channels,
            height: h,
            width: w,
            data,
        })
    }
}

/// H×W metric depth in meters with a per-pixel validity mask.
///
/// Invalid pixels carry depth 0 and are excluded from every loss and metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depth: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map; pixels that are flagged valid must hold finite positive depth.
    pub fn new(height: usize, width: usize, depth: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = height * width;
        ensure!(
            depth.len() == n && valid.len() == n,
            Shape,
            "depth map buffers ({}, {}) do not match {}x{}",
            depth.len(),
            valid.len(),
            height,
            width
        );
        ensure!(
            depth
                .iter()
                .zip(&valid)
                .all(|(d, v)| !*v || (d.is_finite() && *d > 0.0)),
            InvalidInput,
            "valid depth must be finite and positive"
        );
        let depth = depth
            .into_iter()
            .zip(&valid)
            .map(|(d, v)| if *v { d } else { 0.0 })
            .collect();
        Ok(Self {
            height,
            width,
            depth,
            valid,
        })
    }

    /// Validity is inferred: finite positive values are valid, everything else is a hole.
    pub fn from_values(height: usize, width: usize, depth: Vec<f32>) -> Result<Self> {
        let valid = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Self::new(height, width, depth, valid)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::from_values(height, width, vec![value; height * width])
    }

    pub fn invalid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            depth: vec![0.0; height * width],
            valid: vec![false; height * width],
        }
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
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        ensure!(
            x + w <= self.width && y + h <= self.height && w > 0 && h > 0,
            Shape,
            "crop {}x{}+{}+{} outside {}x{} depth map",
            w,
            h,
            x,
            y,
            self.width,
            self.height
        );
        let mut depth = Vec::with_capacity(w * h);
        let mut valid = Vec::with_capacity(w * h);
        for yy in y..y + h {
            let row = yy * self.width;
            depth.extend_from_slice(&self.depth[row + x..row + x + w]);
            valid.extend_from_slice(&self.valid[row + x..row + x + w]);
        }
        Ok(Self {
            height: h,
            width: w,
            depth,
            valid,
        })
    }

    /// Keeps only pixels where `keep` is true; the rest become holes.
    pub fn masked(&self, keep: &[bool]) -> Result<Self> {
        ensure!(keep.len() == self.len(), Shape, "mask length {} != {}", keep.len(), self.len());
        let valid: Vec<bool> = self.valid.iter().zip(keep).map(|(v, k)| *v && *k).collect();
        let depth = self
            .depth
            .iter()
            .zip(&valid)
            .map(|(d, v)| if *v { *d } else { 0.0 })
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            depth,
            valid,
        })
    }

    /// Median of valid depths, averaging the two central values for even counts.
    pub fn median(&self) -> Option<f32> {
        let mut v: Vec<f32> = self.valid_values().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f32::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            ((f64::from(v[n / 2 - 1]) + f64::from(v[n / 2])) / 2.0) as f32
        })
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.depth.iter().zip(&self.valid).filter(|(_, v)| **v).map(|(d, _)| *d)
    }

    pub fn into_parts(self) -> (usize, usize, Vec<f32>, Vec<bool>) {
        (self.height, self.width, self.depth, self.valid)
    }
}

/// Pinhole intrinsics; pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.fx.is_finite() && self.fy.is_finite() && self.cx.is_finite() && self.cy.is_finite(),
            InvalidInput,
            "intrinsics must be finite"
        );
        ensure!(
            self.fx > 0.0 && self.fy > 0.0,
            InvalidInput,
            "focal lengths must be positive (fx={}, fy={})",
            self.fx,
            self.fy
        );
        Ok(())
    }

    /// Intrinsics of the same camera after resampling the image by the given factors.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
        }
    }

    /// Intrinsics of a crop whose top-left corner is (x0, y0).
    pub fn cropped(&self, x0: f64, y0: f64) -> Self {
        Self {
            cx: self.cx - x0,
            cy: self.cy - y0,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, 1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(ImageTensor::new(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn depth_invalid_pixels_zeroed() {
        let d = DepthMap::new(1, 2, vec![3.0, 4.0], vec![true, false]).unwrap();
        assert_eq!(d.depth(), &[3.0, 0.0]);
        assert!(DepthMap::new(1, 1, vec![-1.0], vec![true]).is_err());
        let inferred = DepthMap::from_values(1, 3, vec![1.0, 0.0, f32::NAN]).unwrap();
        assert_eq!(inferred.valid(), &[true, false, false]);
    }

    #[test]
    fn median_even_and_odd() {
        let d = DepthMap::from_values(1, 4, vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(d.median(), Some(2.5));
        let d = DepthMap::new(1, 3, vec![5.0, 1.0, 3.0], vec![true, true, true]).unwrap();
        assert_eq!(d.median(), Some(3.0));
        assert_eq!(DepthMap::invalid(2, 2).median(), None);
    }

    #[test]
    fn intrinsics_reject_bad_focal() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).is_ok());
    }
}
