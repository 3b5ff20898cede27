//! Pinhole un-projection, projection, and the per-pixel spherical coordinates
//! used by the λ-weighted depth loss.

use crate::error::{ensure, Result};
use crate::tensor::{CameraIntrinsics, DepthMap, ImageTensor};

/// 3D points in meters, camera frame (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        ensure!(
            points.iter().all(|p| p.iter().all(|v| v.is_finite())),
            InvalidInput,
            "point coordinates must be finite"
        );
        Ok(Self { points, colors: None })
    }

    pub fn with_colors(points: Vec<[f64; 3]>, colors: Vec<[u8; 3]>) -> Result<Self> {
        ensure!(
            colors.len() == points.len(),
            Shape,
            "{} colors for {} points",
            colors.len(),
            points.len()
        );
        let mut pc = Self::new(points)?;
        pc.colors = Some(colors);
        Ok(pc)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts every valid pixel (x, y) with depth d to `(s·d·(x−cx)/fx, s·d·(y−cy)/fy, s·d)`.
///
/// Points are emitted in row-major pixel order. When `rgb` is given its
/// first three channels (or the single gray channel) color the points.
pub fn unproject(d: &DepthMap, k: &CameraIntrinsics, scale: f64, rgb: Option<&ImageTensor>) -> Result<PointCloud> {
    k.validate()?;
    ensure!(scale.is_finite() && scale > 0.0, InvalidInput, "scale must be positive, got {scale}");
    if let Some(img) = rgb {
        ensure!(img.dims() == d.dims(), Shape, "color image {:?} vs depth {:?}", img.dims(), d.dims());
    }
    let (h, w) = d.dims();
    let mut points = Vec::with_capacity(d.valid_count());
    let mut colors = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let Some(z) = d.at(y, x) else { continue };
            let z = scale * f64::from(z);
            points.push([z * (x as f64 - k.cx) / k.fx, z * (y as f64 - k.cy) / k.fy, z]);
            if let Some(img) = rgb {
                let ch = |c: usize| (img.get(c.min(img.channels() - 1), y, x) * 255.0).round() as u8;
                colors.push([ch(0), ch(1), ch(2)]);
            }
        }
    }
    if rgb.is_some() {
        PointCloud::with_colors(points, colors)
    } else {
        PointCloud::new(points)
    }
}

/// Pixel coordinates and depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

/// Projects each point; points with z ≤ 0 yield an error entry.
pub fn project(pc: &PointCloud, k: &CameraIntrinsics) -> Vec<Result<Projected>> {
    pc.points()
        .iter()
        .map(|p| {
            ensure!(p[2] > 0.0, InvalidInput, "point {:?} is not in front of the camera", p);
            Ok(Projected {
                x: k.fx * p[0] / p[2] + k.cx,
                y: k.fy * p[1] / p[2] + k.cy,
                depth: p[2],
            })
        })
        .collect()
}

/// Which depth quantity fills the third spherical coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZMode {
    #[default]
    Log,
    Linear,
}

/// Per-pixel (θ, φ, z) over a depth map; entries at invalid pixels are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalMap {
    pub height: usize,
    pub width: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub z: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Ray angles of pixel (x, y): azimuth atan2(r_x, r_z) and elevation asin(r_y)
/// of the normalized ray K⁻¹(x, y, 1).
#[inline]
pub fn ray_angles(x: f64, y: f64, k: &CameraIntrinsics) -> (f64, f64) {
    let rx = (x - k.cx) / k.fx;
    let ry = (y - k.cy) / k.fy;
    let norm = (rx * rx + ry * ry + 1.0).sqrt();
    ((rx / norm).atan2(1.0 / norm), (ry / norm).asin())
}

pub fn to_spherical(d: &DepthMap, k: &CameraIntrinsics) -> Result<SphericalMap> {
    to_spherical_with(d, k, ZMode::Log)
}

pub fn to_spherical_with(d: &DepthMap, k: &CameraIntrinsics, mode: ZMode) -> Result<SphericalMap> {
    k.validate()?;
    let (h, w) = d.dims();
    let n = h * w;
    let mut out = SphericalMap {
        height: h,
        width: w,
        theta: vec![0.0; n],
        phi: vec![0.0; n],
        z: vec![0.0; n],
        valid: d.valid().to_vec(),
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !out.valid[i] {
                continue;
            }
            let depth = f64::from(d.depth()[i]);
            ensure!(depth > 0.0, InvalidInput, "non-positive depth at ({x}, {y})");
            let (theta, phi) = ray_angles(x as f64, y as f64, k);
            out.theta[i] = theta;
            out.phi[i] = phi;
            out.z[i] = match mode {
                ZMode::Log => depth.ln(),
                ZMode::Linear => depth,
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 256.0, 256.0).unwrap()
    }

    fn single(h: usize, w: usize, y: usize, x: usize, v: f32) -> DepthMap {
        let mut d = vec![0.0; h * w];
        d[y * w + x] = v;
        DepthMap::from_values(h, w, d).unwrap()
    }

    #[test]
    fn principal_ray_unit_intrinsics() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let pc = unproject(&DepthMap::filled(1, 1, 1.0).unwrap(), &k, 1.0, None).unwrap();
        assert_eq!(pc.points(), &[[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn principal_point_and_offset_pixel() {
        let pc = unproject(&single(300, 400, 256, 256, 2.0), &k500(), 1.0, None).unwrap();
        assert_eq!(pc.points(), &[[0.0, 0.0, 2.0]]);
        let pc = unproject(&single(300, 400, 256, 356, 2.0), &k500(), 1.0, None).unwrap();
        let p = pc.points()[0];
        assert!((p[0] - 0.4).abs() < 1e-12 && p[1] == 0.0 && p[2] == 2.0);
    }

    #[test]
    fn project_origin_ray() {
        let k = CameraIntrinsics::new(3.0, 3.0, 0.0, 0.0).unwrap();
        let pc = PointCloud::new(vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]).unwrap();
        let out = project(&pc, &k);
        assert_eq!(*out[0].as_ref().unwrap(), Projected { x: 0.0, y: 0.0, depth: 1.0 });
        assert!(out[1].is_err());
    }

    #[test]
    fn scale_leaves_pixels_unchanged() {
        let d = DepthMap::from_values(2, 3, vec![1.0, 2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let k = CameraIntrinsics::new(2.0, 3.0, 1.0, 0.5).unwrap();
        let a = project(&unproject(&d, &k, 1.0, None).unwrap(), &k);
        let b = project(&unproject(&d, &k, 2.5, None).unwrap(), &k);
        for (pa, pb) in a.iter().zip(&b) {
            let (pa, pb) = (pa.as_ref().unwrap(), pb.as_ref().unwrap());
            assert!((pa.x - pb.x).abs() < 1e-12 && (pa.y - pb.y).abs() < 1e-12);
            assert!((pb.depth - 2.5 * pa.depth).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_on_axis_and_quarter_turn() {
        let k = CameraIntrinsics::new(10.0, 10.0, 5.0, 5.0).unwrap();
        let d = DepthMap::filled(11, 16, 3.0).unwrap();
        let s = to_spherical(&d, &k).unwrap();
        assert_eq!((s.theta[5 * 16 + 5], s.phi[5 * 16 + 5]), (0.0, 0.0));
        // one focal length to the right of the principal point
        let i = 5 * 16 + 15;
        assert!((s.theta[i] - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(s.phi[i], 0.0);
        assert!((s.z[i] - 3.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn angles_independent_of_depth() {
        let k = CameraIntrinsics::new(7.0, 9.0, 2.0, 1.0).unwrap();
        let a = to_spherical(&DepthMap::filled(4, 5, 1.0).unwrap(), &k).unwrap();
        let vals: Vec<f32> = (0..20).map(|i| 0.5 + i as f32 * 0.37).collect();
        let b = to_spherical(&DepthMap::from_values(4, 5, vals).unwrap(), &k).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.phi, b.phi);
    }

    #[test]
    fn invalid_pixels_skipped() {
        let d = DepthMap::from_values(1, 3, vec![1.0, 0.0, 2.0]).unwrap();
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(unproject(&d, &k, 1.0, None).unwrap().len(), 2);
        assert!(unproject(&d, &k, 0.0, None).is_err());
    }
}
