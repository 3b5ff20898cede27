//! Procedural indoor scenes (axis-aligned room plus boxes on the floor) with
//! exact ray-cast depth, Lambertian shading and instance masks, and a
//! degradation model standing in for an upstream depth estimator.
//!
//! World frame matches the camera frame at zero yaw/pitch: x right, y down,
//! z forward. The camera sits at the origin.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::formats::MaskSet;
use crate::resample::blur_plane;
use crate::rng::Rng;
use crate::tensor::{CameraIntrinsics, DepthMap, ImageTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees; fy = fx.
    pub hfov_deg: f64,
    /// Ranges `[lo, hi]` drawn uniformly per scene.
    pub room_width: [f64; 2],
    pub room_height: [f64; 2],
    /// Distance from the camera to the far wall.
    pub room_depth: [f64; 2],
    /// Distance from the camera to the wall behind it.
    pub back_clearance: f64,
    /// Camera height above the floor.
    pub camera_height: [f64; 2],
    /// Lateral camera offset from the room's center line.
    pub camera_offset: [f64; 2],
    pub camera_yaw_deg: [f64; 2],
    /// Positive pitches the camera down.
    pub camera_pitch_deg: [f64; 2],
    pub box_count: [usize; 2],
    pub box_size: [f64; 2],
    /// Nearest allowed box face, along z.
    pub box_min_distance: f64,
    /// Direction toward the light (world frame, need not be normalized).
    pub light_dir: [f64; 3],
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            hfov_deg: 60.0,
            room_width: [2.6, 3.6],
            room_height: [2.4, 2.8],
            room_depth: [2.2, 3.6],
            back_clearance: 0.5,
            camera_height: [1.1, 1.5],
            camera_offset: [-0.3, 0.3],
            camera_yaw_deg: [-12.0, 12.0],
            camera_pitch_deg: [0.0, 12.0],
            box_count: [1, 4],
            box_size: [0.3, 0.9],
            box_min_distance: 0.9,
            light_dir: [-0.4, -1.0, -0.6],
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    ensure!(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1], Config, "{name}: invalid range {r:?}");
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.width >= 1 && self.height >= 1, Config, "scene image must be at least 1×1");
        ensure!(self.hfov_deg > 0.0 && self.hfov_deg < 170.0, Config, "hfov_deg must be in (0, 170)");
        for (n, r) in [
            ("room_width", self.room_width),
            ("room_height", self.room_height),
            ("room_depth", self.room_depth),
            ("camera_height", self.camera_height),
            ("camera_offset", self.camera_offset),
            ("camera_yaw_deg", self.camera_yaw_deg),
            ("camera_pitch_deg", self.camera_pitch_deg),
            ("box_size", self.box_size),
        ] {
            check_range(n, r)?;
        }
        ensure!(self.room_width[0] > 0.0 && self.room_depth[0] > 0.0, Config, "room must have positive size");
        ensure!(self.back_clearance > 0.0, Config, "back_clearance must be > 0");
        ensure!(self.camera_height[0] > 0.0, Config, "camera must be above the floor");
        ensure!(self.camera_height[1] < self.room_height[0], Config, "camera must be below the ceiling");
        ensure!(
            self.camera_offset[0].abs().max(self.camera_offset[1].abs()) < self.room_width[0] / 2.0,
            Config,
            "camera must be inside the room laterally"
        );
        ensure!(self.box_count[0] <= self.box_count[1], Config, "box_count: invalid range");
        ensure!(self.box_size[0] > 0.0, Config, "box_size must be > 0");
        ensure!(self.light_dir.iter().any(|v| *v != 0.0), Config, "light_dir must be nonzero");
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let fx = self.width as f64 / 2.0 / (self.hfov_deg.to_radians() / 2.0).tan();
        CameraIntrinsics {
            fx,
            fy: fx,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
        }
    }
}

/// Axis-aligned box `[min, max]` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// A generated scene's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    pub room: Aabb,
    pub boxes: Vec<Aabb>,
    /// Camera-to-world rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub intrinsics: CameraIntrinsics,
}

pub const ROOM_FACES: [&str; 6] = ["wall_left", "wall_right", "ceiling", "floor", "wall_behind", "wall_far"];

impl SceneGeometry {
    /// World direction of the ray through pixel (x, y), scaled so its camera-frame z is 1.
    pub fn ray(&self, x: f64, y: f64) -> [f64; 3] {
        let k = &self.intrinsics;
        let c = [(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0];
        let r = &self.rotation;
        [0, 1, 2].map(|i| r[i][0] * c[0] + r[i][1] * c[1] + r[i][2] * c[2])
    }

    /// Nearest hit along `dir` from the origin: (t, instance index, world normal).
    /// Instances 0..6 are the room faces, 6.. the boxes.
    pub fn cast(&self, dir: [f64; 3]) -> (f64, usize, [f64; 3]) {
        // leaving the room: per axis the face the ray is heading toward
        let mut best = (f64::INFINITY, 0usize, [0.0; 3]);
        for a in 0..3 {
            if dir[a] == 0.0 {
                continue;
            }
            let (bound, face) = if dir[a] > 0.0 { (self.room.max[a], 2 * a + 1) } else { (self.room.min[a], 2 * a) };
            let t = bound / dir[a];
            if t < best.0 {
                let mut n = [0.0; 3];
                n[a] = -dir[a].signum();
                best = (t, face, n);
            }
        }
        for (bi, b) in self.boxes.iter().enumerate() {
            let (mut t_in, mut t_out, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
            let mut hit = true;
            #[allow(clippy::needless_range_loop)]
            for a in 0..3 {
                if dir[a] == 0.0 {
                    if 0.0 < b.min[a] || 0.0 > b.max[a] {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let (t0, t1) = (b.min[a] / dir[a], b.max[a] / dir[a]);
                let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                if lo > t_in {
                    t_in = lo;
                    axis = a;
                }
                t_out = t_out.min(hi);
            }
            if hit && t_in <= t_out && t_in > 0.0 && t_in < best.0 {
                let mut n = [0.0; 3];
                n[axis] = -dir[axis].signum();
                best = (t_in, 6 + bi, n);
            }
        }
        best
    }
}

/// Rendered scene: ground truth plus the masks of every visible instance.
#[derive(Debug, Clone)]
pub struct Scene {
    pub rgb: ImageTensor,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub masks: MaskSet,
    pub geometry: SceneGeometry,
}

fn rotation(yaw_deg: f64, pitch_deg: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    // y points down, so a downward pitch rotates +z toward +y
    let (sp, cp) = (-pitch_deg).to_radians().sin_cos();
    // R = R_yaw(about y) · R_pitch(about x)
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| ry[i][k] * rx[k][j]).sum();
        }
    }
    r
}

fn draw(rng: &mut Rng, r: [f64; 2]) -> f64 {
    rng.uniform_range(r[0], r[1])
}

/// Draws a scene from `spec` and renders it.
pub fn generate_scene(spec: &SceneSpec, rng: &mut Rng) -> Result<Scene> {
    spec.validate()?;
    let rw = draw(rng, spec.room_width);
    let rh = draw(rng, spec.room_height);
    let rd = draw(rng, spec.room_depth);
    let cam_h = draw(rng, spec.camera_height);
    let off = draw(rng, spec.camera_offset);
    let yaw = draw(rng, spec.camera_yaw_deg);
    let pitch = draw(rng, spec.camera_pitch_deg);
    let floor = cam_h;
    let room = Aabb {
        min: [-rw / 2.0 - off, floor - rh, -spec.back_clearance],
        max: [rw / 2.0 - off, floor, rd],
    };
    let n_boxes = spec.box_count[0] + rng.below(spec.box_count[1] - spec.box_count[0] + 1);
    let mut boxes = Vec::with_capacity(n_boxes);
    for _ in 0..n_boxes {
        let sx = draw(rng, spec.box_size).min(rw * 0.9);
        let sz = draw(rng, spec.box_size);
        let sh = draw(rng, spec.box_size).min(rh * 0.9);
        let x0 = rng.uniform_range(room.min[0], room.max[0] - sx);
        let z_lo = spec.box_min_distance.min(rd - sz);
        let z0 = rng.uniform_range(z_lo.max(0.0), (rd - sz).max(z_lo.max(0.0)));
        boxes.push(Aabb {
            min: [x0, floor - sh, z0],
            max: [x0 + sx, floor, z0 + sz],
        });
    }
    let n_inst = 6 + boxes.len();
    let albedo: Vec<[f64; 3]> = (0..n_inst)
        .map(|_| [0, 1, 2].map(|_| rng.uniform_range(0.25, 0.9)))
        .collect();
    let geometry = SceneGeometry {
        room,
        boxes,
        rotation: rotation(yaw, pitch),
        intrinsics: spec.intrinsics(),
    };
    Ok(render(&geometry, spec, &albedo))
}

fn render(g: &SceneGeometry, spec: &SceneSpec, albedo: &[[f64; 3]]) -> Scene {
    let (h, w) = (spec.height, spec.width);
    let ln = spec.light_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let light = spec.light_dir.map(|v| v / ln);
    let mut depth = vec![0.0f32; h * w];
    let mut rgb = vec![0.0f32; 3 * h * w];
    let mut label = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (t, inst, n) = g.cast(g.ray(x as f64, y as f64));
            depth[i] = t as f32;
            label[i] = inst;
            let shade = 0.3 + 0.7 * (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).max(0.0);
            for c in 0..3 {
                rgb[c * h * w + i] = (albedo[inst][c] * shade).clamp(0.0, 1.0) as f32;
            }
        }
    }
    let mut masks = MaskSet::new(h, w);
    for (inst, _) in albedo.iter().enumerate() {
        let pixels: Vec<bool> = label.iter().map(|l| *l == inst).collect();
        if pixels.iter().any(|p| *p) {
            let id = if inst < 6 { ROOM_FACES[inst].to_string() } else { format!("box_{}", inst - 6) };
            masks.push(id, pixels).expect("instance ids are unique");
        }
    }
    Scene {
        rgb: ImageTensor::new(3, h, w, rgb).expect("shaded colors are clamped"),
        depth: DepthMap::new(h, w, depth, vec![true; h * w]).expect("ray hits are positive"),
        intrinsics: g.intrinsics,
        masks,
        geometry: g.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSpec {
    /// White noise σ in meters.
    pub noise_sigma: f64,
    /// Blur σ in pixels.
    pub blur_sigma: f64,
    /// Amplitude in meters of a smooth sinusoidal bias field.
    pub bias_amplitude: f64,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            noise_sigma: 0.10,
            blur_sigma: 1.5,
            bias_amplitude: 0.0,
            seed: 0,
        }
    }
}

/// Smallest depth a degraded map may hold.
pub const MIN_DEGRADED_DEPTH: f32 = 1e-3;

/// Blur, then add a low-frequency bias field, then white noise; clamp positive.
/// Invalid pixels stay invalid.
pub fn degrade(gt: &DepthMap, spec: &DegradeSpec, rng: &mut Rng) -> Result<DepthMap> {
    ensure!(
        spec.noise_sigma >= 0.0 && spec.blur_sigma >= 0.0 && spec.bias_amplitude >= 0.0,
        InvalidInput,
        "degradation parameters must be >= 0"
    );
    let (h, w) = gt.dims();
    let d = blur_plane(gt.depth(), h, w, spec.blur_sigma);
    let (kx, ky) = (rng.uniform_range(0.5, 1.5), rng.uniform_range(0.5, 1.5));
    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let u = (kx * x as f64 / w as f64 + ky * y as f64 / h as f64) * std::f64::consts::TAU;
            let bias = spec.bias_amplitude * (u + phase).sin();
            let noise = if spec.noise_sigma > 0.0 { rng.normal(0.0, spec.noise_sigma) } else { 0.0 };
            let v = (f64::from(d[y * w + x]) + bias + noise) as f32;
            out.push(v.max(MIN_DEGRADED_DEPTH));
        }
    }
    DepthMap::new(h, w, out, gt.valid().to_vec())
}
