//! Analytic scenes, pinhole depth ray casting and depth-image randomization.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{quat_mul, rotate_vec, Quat, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Box rotated about the world z axis by `yaw`.
    Box { center: Vec3, half_extents: Vec3, yaw: f64 },
    /// Vertical cylinder; `center` is the mid-height point.
    Cylinder { center: Vec3, radius: f64, height: f64 },
}

/// A scene body. Bodies with a velocity follow ballistic motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec3>,
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self { shape: Shape::Sphere { center, radius }, velocity: None }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3, yaw: f64) -> Self {
        Self { shape: Shape::Box { center, half_extents, yaw }, velocity: None }
    }

    pub fn cylinder(center: Vec3, radius: f64, height: f64) -> Self {
        Self { shape: Shape::Cylinder { center, radius, height }, velocity: None }
    }

    pub fn moving(mut self, velocity: Vec3) -> Self {
        self.velocity = Some(velocity);
        self
    }

    pub fn center(&self) -> Vec3 {
        match self.shape {
            Shape::Sphere { center, .. } | Shape::Box { center, .. } | Shape::Cylinder { center, .. } => center,
        }
    }

    fn center_mut(&mut self) -> &mut Vec3 {
        match &mut self.shape {
            Shape::Sphere { center, .. } | Shape::Box { center, .. } | Shape::Cylinder { center, .. } => center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.shape {
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Shape::Cylinder { radius, height, .. } => *radius > 0.0 && *height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("primitive extents must be positive".into()))
        }
    }

    /// Smallest `t >= 0` with `origin + t·dir` on or inside the body; `dir` is unit.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match &self.shape {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let (t0, t1) = (-b - s, -b + s);
                if t1 < 0.0 {
                    None
                } else {
                    Some(t0.max(0.0))
                }
            }
            Shape::Box { center, half_extents, yaw } => {
                let (s, c) = yaw.sin_cos();
                let to_local = |v: Vec3| Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
                let o = to_local(origin - center);
                let d = to_local(*dir);
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if d[i].abs() < 1e-15 {
                        if o[i].abs() > half_extents[i] {
                            return None;
                        }
                    } else {
                        let a = (-half_extents[i] - o[i]) / d[i];
                        let b = (half_extents[i] - o[i]) / d[i];
                        lo = lo.max(a.min(b));
                        hi = hi.min(a.max(b));
                    }
                }
                if hi < lo.max(0.0) {
                    None
                } else {
                    Some(lo.max(0.0))
                }
            }
            Shape::Cylinder { center, radius, height } => {
                let o = origin - center;
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                let a = dir.x * dir.x + dir.y * dir.y;
                let rr = o.x * o.x + o.y * o.y - radius * radius;
                if a < 1e-15 {
                    if rr > 0.0 {
                        return None;
                    }
                } else {
                    let b = o.x * dir.x + o.y * dir.y;
                    let disc = b * b - a * rr;
                    if disc < 0.0 {
                        return None;
                    }
                    let s = disc.sqrt();
                    lo = (-b - s) / a;
                    hi = (-b + s) / a;
                }
                let half = 0.5 * height;
                if dir.z.abs() < 1e-15 {
                    if o.z.abs() > half {
                        return None;
                    }
                } else {
                    let a = (-half - o.z) / dir.z;
                    let b = (half - o.z) / dir.z;
                    lo = lo.max(a.min(b));
                    hi = hi.min(a.max(b));
                }
                if hi < lo.max(0.0) {
                    None
                } else {
                    Some(lo.max(0.0))
                }
            }
        }
    }

    /// Signed distance from `p` to the body surface (negative inside).
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match &self.shape {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { center, half_extents, yaw } => {
                let (s, c) = yaw.sin_cos();
                let v = p - center;
                let local = Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
                let q = local.abs() - half_extents;
                q.map(|x| x.max(0.0)).norm() + q.max().min(0.0)
            }
            Shape::Cylinder { center, radius, height } => {
                let v = p - center;
                let dx = v.xy().norm() - radius;
                let dz = v.z.abs() - 0.5 * height;
                dx.max(0.0).hypot(dz.max(0.0)) + dx.max(dz).min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Distance to the nearest surface; `+∞` for an empty scene.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.primitives.iter().map(|pr| pr.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn nearest_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(origin, dir))
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        for p in &scene.primitives {
            p.validate()?;
        }
        Ok(scene)
    }
}

/// Pinhole depth camera looking along its local +x axis (y left, z up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub hfov: f64,
    pub vfov: f64,
    pub max_range: f64,
    pub near: f64,
    /// Camera origin in the body frame.
    pub mount_offset: Vec3,
    /// Camera-to-body rotation.
    pub mount_rotation: Quat,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width: 212,
            height: 120,
            hfov: 87f64.to_radians(),
            vfov: 58f64.to_radians(),
            max_range: 4.5,
            near: 0.05,
            mount_offset: Vec3::zeros(),
            mount_rotation: Quat::IDENTITY,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let pi = std::f64::consts::PI;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("camera resolution must be non-zero".into()));
        }
        if !(0.0 < self.near && self.near < self.max_range) {
            return Err(Error::InvalidConfig("need 0 < near < max_range".into()));
        }
        if !(self.hfov > 0.0 && self.hfov < pi && self.vfov > 0.0 && self.vfov < pi) {
            return Err(Error::InvalidConfig("fields of view must lie in (0, pi)".into()));
        }
        Ok(())
    }

    /// Unit ray direction through pixel `(row, col)` in camera coordinates.
    pub fn ray_dir(&self, row: usize, col: usize) -> Vec3 {
        let u = (col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0;
        let v = (row as f64 + 0.5) / self.height as f64 * 2.0 - 1.0;
        Vec3::new(1.0, -u * (0.5 * self.hfov).tan(), -v * (0.5 * self.vfov).tan()).normalize()
    }

    /// World pose of the camera for a vehicle at `position` with `attitude`.
    pub fn pose_for(&self, position: &Vec3, attitude: &Quat) -> CameraPose {
        CameraPose {
            position: position + rotate_vec(attitude, &self.mount_offset),
            rotation: quat_mul(attitude, &self.mount_rotation),
        }
    }
}

/// Camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Quat,
}

/// Row-major depth image in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

pub const DEPTH_MAGIC: [u8; 4] = *b"QDEP";

impl DepthImage {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        Self { width, height, data: rows.iter().flatten().copied().collect() }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    /// Raw dump: magic `QDEP`, `u32` width, `u32` height, then `f32` pixels,
    /// all little-endian, row-major.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&DEPTH_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)?;
        if header[..4] != DEPTH_MAGIC {
            return Err(Error::Parse("bad depth image magic".into()));
        }
        let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; width * height * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { width, height, data })
    }

    /// Coarse ASCII rendering, nearer is darker.
    pub fn ascii_preview(&self, cols: usize, max_range: f64) -> String {
        const RAMP: &[u8] = b"@%#*+=-:. ";
        let cols = cols.clamp(1, self.width.max(1));
        let step_c = self.width as f64 / cols as f64;
        let step_r = step_c * 2.0;
        let rows = ((self.height as f64 / step_r).ceil() as usize).max(1);
        let mut out = String::new();
        for r in 0..rows {
            for c in 0..cols {
                let pr = ((r as f64 + 0.5) * step_r) as usize;
                let pc = ((c as f64 + 0.5) * step_c) as usize;
                let v = self.get(pr.min(self.height - 1), pc.min(self.width - 1)) as f64;
                let idx = ((v / max_range).clamp(0.0, 1.0) * (RAMP.len() - 1) as f64).round() as usize;
                out.push(RAMP[idx] as char);
            }
            out.push('\n');
        }
        out
    }
}

/// Per-pixel distance along each ray to the nearest surface, clamped to
/// `[near, max_range]`; misses read `max_range`.
pub fn raycast(scene: &Scene, pose: &CameraPose, camera: &CameraModel) -> DepthImage {
    let (w, h) = (camera.width, camera.height);
    let mut data = vec![camera.max_range as f32; w * h];
    if scene.is_empty() {
        return data_image(w, h, data);
    }
    data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for (col, px) in out.iter_mut().enumerate() {
            let dir = rotate_vec(&pose.rotation, &camera.ray_dir(row, col));
            let d = scene
                .nearest_hit(&pose.position, &dir)
                .map_or(camera.max_range, |t| t.clamp(camera.near, camera.max_range));
            *px = d as f32;
        }
    });
    data_image(w, h, data)
}

fn data_image(width: usize, height: usize, data: Vec<f32>) -> DepthImage {
    DepthImage { width, height, data }
}

/// Smallest pixel value, used as the obstacle-clearance estimate.
pub fn min_depth(img: &DepthImage) -> f64 {
    img.data.iter().copied().fold(f32::INFINITY, f32::min) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthNoise {
    pub enabled: bool,
    /// Std-dev of the per-pixel multiplicative factor `1 + ε`.
    pub mult_std: f64,
    /// Std-dev of per-pixel additive noise, m.
    pub add_std: f64,
    /// Blend weight of the 3×3 box blur in `[0, 1]`.
    pub blur: f64,
    /// Per-image scale drawn from `[1 - scale_range, 1 + scale_range]`.
    pub scale_range: f64,
    /// Per-image offset drawn from `[-offset_range, offset_range]`, m.
    pub offset_range: f64,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self { enabled: true, mult_std: 0.02, add_std: 0.02, blur: 0.5, scale_range: 0.05, offset_range: 0.05 }
    }
}

impl DepthNoise {
    pub fn off() -> Self {
        Self { enabled: false, mult_std: 0.0, add_std: 0.0, blur: 0.0, scale_range: 0.0, offset_range: 0.0 }
    }
}

fn box_blur(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                    let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    sum += data[rr * w + cc];
                }
            }
            out[r * w + c] = sum / 9.0;
        }
    }
    out
}

/// Multiplicative noise, additive noise, blur, global scale/offset, then
/// re-clamping to `[near, max_range]`.
pub fn dr_depth<R: Rng + ?Sized>(
    img: &DepthImage,
    rng: &mut R,
    params: &DepthNoise,
    near: f64,
    max_range: f64,
) -> DepthImage {
    if !params.enabled {
        return img.clone();
    }
    let mut px: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    if params.mult_std > 0.0 {
        let n = Normal::new(0.0, params.mult_std).expect("finite std-dev");
        px.iter_mut().for_each(|v| *v *= 1.0 + n.sample(rng));
    }
    if params.add_std > 0.0 {
        let n = Normal::new(0.0, params.add_std).expect("finite std-dev");
        px.iter_mut().for_each(|v| *v += n.sample(rng));
    }
    if params.blur > 0.0 {
        let blurred = box_blur(&px, img.width, img.height);
        let a = params.blur.clamp(0.0, 1.0);
        px.iter_mut().zip(blurred).for_each(|(v, b)| *v = (1.0 - a) * *v + a * b);
    }
    let scale = if params.scale_range > 0.0 {
        rng.random_range(1.0 - params.scale_range..=1.0 + params.scale_range)
    } else {
        1.0
    };
    let offset = if params.offset_range > 0.0 {
        rng.random_range(-params.offset_range..=params.offset_range)
    } else {
        0.0
    };
    let data = px.iter().map(|v| (v * scale + offset).clamp(near, max_range) as f32).collect();
    DepthImage { width: img.width, height: img.height, data }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trunks: usize,
    /// Horizontal sampling rectangle `[x_min, x_max, y_min, y_max]`.
    pub area: [f64; 4],
    pub radius_min: f64,
    pub radius_max: f64,
    /// Minimum pairwise trunk-centre distance, also the clearance kept around
    /// the start and goal points (measured from the trunk surface).
    pub min_clearance: f64,
    pub height: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trunks: 20,
            area: [-4.0, 4.0, -4.0, 4.0],
            radius_min: 0.1,
            radius_max: 0.25,
            min_clearance: 1.2,
            height: 6.0,
        }
    }
}

/// Rejection-sampled field of vertical trunks. May return fewer than
/// `n_trunks` when the area is too crowded.
pub fn scene_forest<R: Rng + ?Sized>(rng: &mut R, cfg: &ForestConfig, keep_clear: &[Vec3]) -> Scene {
    let mut trunks: Vec<Primitive> = Vec::with_capacity(cfg.n_trunks);
    let max_attempts = 200 * cfg.n_trunks;
    let mut attempts = 0;
    let [x0, x1, y0, y1] = cfg.area;
    while trunks.len() < cfg.n_trunks && attempts < max_attempts {
        attempts += 1;
        let radius = if cfg.radius_max > cfg.radius_min {
            rng.random_range(cfg.radius_min..=cfg.radius_max)
        } else {
            cfg.radius_min
        };
        let x = rng.random_range(x0 + radius..=x1 - radius);
        let y = rng.random_range(y0 + radius..=y1 - radius);
        let c = Vec3::new(x, y, 0.5 * cfg.height);
        let spaced = trunks.iter().all(|t| (t.center().xy() - c.xy()).norm() >= cfg.min_clearance);
        let clear = keep_clear.iter().all(|k| (k.xy() - c.xy()).norm() - radius >= cfg.min_clearance);
        if spaced && clear {
            trunks.push(Primitive::cylinder(c, radius, cfg.height));
        }
    }
    Scene { primitives: trunks }
}

/// Moves bodies with a velocity along exact constant-gravity ballistic arcs.
pub fn advance_scene(scene: &mut Scene, dt: f64, gravity: &Vec3) {
    for p in scene.primitives.iter_mut() {
        if let Some(v) = p.velocity {
            *p.center_mut() += v * dt + 0.5 * gravity * dt * dt;
            p.velocity = Some(v + gravity * dt);
        }
    }
}
