//! Pinhole cameras.
//!
//! Conventions: right-handed, the camera looks down its local `-z` axis with
//! `+x` right and `+y` up; image `x` grows to the right and image `y` grows
//! downwards; rays pass through pixel centres `(col + 0.5, row + 0.5)`.
//! `rotation` maps camera-frame vectors to world-frame vectors (its columns
//! are the camera axes in world coordinates).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    #[serde(with = "row_major")]
    pub rotation: Mat3<f64>,
    pub center: Vec3<f64>,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

mod row_major {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[[f64; 3]; 3], s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<f64> = m.iter().flatten().copied().collect();
        flat.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[[f64; 3]; 3], D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() != 9 {
            return Err(serde::de::Error::custom(format!(
                "rotation needs 9 values, got {}",
                flat.len()
            )));
        }
        Ok([
            [flat[0], flat[1], flat[2]],
            [flat[3], flat[4], flat[5]],
            [flat[6], flat[7], flat[8]],
        ])
    }
}

/// Resolution, field of view and depth bounds shared by a camera rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fov_y_deg: 50.0,
            width: 64,
            height: 64,
            near: 0.1,
            far: 4.0,
        }
    }
}

/// Per-pixel rays, row-major over the image.
#[derive(Debug, Clone, PartialEq)]
pub struct RayMap {
    pub width: usize,
    pub height: usize,
    pub origins: Vec<Vec3<f64>>,
    pub directions: Vec<Vec3<f64>>,
}

/// Rigid motion `x -> rotation x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

impl Rigid {
    pub fn apply(&self, p: Vec3<f64>) -> Vec3<f64> {
        linalg::add(linalg::mat_vec(&self.rotation, p), self.translation)
    }
}

impl Camera {
    pub fn new(rotation: Mat3<f64>, center: Vec3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let cam = Self {
            rotation,
            center,
            fov_y_deg: intrinsics.fov_y_deg,
            width: intrinsics.width,
            height: intrinsics.height,
            near: intrinsics.near,
            far: intrinsics.far,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, world `+y` up (falls back to `+x`
    /// when the view direction is parallel to `+y`).
    pub fn look_at(eye: Vec3<f64>, target: Vec3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        let mut forward = linalg::sub(target, eye);
        if linalg::norm(forward) < 1e-12 {
            // degenerate target: look back at the origin side, or down -z
            forward = if linalg::norm(eye) > 1e-12 {
                linalg::scale(eye, -1.0)
            } else {
                [0.0, 0.0, -1.0]
            };
        }
        let forward = linalg::normalize(forward);
        let mut right = linalg::cross(forward, [0.0, 1.0, 0.0]);
        if linalg::norm(right) < 1e-6 {
            right = linalg::cross(forward, [1.0, 0.0, 0.0]);
        }
        let right = linalg::normalize(right);
        let up = linalg::cross(right, forward);
        let back = linalg::scale(forward, -1.0);
        let rotation = [
            [right[0], up[0], back[0]],
            [right[1], up[1], back[1]],
            [right[2], up[2], back[2]],
        ];
        Self::new(rotation, eye, intrinsics)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fov_y_deg: self.fov_y_deg,
            width: self.width,
            height: self.height,
            near: self.near,
            far: self.far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let rtr = linalg::matmul(&linalg::transpose(r), r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (v - expect).abs() > 1e-6 {
                    return Err(Error::invalid("camera", "rotation is not orthonormal"));
                }
            }
        }
        if (linalg::det(r) - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("camera", "rotation determinant is not +1"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(
                "camera",
                format!("need 0 < near < far, got near={} far={}", self.near, self.far),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", "empty image"));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::invalid("camera", "fov_y_deg must be in (0, 180)"));
        }
        Ok(())
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y_deg.to_radians()).tan()
    }

    pub fn principal_point(&self) -> [f64; 2] {
        [0.5 * self.width as f64, 0.5 * self.height as f64]
    }

    /// Viewing direction in world coordinates.
    pub fn forward(&self) -> Vec3<f64> {
        [-self.rotation[0][2], -self.rotation[1][2], -self.rotation[2][2]]
    }

    pub fn world_to_camera(&self, p: Vec3<f64>) -> Vec3<f64> {
        linalg::mat_t_vec(&self.rotation, linalg::sub(p, self.center))
    }

    /// Pixel coordinates and positive camera depth of a world point, or
    /// `None` when the point is not in front of the camera.
    pub fn project(&self, p: Vec3<f64>) -> Option<([f64; 2], f64)> {
        let t = self.world_to_camera(p);
        let depth = -t[2];
        if depth <= 0.0 {
            return None;
        }
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        Some(([cx + f * t[0] / depth, cy - f * t[1] / depth], depth))
    }

    /// World-space unit direction through pixel coordinates `(u, v)`.
    pub fn direction_through(&self, u: f64, v: f64) -> Vec3<f64> {
        let f = self.focal();
        let [cx, cy] = self.principal_point();
        let local = [(u - cx) / f, -(v - cy) / f, -1.0];
        linalg::normalize(linalg::mat_vec(&self.rotation, local))
    }

    pub fn pixel_rays(&self) -> RayMap {
        let mut directions = Vec::with_capacity(self.width * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                directions.push(self.direction_through(col as f64 + 0.5, row as f64 + 0.5));
            }
        }
        RayMap {
            width: self.width,
            height: self.height,
            origins: vec![self.center; self.width * self.height],
            directions,
        }
    }

    /// Positions `c_o + depth * ray` for a row-major depth map.
    pub fn unproject(&self, depth: &[f64]) -> Result<Vec<Vec3<f64>>> {
        if depth.len() != self.width * self.height {
            return Err(Error::shape("unproject", &[self.height, self.width], &[depth.len()]));
        }
        let rays = self.pixel_rays();
        depth
            .iter()
            .zip(&rays.directions)
            .enumerate()
            .map(|(i, (&tau, &d))| {
                if !(tau >= self.near && tau <= self.far) {
                    return Err(Error::invalid(
                        "unproject",
                        format!("depth {tau} at pixel {i} outside [{}, {}]", self.near, self.far),
                    ));
                }
                Ok(linalg::add(self.center, linalg::scale(d, tau)))
            })
            .collect()
    }

    /// The same camera after moving the world by `motion`.
    pub fn transformed(&self, motion: &Rigid) -> Camera {
        Camera {
            rotation: linalg::matmul(&motion.rotation, &self.rotation),
            center: motion.apply(self.center),
            ..self.clone()
        }
    }
}

impl RayMap {
    /// `[d, c_o x d]` per pixel.
    pub fn plucker(&self) -> Vec<[f64; 6]> {
        self.origins
            .iter()
            .zip(&self.directions)
            .map(|(&o, &d)| {
                let m = linalg::cross(o, d);
                [d[0], d[1], d[2], m[0], m[1], m[2]]
            })
            .collect()
    }
}

/// `n` cameras on a sphere of `radius` around `look_at` from a Fibonacci
/// lattice, each looking at `look_at`.
pub fn fibonacci_cameras(n: usize, radius: f64, look_at: Vec3<f64>, intrinsics: Intrinsics) -> Result<Vec<Camera>> {
    if n == 0 || radius <= 0.0 {
        return Err(Error::invalid("fibonacci_cameras", "need n >= 1 and radius > 0"));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let ring = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            let dir = [ring * phi.sin(), y, ring * phi.cos()];
            let eye = linalg::add(look_at, linalg::scale(dir, radius));
            Camera::look_at(eye, look_at, intrinsics)
        })
        .collect()
}

/// Camera on a sphere at the given azimuth/elevation (degrees) around the
/// origin. Azimuth 0 sits on `+z`; positive elevation is above the `xz` plane.
pub fn orbit_camera(azimuth_deg: f64, elevation_deg: f64, radius: f64, intrinsics: Intrinsics) -> Result<Camera> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = [
        radius * el.cos() * az.sin(),
        radius * el.sin(),
        radius * el.cos() * az.cos(),
    ];
    Camera::look_at(eye, [0.0; 3], intrinsics)
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    views: Vec<Camera>,
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    let text = serde_json::to_string_pretty(&CameraFile {
        views: cameras.to_vec(),
    })
    .map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    for (i, cam) in file.views.iter().enumerate() {
        cam.validate()
            .map_err(|e| Error::format(path, format!("view {i}: {e}")))?;
    }
    Ok(file.views)
}
