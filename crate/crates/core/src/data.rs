//! Procedural ground-truth objects and rendered multi-view datasets.
//!
//! Layout of a saved dataset:
//!
//! ```text
//! <root>/dataset.json            {"config", "scenes": [id, ...]}
//! <root>/<id>/manifest.json      id, seed, gaussian count, per-view role and files
//! <root>/<id>/cameras.json       camera rig
//! <root>/<id>/gaussians.npy      [N, 14] raw attributes (exact)
//! <root>/<id>/gt.ply             splat PLY of the same set
//! <root>/<id>/images/NNN.npy     [H, W, 3] float32
//! <root>/<id>/masks/NNN.npy      [H, W] float32
//! <root>/<id>/preview/NNN.png    8-bit previews
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{load_cameras, orbit_camera, save_cameras, Camera, Intrinsics};
use crate::error::{Error, Result};
use crate::gaussian::{export_ply, Gaussian, GaussianSet};
use crate::io::{npy, write_png};
use crate::linalg::{self, axis_angle_quat};
use crate::render::{render, RenderSettings};
use crate::tensor::Tensor;

pub const INPUT_AZIMUTHS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
const S_MIN: f64 = 0.005;
const S_MAX: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Input,
    Train,
    HeldOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub views: usize,
    pub fov_deg: f64,
    pub radius: f64,
    pub resolution: usize,
    /// trailing random views flagged held-out
    pub held_out: usize,
    pub input_elevation: f64,
    pub elevation_jitter: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            views: 32,
            fov_deg: 50.0,
            radius: 2.5,
            resolution: 64,
            held_out: 4,
            input_elevation: 20.0,
            elevation_jitter: 10.0,
            near: 0.1,
            far: 4.0,
        }
    }
}

impl DatasetConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fov_y_deg: self.fov_deg,
            width: self.resolution,
            height: self.resolution,
            near: self.near,
            far: self.far,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_in = INPUT_AZIMUTHS.len();
        if self.views < n_in + 1 {
            return Err(Error::Config(format!(
                "views {} must be at least {}",
                self.views,
                n_in + 1
            )));
        }
        if self.held_out > self.views - n_in {
            return Err(Error::Config(format!(
                "held_out {} exceeds non-input views",
                self.held_out
            )));
        }
        if self.resolution == 0 || !(self.radius > 0.0) || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config("resolution, radius and fov must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub camera: Camera,
    /// `[H, W, 3]`
    pub image: Tensor<f32>,
    /// `[H, W]`
    pub mask: Tensor<f32>,
    pub role: ViewRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub seed: u64,
    pub gaussians: GaussianSet<f32>,
    pub views: Vec<SceneView>,
}

impl SceneSample {
    pub fn indices(&self, role: ViewRole) -> Vec<usize> {
        (0..self.views.len()).filter(|&i| self.views[i].role == role).collect()
    }

    /// Stacked `[V, H, W, 3]` images of the given views.
    pub fn stack_images(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let first = &self.views[*idx.first().ok_or_else(|| Error::invalid("stack_images", "no views"))?].image;
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(first.shape());
        let data = idx
            .iter()
            .flat_map(|&i| self.views[i].image.data().iter().copied())
            .collect();
        Tensor::new(&shape, data)
    }

    pub fn cameras(&self, idx: &[usize]) -> Vec<Camera> {
        idx.iter().map(|&i| self.views[i].camera.clone()).collect()
    }
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Procedural object: 3–8 ellipsoidal blobs, each a shell of 50–400 flat
/// Gaussians with a smooth color gradient, all inside the unit sphere.
pub fn gen_scene(seed: u64) -> GaussianSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = rng.random_range(3..=8);
    let mut out = Vec::new();
    for _ in 0..blobs {
        let axes = [
            rng.random_range(0.12..0.3),
            rng.random_range(0.12..0.3),
            rng.random_range(0.12..0.3),
        ];
        let reach = axes.iter().cloned().fold(0.0, f64::max);
        let offset = rng.random_range(0.0..(0.9 - reach).min(0.45));
        let center = linalg::scale(unit_vector(&mut rng), offset);
        let orient = axis_angle_quat(unit_vector(&mut rng), rng.random_range(0.0..std::f64::consts::PI));
        let rot = linalg::quat_to_mat(orient);
        let base: [f64; 3] = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let tint: [f64; 3] = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ];
        let grad_dir = unit_vector(&mut rng);
        // roughly constant surface density
        let area = 4.0 * std::f64::consts::PI * ((axes[0] * axes[1] + axes[1] * axes[2] + axes[0] * axes[2]) / 3.0);
        let count = ((area * 1200.0) as usize).clamp(50, 400);
        for _ in 0..count {
            let n = unit_vector(&mut rng);
            let local = [n[0] * axes[0], n[1] * axes[1], n[2] * axes[2]];
            let p = linalg::add(center, linalg::mat_vec(&rot, local));
            let t = linalg::dot(n, grad_dir);
            let color = [0, 1, 2].map(|k| (base[k] + tint[k] * t).clamp(0.02, 0.98));
            let normal = linalg::normalize(linalg::mat_vec(&rot, [n[0] / axes[0], n[1] / axes[1], n[2] / axes[2]]));
            let spin = axis_angle_quat([0.0, 0.0, 1.0], rng.random_range(0.0..std::f64::consts::TAU));
            out.push(Gaussian {
                position: p,
                rotation: quat_mul(linalg::z_to(normal), spin),
                scale: [
                    rng.random_range(0.012..S_MAX),
                    rng.random_range(0.012..S_MAX),
                    rng.random_range(S_MIN..0.01),
                ],
                opacity: rng.random_range(0.7..0.95),
                color,
            });
        }
    }
    let set = GaussianSet::<f64>::from_gaussians(&out);
    set.cast()
}

/// Rig: four input views on the equator band, the rest uniform on the sphere.
pub fn dataset_cameras(cfg: &DatasetConfig, seed: u64) -> Result<Vec<(Camera, ViewRole)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let intr = cfg.intrinsics();
    let mut out = Vec::with_capacity(cfg.views);
    for az in INPUT_AZIMUTHS {
        let el = cfg.input_elevation + rng.random_range(-cfg.elevation_jitter..=cfg.elevation_jitter);
        out.push((orbit_camera(az, el, cfg.radius, intr)?, ViewRole::Input));
    }
    let rest = cfg.views - INPUT_AZIMUTHS.len();
    for i in 0..rest {
        let d = unit_vector(&mut rng);
        // keep clear of the poles where look-at is ill-conditioned
        let el = d[1].clamp(-0.97, 0.97).asin().to_degrees();
        let az = d[0].atan2(d[2]).to_degrees();
        let role = if i >= rest - cfg.held_out {
            ViewRole::HeldOut
        } else {
            ViewRole::Train
        };
        out.push((orbit_camera(az, el, cfg.radius, intr)?, role));
    }
    Ok(out)
}

pub fn render_dataset(id: &str, scene: &GaussianSet<f32>, cfg: &DatasetConfig, seed: u64) -> Result<SceneSample> {
    let settings = RenderSettings::default();
    let views = dataset_cameras(cfg, seed)?
        .into_iter()
        .map(|(camera, role)| {
            let img = render(scene, &camera, &settings)?;
            Ok(SceneView {
                camera,
                image: img.rgb,
                mask: img.alpha,
                role,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSample {
        id: id.to_string(),
        seed,
        gaussians: scene.clone(),
        views,
    })
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Scene `index` of a dataset generated from `seed`.
pub fn generate_scene(index: usize, seed: u64, cfg: &DatasetConfig) -> Result<SceneSample> {
    let s = seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
    render_dataset(&scene_id(index), &gen_scene(s), cfg, s)
}

pub fn generate_dataset(n: usize, seed: u64, cfg: &DatasetConfig) -> Result<Vec<SceneSample>> {
    (0..n).map(|i| generate_scene(i, seed, cfg)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    index: usize,
    role: ViewRole,
    image: String,
    mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneManifest {
    id: String,
    seed: u64,
    gaussians: usize,
    width: usize,
    height: usize,
    views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    config: DatasetConfig,
    scenes: Vec<String>,
}

fn gaussian_rows(set: &GaussianSet<f32>) -> Vec<f32> {
    let mut rows = Vec::with_capacity(set.len() * 14);
    for i in 0..set.len() {
        rows.extend_from_slice(&set.positions.data()[3 * i..3 * i + 3]);
        rows.extend_from_slice(&set.rotations.data()[4 * i..4 * i + 4]);
        rows.extend_from_slice(&set.scales.data()[3 * i..3 * i + 3]);
        rows.push(set.opacities.data()[i]);
        rows.extend_from_slice(&set.colors.data()[3 * i..3 * i + 3]);
    }
    rows
}

fn gaussians_from_rows(rows: &[f32], n: usize) -> Result<GaussianSet<f32>> {
    let col = |lo: usize, w: usize| -> Vec<f32> { rows.chunks(14).flat_map(|r| r[lo..lo + w].to_vec()).collect() };
    Ok(GaussianSet {
        positions: Tensor::new(&[n, 3], col(0, 3))?,
        rotations: Tensor::new(&[n, 4], col(3, 4))?,
        scales: Tensor::new(&[n, 3], col(7, 3))?,
        opacities: Tensor::new(&[n], col(10, 1))?,
        colors: Tensor::new(&[n, 3], col(11, 3))?,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_scene(dir: &Path, scene: &SceneSample) -> Result<()> {
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("masks"))?;
    mkdir(&dir.join("preview"))?;
    let cams: Vec<Camera> = scene.views.iter().map(|v| v.camera.clone()).collect();
    save_cameras(&dir.join("cameras.json"), &cams)?;
    npy::write_f32(
        &dir.join("gaussians.npy"),
        &[scene.gaussians.len(), 14],
        &gaussian_rows(&scene.gaussians),
    )?;
    export_ply(&scene.gaussians, &dir.join("gt.ply"))?;
    let (h, w) = (cams[0].height, cams[0].width);
    let mut entries = Vec::with_capacity(scene.views.len());
    for (i, v) in scene.views.iter().enumerate() {
        let image = format!("images/{i:03}.npy");
        let mask = format!("masks/{i:03}.npy");
        npy::write_f32(&dir.join(&image), v.image.shape(), v.image.data())?;
        npy::write_f32(&dir.join(&mask), v.mask.shape(), v.mask.data())?;
        write_png(&dir.join(format!("preview/{i:03}.png")), w, h, 3, v.image.data())?;
        entries.push(ViewEntry {
            index: i,
            role: v.role,
            image,
            mask,
        });
    }
    write_json(
        &dir.join("manifest.json"),
        &SceneManifest {
            id: scene.id.clone(),
            seed: scene.seed,
            gaussians: scene.gaussians.len(),
            width: w,
            height: h,
            views: entries,
        },
    )
}

fn read_plane(path: &Path, want: &[usize]) -> Result<Tensor<f32>> {
    let (shape, data) = npy::read_f32(path)?;
    if shape != want {
        return Err(Error::format(path, format!("shape {shape:?}, expected {want:?}")));
    }
    Tensor::new(&shape, data)
}

pub fn load_scene(dir: &Path) -> Result<SceneSample> {
    let mpath = dir.join("manifest.json");
    let m: SceneManifest = read_json(&mpath)?;
    let cams = load_cameras(&dir.join("cameras.json"))?;
    if cams.len() != m.views.len() {
        return Err(Error::format(
            dir.join("cameras.json"),
            format!("{} cameras, manifest lists {} views", cams.len(), m.views.len()),
        ));
    }
    let gpath = dir.join("gaussians.npy");
    let (gshape, rows) = npy::read_f32(&gpath)?;
    if gshape != [m.gaussians, 14] {
        return Err(Error::format(
            &gpath,
            format!("shape {gshape:?}, expected [{}, 14]", m.gaussians),
        ));
    }
    let gaussians = gaussians_from_rows(&rows, m.gaussians)?;
    let mut views = Vec::with_capacity(cams.len());
    for (entry, camera) in m.views.iter().zip(cams) {
        if (camera.width, camera.height) != (m.width, m.height) {
            return Err(Error::format(
                &mpath,
                format!("view {} resolution differs", entry.index),
            ));
        }
        views.push(SceneView {
            image: read_plane(&dir.join(&entry.image), &[m.height, m.width, 3])?,
            mask: read_plane(&dir.join(&entry.mask), &[m.height, m.width])?,
            camera,
            role: entry.role,
        });
    }
    Ok(SceneSample {
        id: m.id,
        seed: m.seed,
        gaussians,
        views,
    })
}

pub fn save_dataset(root: &Path, cfg: &DatasetConfig, scenes: &[SceneSample]) -> Result<()> {
    mkdir(root)?;
    for s in scenes {
        save_scene(&root.join(&s.id), s)?;
    }
    write_json(
        &root.join("dataset.json"),
        &DatasetManifest {
            config: *cfg,
            scenes: scenes.iter().map(|s| s.id.clone()).collect(),
        },
    )
}

pub fn load_dataset(root: &Path) -> Result<(DatasetConfig, Vec<SceneSample>)> {
    let m: DatasetManifest = read_json(&root.join("dataset.json"))?;
    let scenes = m
        .scenes
        .iter()
        .map(|id| load_scene(&root.join(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok((m.config, scenes))
}
