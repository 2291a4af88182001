//! Python bindings. Arrays cross the boundary as flat row-major lists;
//! shapes are documented per function.

use std::path::PathBuf;

use grm::camera::{self, Intrinsics};
use grm::data::{self, DatasetConfig, ViewRole};
use grm::gaussian::{self, Gaussian};
use grm::network::{self, NetworkConfig};
use grm::render::{check, RenderSettings};
use grm::{eval, mesh, train, Tensor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: grm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn intrinsics(fov_y_deg: f64, width: usize, height: usize, near: f64, far: f64) -> Intrinsics {
    Intrinsics {
        fov_y_deg,
        width,
        height,
        near,
        far,
    }
}

#[pyclass(name = "Camera", from_py_object)]
#[derive(Clone)]
pub struct PyCamera {
    inner: camera::Camera,
}

#[pymethods]
impl PyCamera {
    #[staticmethod]
    #[pyo3(signature = (eye, target, fov_y_deg=50.0, width=64, height=64, near=0.1, far=4.0))]
    fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        fov_y_deg: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> PyResult<Self> {
        let inner =
            camera::Camera::look_at(eye, target, intrinsics(fov_y_deg, width, height, near, far)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (azimuth_deg, elevation_deg, radius, fov_y_deg=50.0, width=64, height=64, near=0.1, far=4.0))]
    #[allow(clippy::too_many_arguments)]
    fn orbit(
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        fov_y_deg: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> PyResult<Self> {
        let inner = camera::orbit_camera(
            azimuth_deg,
            elevation_deg,
            radius,
            intrinsics(fov_y_deg, width, height, near, far),
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    /// `(u, v, depth)` or `None` behind the camera.
    fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        self.inner.project(p).map(|([u, v], d)| (u, v, d))
    }

    fn direction_through(&self, u: f64, v: f64) -> [f64; 3] {
        self.inner.direction_through(u, v)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.center
    }

    #[getter]
    fn focal(&self) -> f64 {
        self.inner.focal()
    }

    fn __repr__(&self) -> String {
        let c = self.inner.center;
        format!(
            "Camera(center=({:.3}, {:.3}, {:.3}), {}x{}, fov={})",
            c[0], c[1], c[2], self.inner.width, self.inner.height, self.inner.fov_y_deg
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n, radius, look_at=[0.0; 3], fov_y_deg=50.0, width=64, height=64))]
fn fibonacci_cameras(
    n: usize,
    radius: f64,
    look_at: [f64; 3],
    fov_y_deg: f64,
    width: usize,
    height: usize,
) -> PyResult<Vec<PyCamera>> {
    let intr = intrinsics(fov_y_deg, width, height, 0.1 * radius, 4.0 * radius);
    Ok(camera::fibonacci_cameras(n, radius, look_at, intr)
        .map_err(err)?
        .into_iter()
        .map(|inner| PyCamera { inner })
        .collect())
}

fn unwrap_cams(cams: &[PyCamera]) -> Vec<camera::Camera> {
    cams.iter().map(|c| c.inner.clone()).collect()
}

#[pyfunction]
fn load_cameras(path: PathBuf) -> PyResult<Vec<PyCamera>> {
    Ok(camera::load_cameras(&path)
        .map_err(err)?
        .into_iter()
        .map(|inner| PyCamera { inner })
        .collect())
}

#[pyfunction]
fn save_cameras(path: PathBuf, cameras: Vec<PyCamera>) -> PyResult<()> {
    camera::save_cameras(&path, &unwrap_cams(&cameras)).map_err(err)
}

#[pyclass(name = "GaussianSet", from_py_object)]
#[derive(Clone)]
pub struct PyGaussianSet {
    inner: gaussian::GaussianSet<f32>,
}

#[pymethods]
impl PyGaussianSet {
    /// Per-Gaussian rows: positions `[N][3]`, rotations `[N][4]` (w, x, y, z),
    /// scales `[N][3]`, opacities `[N]`, colors `[N][3]`.
    #[new]
    fn new(
        positions: Vec<[f64; 3]>,
        rotations: Vec<[f64; 4]>,
        scales: Vec<[f64; 3]>,
        opacities: Vec<f64>,
        colors: Vec<[f64; 3]>,
    ) -> PyResult<Self> {
        let n = positions.len();
        if [rotations.len(), scales.len(), opacities.len(), colors.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(PyValueError::new_err("attribute lists differ in length"));
        }
        let gs: Vec<Gaussian> = (0..n)
            .map(|i| Gaussian {
                position: positions[i],
                rotation: rotations[i],
                scale: scales[i],
                opacity: opacities[i],
                color: colors[i],
            })
            .collect();
        Ok(Self {
            inner: gaussian::GaussianSet::from_gaussians(&gs),
        })
    }

    #[staticmethod]
    fn load_ply(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: gaussian::import_ply(&path).map_err(err)?,
        })
    }

    fn save_ply(&self, path: PathBuf) -> PyResult<()> {
        gaussian::export_ply(&self.inner, &path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.iter().map(|g| g.position).collect()
    }

    fn rotations(&self) -> Vec<[f64; 4]> {
        self.inner.iter().map(|g| g.rotation).collect()
    }

    fn scales(&self) -> Vec<[f64; 3]> {
        self.inner.iter().map(|g| g.scale).collect()
    }

    fn opacities(&self) -> Vec<f64> {
        self.inner.iter().map(|g| g.opacity).collect()
    }

    fn colors(&self) -> Vec<[f64; 3]> {
        self.inner.iter().map(|g| g.color).collect()
    }

    /// `(lo, hi)` corners or `None` when empty.
    fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        self.inner.bounds()
    }

    fn __repr__(&self) -> String {
        format!("GaussianSet(n={})", self.inner.len())
    }
}

/// Rendered planes as flat lists: `rgb` `[H, W, 3]`, `alpha` and `depth` `[H, W]`.
#[pyclass(name = "Image", get_all)]
pub struct PyImage {
    width: usize,
    height: usize,
    rgb: Vec<f32>,
    alpha: Vec<f32>,
    depth: Vec<f32>,
}

#[pyfunction]
#[pyo3(signature = (gaussians, camera, background=[0.0; 3], tile_size=16))]
fn render(gaussians: &PyGaussianSet, camera: &PyCamera, background: [f64; 3], tile_size: usize) -> PyResult<PyImage> {
    let settings = RenderSettings {
        background,
        tile_size,
        ..RenderSettings::default()
    };
    let img = grm::render::render(&gaussians.inner, &camera.inner, &settings).map_err(err)?;
    Ok(PyImage {
        width: camera.inner.width,
        height: camera.inner.height,
        rgb: img.rgb.into_vec(),
        alpha: img.alpha.into_vec(),
        depth: img.depth.into_vec(),
    })
}

/// One generated scene: ground truth plus every rendered view.
#[pyclass(name = "Scene", get_all)]
pub struct PyScene {
    id: String,
    gaussians: PyGaussianSet,
    cameras: Vec<PyCamera>,
    /// `[H, W, 3]` per view
    images: Vec<Vec<f32>>,
    /// `[H, W]` per view
    masks: Vec<Vec<f32>>,
    /// "input", "train" or "held_out" per view
    roles: Vec<String>,
}

#[pyfunction]
#[pyo3(signature = (index, seed=0, resolution=64, views=32, held_out=4))]
fn generate_scene(index: usize, seed: u64, resolution: usize, views: usize, held_out: usize) -> PyResult<PyScene> {
    let cfg = DatasetConfig {
        resolution,
        views,
        held_out,
        ..DatasetConfig::default()
    };
    cfg.validate().map_err(err)?;
    let s = data::generate_scene(index, seed, &cfg).map_err(err)?;
    Ok(PyScene {
        id: s.id,
        gaussians: PyGaussianSet { inner: s.gaussians },
        cameras: s
            .views
            .iter()
            .map(|v| PyCamera {
                inner: v.camera.clone(),
            })
            .collect(),
        images: s.views.iter().map(|v| v.image.data().to_vec()).collect(),
        masks: s.views.iter().map(|v| v.mask.data().to_vec()).collect(),
        roles: s
            .views
            .iter()
            .map(|v| {
                match v.role {
                    ViewRole::Input => "input",
                    ViewRole::Train => "train",
                    ViewRole::HeldOut => "held_out",
                }
                .to_string()
            })
            .collect(),
    })
}

fn image_tensors(images: &[Vec<f32>], cams: &[camera::Camera], channels: usize) -> PyResult<Vec<Tensor<f32>>> {
    if images.len() != cams.len() {
        return Err(PyValueError::new_err("need one image per camera"));
    }
    images
        .iter()
        .zip(cams)
        .map(|(im, c)| {
            let shape = if channels == 1 {
                vec![c.height, c.width]
            } else {
                vec![c.height, c.width, channels]
            };
            Tensor::new(&shape, im.clone()).map_err(err)
        })
        .collect()
}

#[pyclass(name = "Model")]
pub struct PyModel {
    inner: network::Weights<f32>,
}

#[pymethods]
impl PyModel {
    /// Randomly initialised tiny model for `resolution`-pixel inputs.
    #[staticmethod]
    #[pyo3(signature = (seed=0, resolution=64))]
    fn tiny(seed: u64, resolution: usize) -> PyResult<Self> {
        let cfg = NetworkConfig {
            image_height: resolution,
            image_width: resolution,
            ..NetworkConfig::tiny()
        };
        Ok(Self {
            inner: network::Weights::init(&cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: network::Weights::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Pixel-aligned Gaussians from `[H, W, 3]` images, one per camera.
    fn reconstruct(&self, images: Vec<Vec<f32>>, cameras: Vec<PyCamera>) -> PyResult<PyGaussianSet> {
        let cams = unwrap_cams(&cameras);
        let ts = image_tensors(&images, &cams, 3)?;
        let (h, w) = (cams[0].height, cams[0].width);
        let stacked = Tensor::new(
            &[ts.len(), h, w, 3],
            ts.iter().flat_map(|t| t.data().iter().copied()).collect(),
        )
        .map_err(err)?;
        Ok(PyGaussianSet {
            inner: network::reconstruct(&self.inner, &stacked, &cams).map_err(err)?,
        })
    }
}

/// Per-pixel optimisation; returns the fitted set and the loss curve.
#[pyfunction]
#[pyo3(signature = (images, masks, cameras, steps=2000, lr=0.05, seed=0))]
fn sso_fit(
    images: Vec<Vec<f32>>,
    masks: Vec<Vec<f32>>,
    cameras: Vec<PyCamera>,
    steps: usize,
    lr: f64,
    seed: u64,
) -> PyResult<(PyGaussianSet, Vec<f64>)> {
    let cams = unwrap_cams(&cameras);
    let cfg = train::SsoConfig {
        steps,
        lr,
        seed,
        ..train::SsoConfig::default()
    };
    let r = train::sso_fit(
        &image_tensors(&images, &cams, 3)?,
        &image_tensors(&masks, &cams, 1)?,
        &cams,
        &cfg,
    )
    .map_err(err)?;
    Ok((PyGaussianSet { inner: r.gaussians }, r.losses))
}

type MeshArrays = (Vec<[f64; 3]>, Vec<[u32; 3]>);

/// `(vertices, triangles)` of the fused, floater-free mesh.
#[pyfunction]
#[pyo3(signature = (gaussians, views=200, resolution=128, grid=128))]
fn extract_mesh(gaussians: &PyGaussianSet, views: usize, resolution: usize, grid: usize) -> PyResult<MeshArrays> {
    let cfg = mesh::MeshConfig {
        views,
        resolution,
        grid,
        ..mesh::MeshConfig::default()
    };
    let (m, _) = mesh::extract_mesh(&gaussians.inner, &cfg).map_err(err)?;
    Ok((m.vertices, m.triangles))
}

fn hw3(v: Vec<f32>, height: usize, width: usize) -> PyResult<Tensor<f32>> {
    Tensor::new(&[height, width, 3], v).map_err(err)
}

#[pyfunction]
fn psnr(a: Vec<f32>, b: Vec<f32>, height: usize, width: usize) -> PyResult<f64> {
    eval::psnr(&hw3(a, height, width)?, &hw3(b, height, width)?).map_err(err)
}

#[pyfunction]
fn ssim(a: Vec<f32>, b: Vec<f32>, height: usize, width: usize) -> PyResult<f64> {
    eval::ssim(&hw3(a, height, width)?, &hw3(b, height, width)?).map_err(err)
}

/// `(chamfer, [(threshold, fscore), ...])`
#[pyfunction]
#[pyo3(signature = (pred, gt, thresholds=vec![0.01, 0.02, 0.05], align=false))]
fn chamfer_fscore(
    pred: Vec<[f64; 3]>,
    gt: Vec<[f64; 3]>,
    thresholds: Vec<f64>,
    align: bool,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let r = eval::chamfer_fscore(&pred, &gt, &thresholds, align).map_err(err)?;
    Ok((r.chamfer, r.fscores))
}

/// Max relative error per attribute group over random scenes.
#[pyfunction]
#[pyo3(signature = (scenes=5, gaussians=8, size=16, seed=0, eps=1e-6))]
fn grad_check(scenes: usize, gaussians: usize, size: usize, seed: u64, eps: f64) -> PyResult<Vec<(String, f64)>> {
    let r = check::gradient_suite(scenes, gaussians, size, seed, eps).map_err(err)?;
    Ok(check::GROUPS
        .iter()
        .zip(r.max_rel_err)
        .map(|(g, e)| (g.to_string(), e))
        .collect())
}

#[pymodule]
fn pygrm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyGaussianSet>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fibonacci_cameras, m)?)?;
    m.add_function(wrap_pyfunction!(load_cameras, m)?)?;
    m.add_function(wrap_pyfunction!(save_cameras, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(sso_fit, m)?)?;
    m.add_function(wrap_pyfunction!(extract_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_fscore, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
