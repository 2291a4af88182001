//! Differentiable Gaussian splatting.
//!
//! [`rasterize`] records a single custom op on the tape whose backward
//! replays each pixel's compositing from the retained projected frame.
//! [`reference_rasterize`] is the untiled per-pixel oracle.

pub mod check;
pub mod meter;
pub mod project;
pub mod raster;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, GaussianVars};
use crate::tensor::{GradFn, Real, Tensor, Var};

pub use project::{covariance3d, Splat, View, COV_FLOOR};
use raster::{Frame, Inputs, Tiles, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub tile_size: usize,
    pub early_stop: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            tile_size: 16,
            early_stop: true,
        }
    }
}

impl RenderSettings {
    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    fn bg<F: Real>(&self) -> [F; 3] {
        self.background.map(F::lit)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::invalid("rasterize", "tile_size must be positive"));
        }
        Ok(())
    }
}

/// Rendered planes: rgb `[H, W, 3]`, alpha `[H, W]`, depth `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderImage<F: Real> {
    pub rgb: Tensor<F>,
    pub alpha: Tensor<F>,
    pub depth: Tensor<F>,
}

impl<F: Real> RenderImage<F> {
    fn from_packed(packed: &[F], width: usize, height: usize) -> Self {
        let hw = width * height;
        let mut rgb = Vec::with_capacity(3 * hw);
        let mut alpha = Vec::with_capacity(hw);
        let mut depth = Vec::with_capacity(hw);
        for px in packed.chunks_exact(CHANNELS) {
            rgb.extend_from_slice(&px[..3]);
            alpha.push(px[3]);
            depth.push(px[4]);
        }
        Self {
            rgb: Tensor::new(&[height, width, 3], rgb).unwrap(),
            alpha: Tensor::new(&[height, width], alpha).unwrap(),
            depth: Tensor::new(&[height, width], depth).unwrap(),
        }
    }

    pub fn width(&self) -> usize {
        self.alpha.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.alpha.shape()[0]
    }

    /// Largest per-channel absolute difference across all three planes.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.rgb
            .max_abs_diff(&other.rgb)
            .max(self.alpha.max_abs_diff(&other.alpha))
            .max(self.depth.max_abs_diff(&other.depth))
            .to_f64_lossy()
    }
}

/// Rendered planes recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct RenderVars<'t, F: Real> {
    pub rgb: Var<'t, F>,
    pub alpha: Var<'t, F>,
    pub depth: Var<'t, F>,
    /// the packed `[H, W, 5]` output the planes are sliced from
    pub packed: Var<'t, F>,
}

impl<'t, F: Real> RenderVars<'t, F> {
    /// Slices a packed `[H, W, 5]` var into its planes.
    pub fn from_packed(out: Var<'t, F>) -> Result<Self> {
        let s = out.shape();
        if s.len() != 3 || s[2] != CHANNELS {
            return Err(Error::shape("render", &s, &[0, 0, CHANNELS]));
        }
        let (h, w) = (s[0], s[1]);
        Ok(RenderVars {
            rgb: out.slice(2, 0, 3)?,
            alpha: out.slice(2, 3, 4)?.reshape(&[h, w])?,
            depth: out.slice(2, 4, 5)?.reshape(&[h, w])?,
            packed: out,
        })
    }

    pub fn values(&self) -> RenderImage<F> {
        let p = self.packed.value();
        let s = p.shape();
        RenderImage::from_packed(p.data(), s[1], s[0])
    }
}

fn check_shapes(n: usize, shapes: [&[usize]; 5]) -> Result<()> {
    let want: [&[usize]; 5] = [&[n, 3], &[n, 4], &[n, 3], &[n], &[n, 3]];
    for (got, want) in shapes.iter().zip(want) {
        if *got != want {
            return Err(Error::shape("rasterize", got, want));
        }
    }
    Ok(())
}

fn inputs_of<F: Real>(t: &[Tensor<F>; 5]) -> Inputs<'_, F> {
    Inputs {
        means: t[0].data(),
        quats: t[1].data(),
        scales: t[2].data(),
        opacities: t[3].data(),
        colors: t[4].data(),
    }
}

/// Saved state for one view's backward pass.
struct RenderState<F> {
    frame: Frame<F>,
    _guard: meter::Guard,
}

/// Renders a taped Gaussian set. Quaternions are normalised inside.
pub fn rasterize<'t, F: Real>(
    gaussians: &GaussianVars<'t, F>,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderVars<'t, F>> {
    settings.validate()?;
    let vars = gaussians.as_array();
    let tensors: [Tensor<F>; 5] = vars.map(|v| v.value());
    let n = tensors[3].shape().first().copied().unwrap_or(0);
    check_shapes(n, [0, 1, 2, 3, 4].map(|i| tensors[i].shape()))?;

    let view = View::<F>::new(camera);
    let (w, h) = (camera.width, camera.height);
    let bg = settings.bg::<F>();
    let early = settings.early_stop;
    let tile = settings.tile_size;
    let frame = Frame::build(&inputs_of(&tensors), &view);
    let tiles = Tiles::bin(&frame, w, h, tile);
    let packed = raster::forward_tiled(&frame, &inputs_of(&tensors), &tiles, w, h, bg, early);
    drop(tiles);

    let tape = vars[0].tape();
    let out = tape.custom(&vars, Tensor::new(&[h, w, CHANNELS], packed)?, move || -> GradFn<F> {
        let bytes = frame.retained_bytes();
        let state = RenderState {
            frame,
            _guard: meter::Guard::new(bytes),
        };
        Box::new(move |g: &Tensor<F>| {
            let grads = raster::backward(&state.frame, &inputs_of(&tensors), &view, tile, bg, early, g.data());
            drop(state);
            vec![
                Some(Tensor::new(&[n, 3], grads.means).unwrap()),
                Some(Tensor::new(&[n, 4], grads.quats).unwrap()),
                Some(Tensor::new(&[n, 3], grads.scales).unwrap()),
                Some(Tensor::new(&[n], grads.opacities).unwrap()),
                Some(Tensor::new(&[n, 3], grads.colors).unwrap()),
            ]
        })
    });
    RenderVars::from_packed(out)
}

/// Untaped tiled render.
pub fn render<F: Real>(set: &GaussianSet<F>, camera: &Camera, settings: &RenderSettings) -> Result<RenderImage<F>> {
    settings.validate()?;
    let tensors = [
        set.positions.clone(),
        set.rotations.clone(),
        set.scales.clone(),
        set.opacities.clone(),
        set.colors.clone(),
    ];
    check_shapes(set.len(), [0, 1, 2, 3, 4].map(|i| tensors[i].shape()))?;
    let view = View::<F>::new(camera);
    let inputs = inputs_of(&tensors);
    let frame = Frame::build(&inputs, &view);
    let tiles = Tiles::bin(&frame, camera.width, camera.height, settings.tile_size);
    let packed = raster::forward_tiled(
        &frame,
        &inputs,
        &tiles,
        camera.width,
        camera.height,
        settings.bg(),
        settings.early_stop,
    );
    Ok(RenderImage::from_packed(&packed, camera.width, camera.height))
}

/// Brute-force oracle: every pixel walks the full depth-sorted list, with
/// the same 3σ rule and no early termination.
pub fn reference_rasterize<F: Real>(
    set: &GaussianSet<F>,
    camera: &Camera,
    settings: &RenderSettings,
) -> Result<RenderImage<F>> {
    let tensors = [
        set.positions.clone(),
        set.rotations.clone(),
        set.scales.clone(),
        set.opacities.clone(),
        set.colors.clone(),
    ];
    check_shapes(set.len(), [0, 1, 2, 3, 4].map(|i| tensors[i].shape()))?;
    let view = View::<F>::new(camera);
    let inputs = inputs_of(&tensors);
    let frame = Frame::build(&inputs, &view);
    let splats = raster::pack(&frame, &inputs);
    let (w, h) = (camera.width, camera.height);
    let mut packed = vec![F::zero(); w * h * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * CHANNELS;
            raster::shade(&splats, (x, y), settings.bg(), false, &mut packed[o..o + CHANNELS]);
        }
    }
    Ok(RenderImage::from_packed(&packed, w, h))
}

/// Screen-space footprint of one Gaussian in 64-bit, or `None` if culled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

pub fn project_gaussian(g: &crate::gaussian::Gaussian, camera: &Camera) -> Option<ProjectedGaussian> {
    let view = View::<f64>::new(camera);
    let sp = project::project(g.position, g.rotation, g.scale, &view)?;
    Some(ProjectedGaussian {
        mean2d: sp.mean,
        cov2d: [[sp.cov[0], sp.cov[1]], [sp.cov[1], sp.cov[2]]],
        depth: sp.depth,
        color: g.color,
        opacity: g.opacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::gaussian::Gaussian;
    use crate::linalg;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera(w: usize, h: usize) -> Camera {
        Camera::look_at(
            [0.0, 0.0, 3.0],
            [0.0; 3],
            Intrinsics {
                width: w,
                height: h,
                ..Intrinsics::default()
            },
        )
        .unwrap()
    }

    fn on_pixel(cam: &Camera, px: f64, py: f64, dist: f64) -> [f64; 3] {
        linalg::add(cam.center, linalg::scale(cam.direction_through(px, py), dist))
    }

    fn blob(position: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Gaussian {
        Gaussian {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [scale; 3],
            opacity,
            color,
        }
    }

    #[test]
    fn empty_set_renders_background() {
        let cam = camera(8, 8);
        let s = RenderSettings::default().with_background([0.2, 0.3, 0.4]);
        let img = render(&GaussianSet::<f64>::empty(), &cam, &s).unwrap();
        assert!(img.alpha.data().iter().all(|&a| a == 0.0));
        for px in img.rgb.data().chunks(3) {
            assert_eq!(px, &[0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn centred_gaussian_alpha_is_opacity() {
        let cam = camera(16, 16);
        let g = blob(on_pixel(&cam, 8.5, 8.5, 3.0), 0.2, 0.9, [0.5; 3]);
        let img = render(
            &GaussianSet::<f64>::from_gaussians(&[g]),
            &cam,
            &RenderSettings::default(),
        )
        .unwrap();
        assert!((img.alpha.data()[8 * 16 + 8] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn two_layer_compositing() {
        let cam = camera(16, 16);
        let front = blob(on_pixel(&cam, 8.5, 8.5, 2.0), 0.2, 0.5, [1.0, 0.0, 0.0]);
        let back = blob(on_pixel(&cam, 8.5, 8.5, 3.0), 0.2, 1.0, [0.0, 0.0, 1.0]);
        let set = GaussianSet::<f64>::from_gaussians(&[back, front]);
        for img in [
            render(&set, &cam, &RenderSettings::default()).unwrap(),
            reference_rasterize(&set, &cam, &RenderSettings::default()).unwrap(),
        ] {
            let p = 8 * 16 + 8;
            assert!((img.alpha.data()[p] - 1.0).abs() < 1e-12);
            let rgb = &img.rgb.data()[3 * p..3 * p + 3];
            assert!((rgb[0] - 0.5).abs() < 1e-12 && rgb[1].abs() < 1e-12 && (rgb[2] - 0.5).abs() < 1e-12);
        }
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> GaussianSet<f64> {
        let gs: Vec<Gaussian> = (0..n)
            .map(|_| {
                let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                Gaussian {
                    position: std::array::from_fn(|_| rng.random_range(-0.6..0.6)),
                    rotation: q.map(|v| v / qn),
                    scale: std::array::from_fn(|_| rng.random_range(0.03..0.2)),
                    opacity: rng.random_range(0.05..0.95),
                    color: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
                }
            })
            .collect();
        GaussianSet::from_gaussians(&gs)
    }

    #[test]
    fn tile_sizes_agree_and_match_reference_without_early_stop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cam = camera(32, 24);
        for _ in 0..5 {
            let set = random_set(&mut rng, 40);
            let mut s = RenderSettings {
                early_stop: false,
                ..RenderSettings::default()
            };
            let reference = reference_rasterize(&set, &cam, &s).unwrap();
            for tile in [8, 16, 32, 5] {
                s.tile_size = tile;
                assert_eq!(render(&set, &cam, &s).unwrap(), reference, "tile {tile}");
            }
        }
    }

    #[test]
    fn taped_render_matches_untaped_and_releases_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = camera(16, 16);
        let set = random_set(&mut rng, 10);
        let before = meter::current();
        let tape = Tape::new();
        let vars = GaussianVars::leaves(&tape, &set);
        let out = rasterize(&vars, &cam, &RenderSettings::default()).unwrap();
        assert!(meter::current() > before);
        assert_eq!(out.values(), render(&set, &cam, &RenderSettings::default()).unwrap());
        let loss = out.rgb.square().sum_all().add(&out.alpha.sum_all()).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(meter::current(), before);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cam = camera(12, 12);
        let set = random_set(&mut rng, 6);
        let target = Tensor::<f64>::uniform(&[12, 12, 5], 0.0, 1.0, &mut rng);
        let fields = [&set.positions, &set.rotations, &set.scales, &set.opacities, &set.colors];
        for field in 0..5 {
            let report = crate::tensor::grad_check(
                |tape, x| {
                    let mut vars = GaussianVars::constants(tape, &set);
                    match field {
                        0 => vars.positions = x,
                        1 => vars.rotations = x,
                        2 => vars.scales = x,
                        3 => vars.opacities = x,
                        _ => vars.colors = x,
                    }
                    let out = rasterize(&vars, &cam, &RenderSettings::default())?;
                    Ok(out.packed.sub(&tape.constant(target.clone()))?.square().sum_all())
                },
                fields[field],
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-5, "field {field}: {report:?}");
        }
    }
}
