//! Finite-difference suite for the rasterizer gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{rasterize, RenderSettings};
use crate::camera::{orbit_camera, Camera, Intrinsics};
use crate::error::Result;
use crate::gaussian::{Gaussian, GaussianSet, GaussianVars};
use crate::tensor::{grad_check, Tensor};

pub const GROUPS: [&str; 5] = ["means", "rotations", "scales", "opacities", "colors"];

#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteReport {
    pub checked: usize,
    /// scenes left out because two depths lie closer than the tie gap
    pub skipped_ties: usize,
    /// per group, max over scenes of `|analytic - numeric| / max(1, |numeric|)`
    pub max_rel_err: [f64; 5],
}

impl GradSuiteReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }
}

pub fn suite_camera(size: usize) -> Result<Camera> {
    orbit_camera(
        30.0,
        15.0,
        2.5,
        Intrinsics {
            width: size,
            height: size,
            ..Intrinsics::default()
        },
    )
}

pub fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianSet<f64> {
    let gs: Vec<Gaussian> = (0..n)
        .map(|_| {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            Gaussian {
                position: std::array::from_fn(|_| rng.random_range(-0.6..0.6)),
                rotation: q.map(|v| v / qn),
                scale: std::array::from_fn(|_| rng.random_range(0.05..0.25)),
                opacity: rng.random_range(0.05..0.95),
                color: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
            }
        })
        .collect();
    GaussianSet::from_gaussians(&gs)
}

/// True when two Gaussians' camera depths are closer than `gap`, so a
/// finite-difference step could swap their compositing order.
pub fn has_sort_tie(set: &GaussianSet<f64>, camera: &Camera, gap: f64) -> bool {
    let mut d: Vec<f64> = set.iter().map(|g| -camera.world_to_camera(g.position)[2]).collect();
    d.sort_by(f64::total_cmp);
    d.windows(2).any(|w| w[1] - w[0] < gap)
}

/// Central-difference check of an L2 image loss against the tape gradient
/// for every attribute group, over `scenes` random scenes.
pub fn gradient_suite(scenes: usize, gaussians: usize, size: usize, seed: u64, eps: f64) -> Result<GradSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = suite_camera(size)?;
    let settings = RenderSettings::default();
    let mut report = GradSuiteReport {
        checked: 0,
        skipped_ties: 0,
        max_rel_err: [0.0; 5],
    };
    while report.checked < scenes {
        let set = random_scene(&mut rng, gaussians);
        let target = Tensor::<f64>::uniform(&[size, size, 3], 0.0, 1.0, &mut rng);
        if has_sort_tie(&set, &cam, 1e3 * eps) {
            report.skipped_ties += 1;
            continue;
        }
        let fields = [&set.positions, &set.rotations, &set.scales, &set.opacities, &set.colors];
        for (field, x) in fields.into_iter().enumerate() {
            let r = grad_check(
                |tape, x| {
                    let mut vars = GaussianVars::constants(tape, &set);
                    match field {
                        0 => vars.positions = x,
                        1 => vars.rotations = x,
                        2 => vars.scales = x,
                        3 => vars.opacities = x,
                        _ => vars.colors = x,
                    }
                    let out = rasterize(&vars, &cam, &settings)?;
                    Ok(out.rgb.sub(&tape.constant(target.clone()))?.square().sum_all())
                },
                x,
                eps,
            )?;
            report.max_rel_err[field] = report.max_rel_err[field].max(r.max_rel_err);
        }
        report.checked += 1;
    }
    Ok(report)
}
