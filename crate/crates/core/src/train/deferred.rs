//! Deferred backpropagation through the rasterizer.
//!
//! Rendering state is held for at most one supervision view at a time: each
//! view is rendered without a tape, its image gradient is taken on a small
//! local tape, and the view is then re-rendered under a fresh tape and
//! backpropagated with that gradient as the seed.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianSet, GaussianVars};
use crate::render::{rasterize, RenderSettings, RenderVars};
use crate::tensor::{Real, Tape, Tensor};

use super::loss::{compute_loss, single_view_report, view_loss, LossReport, LossWeights, PerceptualNet};

/// Ground truth for the supervision views.
#[derive(Debug, Clone, Copy)]
pub struct Supervision<'a, F: Real> {
    pub cameras: &'a [Camera],
    /// `[H, W, 3]` per view
    pub images: &'a [Tensor<F>],
    /// `[H, W]` per view
    pub masks: &'a [Tensor<F>],
}

impl<F: Real> Supervision<'_, F> {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() || self.images.len() != self.len() || self.masks.len() != self.len() {
            return Err(Error::invalid(
                "supervision",
                format!(
                    "{} cameras, {} images, {} masks",
                    self.len(),
                    self.images.len(),
                    self.masks.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Loss settings shared by both backward strategies.
#[derive(Debug, Clone, Copy)]
pub struct LossSetup<'a, F: Real> {
    pub weights: LossWeights,
    pub perceptual: Option<&'a PerceptualNet<F>>,
    pub render: RenderSettings,
}

/// Gradient of the loss with respect to the five attribute tensors, in the
/// order positions, rotations, scales, opacities, colors.
pub type AttributeGrads<F> = [Tensor<F>; 5];

fn zeros_like<F: Real>(set: &GaussianSet<F>) -> AttributeGrads<F> {
    [
        Tensor::zeros(set.positions.shape()),
        Tensor::zeros(set.rotations.shape()),
        Tensor::zeros(set.scales.shape()),
        Tensor::zeros(set.opacities.shape()),
        Tensor::zeros(set.colors.shape()),
    ]
}

fn accumulate<F: Real>(acc: &mut Tensor<F>, g: &Tensor<F>) {
    let data: Vec<F> = acc.data().iter().zip(g.data()).map(|(a, b)| *a + *b).collect();
    *acc = Tensor::new(acc.shape(), data).unwrap();
}

/// Loss and attribute gradients with one view's rendering state alive at a time.
pub fn deferred_backward<F: Real>(
    set: &GaussianSet<F>,
    sup: &Supervision<'_, F>,
    setup: &LossSetup<'_, F>,
) -> Result<(AttributeGrads<F>, LossReport)> {
    sup.check()?;
    let mut grads = zeros_like(set);
    let mut parts = Vec::with_capacity(sup.len());
    for v in 0..sup.len() {
        let cam = &sup.cameras[v];
        // pass 1: image only, no saved state
        let packed = {
            let tape = Tape::new();
            let g = GaussianVars::constants(&tape, set);
            rasterize(&g, cam, &setup.render)?.packed.value()
        };
        // image gradient on a local tape
        let (d_packed, comps) = {
            let tape = Tape::new();
            let leaf = tape.leaf(packed);
            let pred = RenderVars::from_packed(leaf)?;
            let (l, comps) = view_loss(
                &pred,
                &sup.images[v],
                &sup.masks[v],
                &setup.weights,
                setup.perceptual,
                sup.len(),
            )?;
            (tape.backward(l)?.wrt(leaf), comps)
        };
        parts.push(single_view_report(comps, &setup.weights));
        // pass 2: re-render and push the image gradient into the Gaussians
        let tape = Tape::new();
        let g = GaussianVars::leaves(&tape, set);
        let out = rasterize(&g, cam, &setup.render)?;
        let back = tape.backward_seeded(&[(out.packed, d_packed)])?;
        for (acc, var) in grads.iter_mut().zip(g.as_array()) {
            accumulate(acc, &back.wrt(var));
        }
    }
    Ok((grads, LossReport::combine(&parts, &setup.weights)))
}

/// Plain backpropagation with every view rendered on one tape.
pub fn standard_backward<F: Real>(
    set: &GaussianSet<F>,
    sup: &Supervision<'_, F>,
    setup: &LossSetup<'_, F>,
) -> Result<(AttributeGrads<F>, LossReport)> {
    sup.check()?;
    let tape = Tape::new();
    let g = GaussianVars::leaves(&tape, set);
    let preds = sup
        .cameras
        .iter()
        .map(|c| rasterize(&g, c, &setup.render))
        .collect::<Result<Vec<_>>>()?;
    let (loss, report) = compute_loss(&preds, sup.images, sup.masks, &setup.weights, setup.perceptual)?;
    let back = tape.backward(loss)?;
    Ok((g.as_array().map(|v| back.wrt(v)), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{orbit_camera, Intrinsics};
    use crate::gaussian::Gaussian;
    use crate::render::{meter, render};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(n: usize, seed: u64) -> GaussianSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs: Vec<Gaussian> = (0..n)
            .map(|_| Gaussian {
                position: [
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                ],
                rotation: [1.0, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.2],
                scale: [0.08, 0.05, 0.06],
                opacity: rng.random_range(0.3..0.9),
                color: [rng.random(), rng.random(), rng.random()],
            })
            .collect();
        GaussianSet::from_gaussians(&gs)
    }

    #[test]
    fn deferred_matches_standard_and_holds_one_view() {
        let intr = Intrinsics {
            width: 16,
            height: 16,
            ..Intrinsics::default()
        };
        let cams: Vec<Camera> = (0..3)
            .map(|i| orbit_camera(120.0 * i as f64 + 10.0, 15.0, 2.5, intr).unwrap())
            .collect();
        let target = scene(12, 1);
        let set = scene(12, 2);
        let settings = RenderSettings::default();
        let imgs: Vec<_> = cams.iter().map(|c| render(&target, c, &settings).unwrap()).collect();
        let images: Vec<_> = imgs.iter().map(|r| r.rgb.clone()).collect();
        let masks: Vec<_> = imgs.iter().map(|r| r.alpha.clone()).collect();
        let sup = Supervision {
            cameras: &cams,
            images: &images,
            masks: &masks,
        };
        let net = PerceptualNet::new();
        let setup = LossSetup {
            weights: LossWeights::default(),
            perceptual: Some(&net),
            render: settings,
        };

        meter::reset_peak();
        let (gd, rd) = deferred_backward(&set, &sup, &setup).unwrap();
        let peak_d = meter::peak();
        meter::reset_peak();
        let (gs, rs) = standard_backward(&set, &sup, &setup).unwrap();
        let peak_s = meter::peak();

        assert!((rd.total - rs.total).abs() < 1e-12 * rs.total.abs().max(1.0));
        for (a, b) in gd.iter().zip(&gs) {
            let scale = b.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(
                a.max_abs_diff(b) <= 1e-9 * scale.max(1e-12),
                "{} vs scale {scale}",
                a.max_abs_diff(b)
            );
        }
        assert!(peak_s > 0);
        assert_eq!(peak_d * 3, peak_s);
        assert_eq!(meter::current(), 0);
    }
}
