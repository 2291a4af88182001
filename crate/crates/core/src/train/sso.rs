//! Single-scene optimisation of pixel-aligned attribute maps, without a
//! network. Used as an oracle for the renderer gradients and as an upper
//! bound on what the reconstructor can reach.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{activate, ActivationConfig, GaussianSet, GaussianVars, PositionMode};
use crate::render::{rasterize, RenderSettings};
use crate::tensor::{Tape, Tensor, Var};

use super::loss::{compute_loss, LossWeights, PerceptualNet};
use super::optim::{lr_at, AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsoConfig {
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    pub loss: LossWeights,
    pub activation: ActivationConfig,
    pub render: RenderSettings,
    pub seed: u64,
    /// std of the Gaussian noise added to the initial maps
    pub init_noise: f64,
}

impl Default for SsoConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.05,
            warmup: 0,
            loss: LossWeights::default(),
            activation: ActivationConfig::default(),
            render: RenderSettings::default(),
            seed: 0,
            init_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SsoResult {
    pub gaussians: GaussianSet<f32>,
    /// `[V, H, W, C]` fitted raw maps
    pub raw: Tensor<f32>,
    pub losses: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-3, 1.0 - 1e-3);
    (p / (1.0 - p)).ln()
}

/// Initial raw maps: mid-range depth, identity rotation, mid scale, colors
/// from the pixels and opacity from the mask.
pub fn initial_maps(images: &[Tensor<f32>], masks: &[Tensor<f32>], cfg: &SsoConfig) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::invalid("sso_fit", "no views"))?;
    let (h, w) = (first.shape()[0], first.shape()[1]);
    let c = cfg.activation.channels();
    let [pos, rot, _, opa, col] = cfg.activation.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = Tensor::<f64>::randn(&[images.len(), h, w, c], cfg.init_noise, &mut rng).into_vec();
    for (v, (img, mask)) in images.iter().zip(masks).enumerate() {
        for px in 0..h * w {
            let o = (v * h * w + px) * c;
            if cfg.activation.position == PositionMode::Xyz {
                for k in 0..pos.1 {
                    data[o + pos.0 + k] = 0.0;
                }
            }
            data[o + rot.0] += 1.0;
            data[o + opa.0] += if mask.data()[px] > 0.5 { logit(0.5) } else { logit(0.01) };
            for k in 0..3 {
                data[o + col.0 + k] += logit(img.data()[px * 3 + k] as f64);
            }
        }
    }
    Tensor::new(&[images.len(), h, w, c], data.into_iter().map(|x| x as f32).collect())
}

fn activate_all<'t>(raw: Var<'t, f32>, cameras: &[Camera], cfg: &ActivationConfig) -> Result<GaussianVars<'t, f32>> {
    let s = raw.shape();
    let parts = cameras
        .iter()
        .enumerate()
        .map(|(v, cam)| Ok(activate(raw.slice(0, v, v + 1)?.reshape(&s[1..])?, cam, cfg)?.0))
        .collect::<Result<Vec<_>>>()?;
    GaussianVars::merge(&parts)
}

/// Optimises one pixel-aligned Gaussian per pixel of every given view,
/// supervised by the same views.
pub fn sso_fit(
    images: &[Tensor<f32>],
    masks: &[Tensor<f32>],
    cameras: &[Camera],
    cfg: &SsoConfig,
) -> Result<SsoResult> {
    if cameras.is_empty() || images.len() != cameras.len() || masks.len() != cameras.len() {
        return Err(Error::invalid("sso_fit", "need one image and mask per camera"));
    }
    for (i, (img, cam)) in images.iter().zip(cameras).enumerate() {
        if img.shape() != [cam.height, cam.width, 3] || masks[i].shape() != [cam.height, cam.width] {
            return Err(Error::invalid(
                "sso_fit",
                format!("view {i} does not match its camera resolution"),
            ));
        }
    }
    cfg.activation.validate()?;
    let mut raw = vec![initial_maps(images, masks, cfg)?];
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &raw,
        vec![false],
    );
    let net = PerceptualNet::new();
    let perceptual = (cfg.loss.perceptual != 0.0).then_some(&net);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let tape = Tape::new();
        let leaf = tape.leaf(raw[0].clone());
        let g = activate_all(leaf, cameras, &cfg.activation)?;
        let preds = cameras
            .iter()
            .map(|c| rasterize(&g, c, &cfg.render))
            .collect::<Result<Vec<_>>>()?;
        let (loss, report) = compute_loss(&preds, images, masks, &cfg.loss, perceptual)?;
        let grad = tape.backward(loss)?.wrt(leaf);
        if !report.total.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged {
                step,
                msg: format!(
                    "loss {} (l2 {}, perceptual {}, mask {}), gradient finite: {}",
                    report.total,
                    report.image_l2,
                    report.perceptual,
                    report.mask,
                    grad.is_finite()
                ),
            });
        }
        losses.push(report.total);
        opt.step(&mut raw, &[grad], lr_at(step, cfg.lr, cfg.warmup, cfg.steps))?;
    }
    let tape = Tape::new();
    let gaussians = activate_all(tape.constant(raw[0].clone()), cameras, &cfg.activation)?.values();
    Ok(SsoResult {
        gaussians,
        raw: raw.pop().unwrap(),
        losses,
    })
}

impl SsoResult {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}
