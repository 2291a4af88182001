//! Image, perceptual and mask losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::RenderVars;
use crate::tensor::{Real, Tape, Tensor, Var};

const FEATURE_SEED: u64 = 0x5eed_f00d;
const STAGES: [usize; 4] = [3, 16, 32, 64];

/// Frozen strided convolution stack standing in for a pretrained feature
/// extractor: three 3×3 stride-2 convolutions with ReLU, orthogonal init.
#[derive(Debug, Clone)]
pub struct PerceptualNet<F: Real> {
    /// `[9·c_in, c_out]` per stage
    pub kernels: Vec<Tensor<F>>,
}

/// Orthonormal columns via modified Gram-Schmidt on a Gaussian matrix.
fn orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!(cols <= rows);
    let mut cols_v: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..cols {
        for i in 0..j {
            let (done, rest) = cols_v.split_at_mut(j);
            let d: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (x, q) in rest[0].iter_mut().zip(&done[i]) {
                *x -= d * q;
            }
        }
        let n = cols_v[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        cols_v[j].iter_mut().for_each(|x| *x /= n);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = cols_v[c][r];
        }
    }
    out
}

impl<F: Real> PerceptualNet<F> {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FEATURE_SEED);
        let kernels = STAGES
            .windows(2)
            .map(|w| {
                let rows = 9 * w[0];
                let data = orthogonal(rows, w[1], &mut rng).into_iter().map(F::lit).collect();
                Tensor::new(&[rows, w[1]], data).unwrap()
            })
            .collect();
        Self { kernels }
    }

    /// Feature maps of an `[H, W, 3]` image, one per stage.
    pub fn features<'t>(&self, image: Var<'t, F>) -> Result<Vec<Var<'t, F>>> {
        let tape = image.tape();
        let s = image.shape();
        let mut x = image.reshape(&[1, s[0], s[1], s[2]])?;
        let mut out = Vec::with_capacity(self.kernels.len());
        for k in &self.kernels {
            x = x.unfold(3, 2, 1)?.matmul(&tape.constant(k.clone()))?.relu();
            out.push(x);
        }
        Ok(out)
    }

    /// Sum over stages of mean squared feature differences.
    pub fn loss<'t>(&self, a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let mut total: Option<Var<'t, F>> = None;
        for (x, y) in fa.iter().zip(&fb) {
            let l = x.sub(y)?.square().mean_all();
            total = Some(match total {
                None => l,
                Some(t) => t.add(&l)?,
            });
        }
        total.ok_or_else(|| Error::invalid("perceptual", "no stages"))
    }

    /// Untaped convenience wrapper.
    pub fn loss_value(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
        let tape = Tape::new();
        Ok(self
            .loss(tape.constant(a.clone()), tape.constant(b.clone()))?
            .item()
            .to_f64_lossy())
    }
}

impl<F: Real> Default for PerceptualNet<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub perceptual: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            perceptual: 0.5,
            mask: 1.0,
        }
    }
}

/// Per-view loss components (plain numbers) and their means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub image_l2: f64,
    pub perceptual: f64,
    pub mask: f64,
    pub per_view_image_l2: Vec<f64>,
    pub per_view_perceptual: Vec<f64>,
    pub per_view_mask: Vec<f64>,
}

impl LossReport {
    /// Recomputes `total` from the logged components.
    pub fn reassembled_total(&self, w: &LossWeights) -> f64 {
        self.image_l2 + w.perceptual * self.perceptual + w.mask * self.mask
    }

    fn push(&mut self, l2: f64, lp: f64, mask: f64) {
        self.per_view_image_l2.push(l2);
        self.per_view_perceptual.push(lp);
        self.per_view_mask.push(mask);
    }

    fn finish(&mut self, w: &LossWeights) {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.image_l2 = mean(&self.per_view_image_l2);
        self.perceptual = mean(&self.per_view_perceptual);
        self.mask = mean(&self.per_view_mask);
        self.total = self.reassembled_total(w);
    }

    /// Merges the single-view reports produced by deferred backprop.
    pub fn combine(parts: &[LossReport], w: &LossWeights) -> Self {
        let mut out = LossReport::default();
        for p in parts {
            out.per_view_image_l2.extend(&p.per_view_image_l2);
            out.per_view_perceptual.extend(&p.per_view_perceptual);
            out.per_view_mask.extend(&p.per_view_mask);
        }
        out.finish(w);
        out
    }
}

/// Loss of one view scaled by `1 / n_views`, so that per-view losses sum to
/// the multi-view objective.
pub fn view_loss<'t, F: Real>(
    pred: &RenderVars<'t, F>,
    image: &Tensor<F>,
    mask: &Tensor<F>,
    weights: &LossWeights,
    perceptual: Option<&PerceptualNet<F>>,
    n_views: usize,
) -> Result<(Var<'t, F>, [f64; 3])> {
    let tape = pred.rgb.tape();
    if pred.rgb.shape() != image.shape() {
        return Err(Error::shape("loss", &pred.rgb.shape(), image.shape()));
    }
    if pred.alpha.shape() != mask.shape() {
        return Err(Error::shape("loss", &pred.alpha.shape(), mask.shape()));
    }
    let gt = tape.constant(image.clone());
    let l2 = pred.rgb.sub(&gt)?.square().mean_all();
    let mut total = l2;
    let mut lp_val = 0.0;
    if let Some(net) = perceptual.filter(|_| weights.perceptual != 0.0) {
        let lp = net.loss(pred.rgb, gt)?;
        lp_val = lp.item().to_f64_lossy();
        total = total.add(&lp.scale(F::lit(weights.perceptual)))?;
    }
    let lm = pred.alpha.sub(&tape.constant(mask.clone()))?.square().mean_all();
    if weights.mask != 0.0 {
        total = total.add(&lm.scale(F::lit(weights.mask)))?;
    }
    let scaled = total.scale(F::lit(1.0 / n_views as f64));
    Ok((scaled, [l2.item().to_f64_lossy(), lp_val, lm.item().to_f64_lossy()]))
}

/// `L = mean_v(L2 + w_p·L_p) + w_m·mean_v(L2(mask))` over all supervision views.
pub fn compute_loss<'t, F: Real>(
    preds: &[RenderVars<'t, F>],
    images: &[Tensor<F>],
    masks: &[Tensor<F>],
    weights: &LossWeights,
    perceptual: Option<&PerceptualNet<F>>,
) -> Result<(Var<'t, F>, LossReport)> {
    if preds.is_empty() || preds.len() != images.len() || preds.len() != masks.len() {
        return Err(Error::invalid("compute_loss", "need one image and mask per prediction"));
    }
    let mut report = LossReport::default();
    let mut total: Option<Var<'t, F>> = None;
    for ((p, img), m) in preds.iter().zip(images).zip(masks) {
        let (l, [l2, lp, lm]) = view_loss(p, img, m, weights, perceptual, preds.len())?;
        report.push(l2, lp, lm);
        total = Some(match total {
            None => l,
            Some(t) => t.add(&l)?,
        });
    }
    report.finish(weights);
    Ok((total.unwrap(), report))
}

/// Report for a single view, for assembling deferred-backprop results.
pub fn single_view_report(components: [f64; 3], weights: &LossWeights) -> LossReport {
    let mut r = LossReport::default();
    r.push(components[0], components[1], components[2]);
    r.finish(weights);
    r
}
