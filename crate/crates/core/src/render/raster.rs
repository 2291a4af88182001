//! Tile-binned front-to-back compositing and its reverse pass.

use super::project::{self, Splat, SplatGrad, View};
use crate::tensor::Real;

/// Mahalanobis² cutoff (3σ).
pub const CUTOFF_SQ: f64 = 9.0;
/// Transmittance below which compositing stops.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Denominator floor for expected depth.
pub const DEPTH_EPS: f64 = 1e-8;
/// Output channels per pixel: r, g, b, alpha, depth.
pub const CHANNELS: usize = 5;

/// Borrowed per-Gaussian attribute buffers.
#[derive(Clone, Copy)]
pub struct Inputs<'a, F> {
    pub means: &'a [F],
    pub quats: &'a [F],
    pub scales: &'a [F],
    pub opacities: &'a [F],
    pub colors: &'a [F],
}

impl<F: Real> Inputs<'_, F> {
    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    fn mean(&self, i: usize) -> [F; 3] {
        [self.means[3 * i], self.means[3 * i + 1], self.means[3 * i + 2]]
    }

    fn quat(&self, i: usize) -> [F; 4] {
        [
            self.quats[4 * i],
            self.quats[4 * i + 1],
            self.quats[4 * i + 2],
            self.quats[4 * i + 3],
        ]
    }

    fn scale(&self, i: usize) -> [F; 3] {
        [self.scales[3 * i], self.scales[3 * i + 1], self.scales[3 * i + 2]]
    }

    fn color(&self, i: usize) -> [F; 3] {
        [self.colors[3 * i], self.colors[3 * i + 1], self.colors[3 * i + 2]]
    }
}

/// Projected, depth-sorted scene for one view.
#[derive(Debug, Clone)]
pub struct Frame<F> {
    pub splats: Vec<Option<Splat<F>>>,
    /// visible Gaussians by ascending depth, index tie-break
    pub order: Vec<u32>,
}

impl<F: Real> Frame<F> {
    pub fn build(inputs: &Inputs<'_, F>, view: &View<F>) -> Self {
        let n = inputs.len();
        let splats: Vec<Option<Splat<F>>> = (0..n)
            .map(|i| project::project(inputs.mean(i), inputs.quat(i), inputs.scale(i), view))
            .collect();
        // depths are positive, so their bit patterns sort like the values;
        // (bits, index) is a total order and the unstable sort is deterministic
        let mut keyed: Vec<(u64, u32)> = (0..n as u32)
            .filter_map(|i| splats[i as usize].map(|sp| (sp.depth.to_f64_lossy().to_bits(), i)))
            .collect();
        keyed.sort_unstable();
        let order = keyed.into_iter().map(|(_, i)| i).collect();
        Self { splats, order }
    }

    /// Bytes of state this frame keeps alive; independent of culling.
    pub fn retained_bytes(&self) -> usize {
        self.splats.len() * (std::mem::size_of::<Option<Splat<F>>>() + std::mem::size_of::<u32>())
    }
}

/// Contiguous per-splat record in depth order, everything compositing reads.
#[derive(Debug, Clone, Copy)]
pub struct Packed<F> {
    pub mean: [F; 2],
    pub conic: [F; 3],
    pub opacity: F,
    pub depth: F,
    pub color: [F; 3],
    pub gi: u32,
}

pub fn pack<F: Real>(frame: &Frame<F>, inputs: &Inputs<'_, F>) -> Vec<Packed<F>> {
    frame
        .order
        .iter()
        .map(|&gi| {
            let sp = frame.splats[gi as usize].as_ref().unwrap();
            let i = gi as usize;
            Packed {
                mean: sp.mean,
                conic: sp.conic,
                opacity: inputs.opacities[i],
                depth: sp.depth,
                color: inputs.color(i),
                gi,
            }
        })
        .collect()
}

/// Per-tile lists of positions in [`Frame::order`], ascending.
pub struct Tiles {
    pub size: usize,
    pub nx: usize,
    pub ny: usize,
    pub lists: Vec<Vec<u32>>,
    /// inclusive pixel span `[x0, x1, y0, y1]` per order position
    pub spans: Vec<[u32; 4]>,
}

/// Side of the pixel blocks a tile list is re-filtered into before shading.
const BLOCK: usize = 4;

impl Tiles {
    pub fn bin<F: Real>(frame: &Frame<F>, width: usize, height: usize, size: usize) -> Self {
        let nx = width.div_ceil(size);
        let ny = height.div_ceil(size);
        let mut lists = vec![Vec::new(); nx * ny];
        let mut spans = vec![[1, 0, 1, 0]; frame.order.len()];
        for (k, &gi) in frame.order.iter().enumerate() {
            let sp = frame.splats[gi as usize].unwrap();
            let Some((x0, x1)) = pixel_span(sp.mean[0], sp.cov[0], width) else {
                continue;
            };
            let Some((y0, y1)) = pixel_span(sp.mean[1], sp.cov[2], height) else {
                continue;
            };
            spans[k] = [x0 as u32, x1 as u32, y0 as u32, y1 as u32];
            for ty in y0 / size..=y1 / size {
                for tx in x0 / size..=x1 / size {
                    lists[ty * nx + tx].push(k as u32);
                }
            }
        }
        Self {
            size,
            nx,
            ny,
            lists,
            spans,
        }
    }

    /// Visits every pixel block with the tile-list entries whose span
    /// touches it, in depth order: `f(list, x range, y range)`.
    pub fn for_each_block(
        &self,
        width: usize,
        height: usize,
        mut f: impl FnMut(&[u32], std::ops::Range<usize>, std::ops::Range<usize>),
    ) {
        let mut sub = Vec::new();
        for ty in 0..self.ny {
            for tx in 0..self.nx {
                let list = &self.lists[ty * self.nx + tx];
                let (xe, ye) = (((tx + 1) * self.size).min(width), ((ty + 1) * self.size).min(height));
                for by in (ty * self.size..ye).step_by(BLOCK) {
                    for bx in (tx * self.size..xe).step_by(BLOCK) {
                        let (bx1, by1) = ((bx + BLOCK).min(xe), (by + BLOCK).min(ye));
                        sub.clear();
                        sub.extend(list.iter().copied().filter(|&k| {
                            let [x0, x1, y0, y1] = self.spans[k as usize];
                            (x0 as usize) < bx1 && x1 as usize >= bx && (y0 as usize) < by1 && y1 as usize >= by
                        }));
                        f(&sub, bx..bx1, by..by1);
                    }
                }
            }
        }
    }
}

/// Pixel indices whose centres can fall inside the 3σ ellipse along one axis.
fn pixel_span<F: Real>(mean: F, var: F, extent: usize) -> Option<(usize, usize)> {
    let m = mean.to_f64_lossy();
    let r = CUTOFF_SQ.sqrt() * var.to_f64_lossy().sqrt() + 1e-3;
    let lo = (m - r - 0.5).ceil().max(0.0);
    let hi = (m + r - 0.5).floor().min(extent as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

#[inline]
fn footprint<F: Real>(sp: &Packed<F>, px: F, py: F) -> Option<(F, F, F)> {
    let dx = px - sp.mean[0];
    let dy = py - sp.mean[1];
    let md2 = sp.conic[0] * dx * dx + F::lit(2.0) * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy;
    if md2 > F::lit(CUTOFF_SQ) {
        return None;
    }
    Some(((F::lit(-0.5) * md2).exp(), dx, dy))
}

/// Composites one pixel over `splats` (front to back), writing
/// `[r, g, b, alpha, depth]`.
pub fn shade<'a, F: Real>(
    splats: impl IntoIterator<Item = &'a Packed<F>>,
    pixel: (usize, usize),
    background: [F; 3],
    early_stop: bool,
    out: &mut [F],
) {
    let px = F::lit(pixel.0 as f64 + 0.5);
    let py = F::lit(pixel.1 as f64 + 0.5);
    let one = F::one();
    let mut t = one;
    let mut c = [F::zero(); 3];
    let mut a = F::zero();
    let mut n = F::zero();
    for sp in splats {
        let Some((g, _, _)) = footprint(sp, px, py) else {
            continue;
        };
        let alpha = sp.opacity * g;
        let w = alpha * t;
        for k in 0..3 {
            c[k] += w * sp.color[k];
        }
        a += w;
        n += w * sp.depth;
        t *= one - alpha;
        if early_stop && t < F::lit(MIN_TRANSMITTANCE) {
            break;
        }
    }
    for k in 0..3 {
        out[k] = c[k] + (one - a) * background[k];
    }
    out[3] = a;
    out[4] = n / a.max(F::lit(DEPTH_EPS));
}

/// Renders all pixels tile by tile into a row-major `[H, W, 5]` buffer.
pub fn forward_tiled<F: Real>(
    frame: &Frame<F>,
    inputs: &Inputs<'_, F>,
    tiles: &Tiles,
    width: usize,
    height: usize,
    background: [F; 3],
    early_stop: bool,
) -> Vec<F> {
    let packed = pack(frame, inputs);
    let mut out = vec![F::zero(); width * height * CHANNELS];
    tiles.for_each_block(width, height, |list, xs, ys| {
        for y in ys {
            for x in xs.clone() {
                let o = (y * width + x) * CHANNELS;
                let splats = list.iter().map(|&k| &packed[k as usize]);
                shade(splats, (x, y), background, early_stop, &mut out[o..o + CHANNELS]);
            }
        }
    });
    out
}

/// Gradients with respect to the five input buffers.
pub struct InputGrads<F> {
    pub means: Vec<F>,
    pub quats: Vec<F>,
    pub scales: Vec<F>,
    pub opacities: Vec<F>,
    pub colors: Vec<F>,
}

struct Hit<F> {
    k: usize,
    alpha: F,
    t: F,
    g: F,
    dx: F,
    dy: F,
}

/// Reverse pass given `d_out`, the gradient of the `[H, W, 5]` output.
#[allow(clippy::too_many_arguments)]
pub fn backward<F: Real>(
    frame: &Frame<F>,
    inputs: &Inputs<'_, F>,
    view: &View<F>,
    tile_size: usize,
    background: [F; 3],
    early_stop: bool,
    d_out: &[F],
) -> InputGrads<F> {
    let (width, height) = (view.width, view.height);
    let n = inputs.len();
    let z = F::zero();
    let one = F::one();
    let half = F::lit(0.5);
    let two = F::lit(2.0);
    let mut sg = vec![SplatGrad::<F>::default(); n];
    let mut d_opacity = vec![z; n];
    let mut d_color = vec![z; 3 * n];
    let tiles = Tiles::bin(frame, width, height, tile_size);
    let packed = pack(frame, inputs);
    let mut hits: Vec<Hit<F>> = Vec::new();

    tiles.for_each_block(width, height, |list, xs, ys| {
        for y in ys {
            for x in xs.clone() {
                let o = (y * width + x) * CHANNELS;
                let g_out = &d_out[o..o + CHANNELS];
                if g_out.iter().all(|v| *v == z) {
                    continue;
                }
                let px = F::lit(x as f64 + 0.5);
                let py = F::lit(y as f64 + 0.5);

                // replay the forward pass, recording contributors
                hits.clear();
                let mut t = one;
                let mut a = z;
                let mut nd = z;
                for &k in list {
                    let k = k as usize;
                    let sp = &packed[k];
                    let Some((g, dx, dy)) = footprint(sp, px, py) else {
                        continue;
                    };
                    let alpha = sp.opacity * g;
                    hits.push(Hit { k, alpha, t, g, dx, dy });
                    a += alpha * t;
                    nd += alpha * t * sp.depth;
                    t *= one - alpha;
                    if early_stop && t < F::lit(MIN_TRANSMITTANCE) {
                        break;
                    }
                }

                // out_rgb = C + (1 - A) bg, out_depth = N / max(A, eps)
                let g_rgb = [g_out[0], g_out[1], g_out[2]];
                let eps = F::lit(DEPTH_EPS);
                let (g_n, g_a_depth) = if a > eps {
                    (g_out[4] / a, -g_out[4] * nd / (a * a))
                } else {
                    (g_out[4] / eps, z)
                };
                let g_a = g_out[3] + g_a_depth - (0..3).map(|k| g_rgb[k] * background[k]).sum::<F>();

                let mut suffix = z;
                for h in hits.iter().rev() {
                    let sp = &packed[h.k];
                    let gi = sp.gi as usize;
                    let col = sp.color;
                    let e = g_rgb[0] * col[0] + g_rgb[1] * col[1] + g_rgb[2] * col[2] + g_a + g_n * sp.depth;
                    let d_alpha = h.t * (e - suffix);
                    suffix = h.alpha * e + (one - h.alpha) * suffix;
                    let w = h.alpha * h.t;
                    for k in 0..3 {
                        d_color[3 * gi + k] += w * g_rgb[k];
                    }
                    let s = &mut sg[gi];
                    s.depth += w * g_n;
                    d_opacity[gi] += d_alpha * h.g;
                    let d_md2 = -half * h.alpha * d_alpha;
                    let c = sp.conic;
                    // md² = δᵀKδ with δ = p - mean
                    s.mean[0] -= d_md2 * two * (c[0] * h.dx + c[1] * h.dy);
                    s.mean[1] -= d_md2 * two * (c[1] * h.dx + c[2] * h.dy);
                    s.conic[0] += d_md2 * h.dx * h.dx;
                    s.conic[1] += d_md2 * h.dx * h.dy;
                    s.conic[2] += d_md2 * h.dy * h.dy;
                }
            }
        }
    });

    let mut grads = InputGrads {
        means: vec![z; 3 * n],
        quats: vec![z; 4 * n],
        scales: vec![z; 3 * n],
        opacities: d_opacity,
        colors: d_color,
    };
    for &gi in &frame.order {
        let i = gi as usize;
        let s = &sg[i];
        if s.depth == z && s.mean.iter().chain(&s.conic).all(|v| *v == z) {
            continue;
        }
        let (gm, gq, gs) = project::project_backward(inputs.mean(i), inputs.quat(i), inputs.scale(i), view, &sg[i]);
        grads.means[3 * i..3 * i + 3].copy_from_slice(&gm);
        grads.quats[4 * i..4 * i + 4].copy_from_slice(&gq);
        grads.scales[3 * i..3 * i + 3].copy_from_slice(&gs);
    }
    grads
}
