//! Forward pass: tokenizer, encoder, upsampler, heads, reconstruction.

use super::config::{NetworkConfig, UpsamplerKind};
use super::weights::{head_groups, Params, Weights};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{self, ActivationStats, GaussianSet, GaussianVars};
use crate::tensor::{Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

pub fn linear<'t, F: Real>(p: &Params<'t, F>, name: &str, x: Var<'t, F>) -> Result<Var<'t, F>> {
    x.matmul(&p.get(&format!("{name}.w")))?
        .add(&p.get(&format!("{name}.b")))
}

fn layer_norm<'t, F: Real>(p: &Params<'t, F>, name: &str, x: Var<'t, F>) -> Result<Var<'t, F>> {
    x.layer_norm(&p.get(&format!("{name}.g")), &p.get(&format!("{name}.b")), LN_EPS)
}

/// Multi-head self-attention over `x: [B, L, C]`, each batch row attending
/// only within itself.
pub fn attention<'t, F: Real>(p: &Params<'t, F>, name: &str, x: Var<'t, F>, heads: usize) -> Result<Var<'t, F>> {
    let s = x.shape();
    let (b, l, c) = (s[0], s[1], s[2]);
    if c % heads != 0 {
        return Err(Error::invalid(
            "attention",
            format!("width {c} not divisible by {heads} heads"),
        ));
    }
    let d = c / heads;
    let qkv = linear(p, &format!("{name}.qkv"), x)?
        .reshape(&[b, l, 3, heads, d])?
        .permute(&[2, 0, 3, 1, 4])?
        .reshape(&[3, b * heads, l, d])?;
    let part = |i: usize| qkv.slice(0, i, i + 1)?.reshape(&[b * heads, l, d]);
    let q = part(0)?.scale(F::lit(1.0 / (d as f64).sqrt()));
    let (k, v) = (part(1)?, part(2)?);
    let att = q.matmul_t(&k)?.softmax()?;
    let out = att
        .matmul(&v)?
        .reshape(&[b, heads, l, d])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, l, c])?;
    linear(p, &format!("{name}.proj"), out)
}

/// Pre-norm transformer block on `[B, L, C]`.
pub fn transformer_block<'t, F: Real>(
    p: &Params<'t, F>,
    name: &str,
    x: Var<'t, F>,
    heads: usize,
) -> Result<Var<'t, F>> {
    let h = attention(
        p,
        &format!("{name}.attn"),
        layer_norm(p, &format!("{name}.ln1"), x)?,
        heads,
    )?;
    let x = x.add(&h)?;
    let h = linear(p, &format!("{name}.mlp.fc1"), layer_norm(p, &format!("{name}.ln2"), x)?)?.gelu();
    x.add(&linear(p, &format!("{name}.mlp.fc2"), h)?)
}

/// Cyclic roll of a `[L, C]` sequence so that `out[i] = x[(i - shift) mod L]`.
pub fn roll<'t, F: Real>(x: Var<'t, F>, shift: isize) -> Result<Var<'t, F>> {
    let l = x.shape()[0] as isize;
    let s = shift.rem_euclid(l) as usize;
    if s == 0 {
        return Ok(x);
    }
    let l = l as usize;
    Var::concat(&[x.slice(0, l - s, l)?, x.slice(0, 0, l - s)?], 0)
}

/// Transformer block applied independently to consecutive windows of a
/// `[L, C]` sequence; with `shifted`, the sequence is rolled by half a
/// window first and rolled back after.
pub fn window_block<'t, F: Real>(
    p: &Params<'t, F>,
    name: &str,
    x: Var<'t, F>,
    window: usize,
    heads: usize,
    shifted: bool,
) -> Result<Var<'t, F>> {
    let s = x.shape();
    let (l, c) = (s[0], s[1]);
    let w = window.min(l);
    if l % w != 0 {
        return Err(Error::invalid(
            "window_block",
            format!("window {w} does not divide length {l}"),
        ));
    }
    let shift = (window / 2) as isize;
    let x = if shifted { roll(x, shift)? } else { x };
    let y = transformer_block(p, name, x.reshape(&[l / w, w, c])?, heads)?.reshape(&[l, c])?;
    if shifted {
        roll(y, -shift)
    } else {
        Ok(y)
    }
}

/// Depth-to-space: `[B, h, w, c·r²] -> [B, h·r, w·r, c]`, channel
/// `ch·r² + dy·r + dx` landing at sub-pixel `(dy, dx)`.
pub fn pixel_shuffle<'t, F: Real>(x: Var<'t, F>, r: usize) -> Result<Var<'t, F>> {
    let s = x.shape();
    if s.len() != 4 || !s[3].is_multiple_of(r * r) {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("shape {s:?} not divisible by {}", r * r),
        ));
    }
    let (b, h, w, c) = (s[0], s[1], s[2], s[3] / (r * r));
    x.reshape(&[b, h, w, c, r, r])?
        .permute(&[0, 1, 4, 2, 5, 3])?
        .reshape(&[b, h * r, w * r, c])
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<'t, F: Real>(x: Var<'t, F>, r: usize) -> Result<Var<'t, F>> {
    let s = x.shape();
    if s.len() != 4 || !s[1].is_multiple_of(r) || !s[2].is_multiple_of(r) {
        return Err(Error::invalid(
            "pixel_unshuffle",
            format!("shape {s:?} not divisible by {r}"),
        ));
    }
    let (b, h, w, c) = (s[0], s[1] / r, s[2] / r, s[3]);
    x.reshape(&[b, h, r, w, r, c])?
        .permute(&[0, 1, 3, 5, 2, 4])?
        .reshape(&[b, h, w, c * r * r])
}

/// Strided-convolution tokenizer over image + Plücker channels:
/// `[V, H, W, 3]`, `[V, H, W, 6]` -> `[V, H/p, W/p, C]`.
pub fn tokenize<'t, F: Real>(
    p: &Params<'t, F>,
    cfg: &NetworkConfig,
    images: Var<'t, F>,
    pluckers: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let x = Var::concat(&[images, pluckers], 3)?;
    let patches = x.unfold(cfg.patch, cfg.patch, 0)?;
    linear(p, "tok", patches)
}

/// Adds positional encodings and runs the global encoder:
/// `[V, h, w, C] -> [V·h·w, C]`.
pub fn encode<'t, F: Real>(p: &Params<'t, F>, cfg: &NetworkConfig, tokens: Var<'t, F>) -> Result<Var<'t, F>> {
    let s = tokens.shape();
    let (v, n, c) = (s[0], s[1] * s[2], s[3]);
    let mut x = tokens
        .reshape(&[v, n, c])?
        .add(&p.get("pos"))?
        .reshape(&[1, v * n, c])?;
    let heads = cfg.heads_at(c);
    for i in 0..cfg.enc_layers {
        x = transformer_block(p, &format!("enc.{i}"), x, heads)?;
    }
    x.reshape(&[v * n, c])
}

/// One upsampler block on a `[V, h, w, C]` grid, returning `[V, 2h, 2w, C/2]`.
pub fn upsample_block<'t, F: Real>(
    p: &Params<'t, F>,
    cfg: &NetworkConfig,
    block: usize,
    x: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let s = x.shape();
    let (v, h, w) = (s[0], s[1], s[2]);
    match cfg.upsampler {
        UpsamplerKind::Transformer => {
            let y = pixel_shuffle(linear(p, &format!("up.{block}.fc"), x)?, 2)?;
            let c = y.shape()[3];
            let heads = cfg.heads_at(c);
            let seq = y.reshape(&[v * 4 * h * w, c])?;
            let seq = window_block(p, &format!("up.{block}.win"), seq, cfg.window, heads, false)?;
            let seq = window_block(p, &format!("up.{block}.shift"), seq, cfg.window, heads, true)?;
            seq.reshape(&[v, 2 * h, 2 * w, c])
        }
        UpsamplerKind::Conv => {
            let cols = x.unfold(3, 1, 1)?;
            pixel_shuffle(linear(p, &format!("up.{block}.conv"), cols)?.gelu(), 2)
        }
    }
}

/// Linear heads on the final `[V, H/r, W/r, c]` grid, followed by a
/// pixel shuffle when `r > 1`; returns the raw `[V, H, W, channels]` map.
pub fn heads<'t, F: Real>(p: &Params<'t, F>, cfg: &NetworkConfig, x: Var<'t, F>) -> Result<Var<'t, F>> {
    let r = cfg.head_shuffle();
    let parts = head_groups(cfg)
        .into_iter()
        .map(|(name, _)| {
            let y = linear(p, &format!("head.{name}"), x)?;
            if r > 1 {
                pixel_shuffle(y, r)
            } else {
                Ok(y)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        Var::concat(&parts, 3)
    }
}

/// Plücker maps for a camera rig as a `[V, H, W, 6]` tensor.
pub fn plucker_tensor<F: Real>(cameras: &[Camera]) -> Result<Tensor<F>> {
    let first = cameras.first().ok_or_else(|| Error::invalid("plucker", "no cameras"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(cameras.len() * h * w * 6);
    for cam in cameras {
        if (cam.height, cam.width) != (h, w) {
            return Err(Error::invalid("plucker", "cameras differ in resolution"));
        }
        data.extend(cam.pixel_rays().plucker().iter().flatten().map(|&v| F::lit(v)));
    }
    Tensor::new(&[cameras.len(), h, w, 6], data)
}

/// Raw attribute maps `[V, H, W, channels]` for `images: [V, H, W, 3]`.
pub fn attribute_maps<'t, F: Real>(
    p: &Params<'t, F>,
    cfg: &NetworkConfig,
    images: Var<'t, F>,
    cameras: &[Camera],
) -> Result<Var<'t, F>> {
    let want = [cfg.views, cfg.image_height, cfg.image_width, 3];
    if images.shape() != want || cameras.len() != cfg.views {
        return Err(Error::shape("reconstruct", &images.shape(), &want));
    }
    let tape = images.tape();
    let pl = tape.constant(plucker_tensor(cameras)?);
    let tokens = tokenize(p, cfg, images, pl)?;
    let (h, w) = cfg.grid();
    let mut x = encode(p, cfg, tokens)?.reshape(&[cfg.views, h, w, cfg.width])?;
    for b in 0..cfg.up_blocks {
        x = upsample_block(p, cfg, b, x)?;
    }
    heads(p, cfg, x)
}

/// Pixel-aligned Gaussians of all views, recorded on the tape.
pub struct Reconstruction<'t, F: Real> {
    pub gaussians: GaussianVars<'t, F>,
    pub raw: Var<'t, F>,
    pub stats: ActivationStats,
}

pub fn reconstruct_vars<'t, F: Real>(
    p: &Params<'t, F>,
    cfg: &NetworkConfig,
    images: Var<'t, F>,
    cameras: &[Camera],
) -> Result<Reconstruction<'t, F>> {
    let raw = attribute_maps(p, cfg, images, cameras)?;
    let mut per_view = Vec::with_capacity(cameras.len());
    let mut stats = ActivationStats::default();
    let c = cfg.activation.channels();
    for (v, cam) in cameras.iter().enumerate() {
        let map = raw
            .slice(0, v, v + 1)?
            .reshape(&[cfg.image_height, cfg.image_width, c])?;
        let (g, s) = gaussian::activate(map, cam, &cfg.activation)?;
        stats.zero_quaternions += s.zero_quaternions;
        per_view.push(g);
    }
    Ok(Reconstruction {
        gaussians: GaussianVars::merge(&per_view)?,
        raw,
        stats,
    })
}

/// Feed-forward reconstruction without gradient tracking.
pub fn reconstruct<F: Real>(weights: &Weights<F>, images: &Tensor<F>, cameras: &[Camera]) -> Result<GaussianSet<F>> {
    let tape = Tape::new();
    let p = weights.bind(&tape, false);
    let out = reconstruct_vars(&p, &weights.config, tape.constant(images.clone()), cameras)?;
    Ok(out.gaussians.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{orbit_camera, Intrinsics};
    use crate::network::weights::param_count;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config() -> NetworkConfig {
        NetworkConfig {
            patch: 4,
            width: 16,
            enc_layers: 1,
            heads: 2,
            up_blocks: 2,
            window: 16,
            views: 2,
            image_height: 8,
            image_width: 8,
            ..NetworkConfig::default()
        }
    }

    fn rig(cfg: &NetworkConfig) -> Vec<Camera> {
        let intr = Intrinsics {
            width: cfg.image_width,
            height: cfg.image_height,
            ..Intrinsics::default()
        };
        (0..cfg.views)
            .map(|i| orbit_camera(360.0 * i as f64 / cfg.views as f64, 20.0, 2.5, intr).unwrap())
            .collect()
    }

    #[test]
    fn pixel_shuffle_layout_and_inverse() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = pixel_shuffle(x, 2).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 2, 1]);
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::randn(&[2, 3, 5, 8], 1.0, &mut rng));
        let y = pixel_shuffle(x, 2).unwrap();
        assert_eq!(y.shape(), vec![2, 6, 10, 2]);
        let energy = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>();
        assert_eq!(energy(&y.value()), energy(&x.value()));
        assert_eq!(pixel_unshuffle(y, 2).unwrap().value(), x.value());
        assert!(pixel_shuffle(tape.constant(Tensor::zeros(&[1, 1, 1, 3])), 2).is_err());
    }

    #[test]
    fn tokenizer_matches_direct_convolution() {
        let cfg = small_config();
        let w = Weights::<f64>::init(&cfg, 3).unwrap();
        let tape = Tape::new();
        let p = w.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::<f64>::uniform(&[2, 8, 8, 3], 0.0, 1.0, &mut rng);
        let pl = Tensor::<f64>::randn(&[2, 8, 8, 6], 1.0, &mut rng);
        let out = tokenize(&p, &cfg, tape.constant(img.clone()), tape.constant(pl.clone()))
            .unwrap()
            .value();
        assert_eq!(out.shape(), &[2, 2, 2, 16]);
        let (kw, kb) = (w.get("tok.w").unwrap().data(), w.get("tok.b").unwrap().data());
        for v in 0..2 {
            for ty in 0..2 {
                for tx in 0..2 {
                    for o in 0..16 {
                        let mut acc = kb[o];
                        for dy in 0..4 {
                            for dx in 0..4 {
                                let (y, x) = (4 * ty + dy, 4 * tx + dx);
                                for ch in 0..9 {
                                    let val = if ch < 3 {
                                        img.data()[((v * 8 + y) * 8 + x) * 3 + ch]
                                    } else {
                                        pl.data()[((v * 8 + y) * 8 + x) * 6 + ch - 3]
                                    };
                                    acc += val * kw[((dy * 4 + dx) * 9 + ch) * 16 + o];
                                }
                            }
                        }
                        let got = out.data()[((v * 2 + ty) * 2 + tx) * 16 + o];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
        // zero input -> bias
        let zeros = tokenize(
            &p,
            &cfg,
            tape.constant(Tensor::zeros(&[2, 8, 8, 3])),
            tape.constant(Tensor::zeros(&[2, 8, 8, 6])),
        )
        .unwrap()
        .value();
        for t in zeros.data().chunks(16) {
            assert_eq!(t, kb);
        }
    }

    fn zero_linears(w: &mut Weights<f64>) {
        let names: Vec<String> = w.names().to_vec();
        for n in names {
            if n.contains(".attn.") || n.contains(".mlp.") {
                let shape = w.get(&n).unwrap().shape().to_vec();
                w.set(&n, Tensor::zeros(&shape)).unwrap();
            }
        }
    }

    #[test]
    fn zero_weight_encoder_is_identity_plus_positions() {
        let cfg = small_config();
        let mut w = Weights::<f64>::init(&cfg, 4).unwrap();
        zero_linears(&mut w);
        let tape = Tape::new();
        let p = w.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tokens = Tensor::<f64>::randn(&[2, 2, 2, 16], 1.0, &mut rng);
        let out = encode(&p, &cfg, tape.constant(tokens.clone())).unwrap().value();
        let pos = w.get("pos").unwrap().data();
        for (i, (o, t)) in out.data().iter().zip(tokens.data()).enumerate() {
            assert!((o - (t + pos[i % pos.len()])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_attention_upsampler_reduces_to_linear_and_shuffle() {
        let cfg = small_config();
        let mut w = Weights::<f64>::init(&cfg, 4).unwrap();
        zero_linears(&mut w);
        let tape = Tape::new();
        let p = w.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = tape.constant(Tensor::<f64>::randn(&[2, 2, 2, 16], 1.0, &mut rng));
        let got = upsample_block(&p, &cfg, 0, x).unwrap().value();
        let want = pixel_shuffle(linear(&p, "up.0.fc", x).unwrap(), 2).unwrap().value();
        assert!(got.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn three_token_attention_by_hand() {
        let cfg = NetworkConfig {
            heads: 1,
            width: 2,
            ..small_config()
        };
        // one block's attention weights, hand set: q = k = v = x, proj = I
        let mut specs = std::collections::HashMap::new();
        let eye2 = vec![1.0, 0.0, 0.0, 1.0];
        let mut qkv = vec![0.0; 2 * 6];
        for r in 0..2 {
            for blk in 0..3 {
                qkv[r * 6 + blk * 2 + r] = 1.0;
            }
        }
        specs.insert("a.qkv.w", Tensor::new(&[2, 6], qkv).unwrap());
        specs.insert("a.qkv.b", Tensor::zeros(&[6]));
        specs.insert("a.proj.w", Tensor::new(&[2, 2], eye2).unwrap());
        specs.insert("a.proj.b", Tensor::zeros(&[2]));
        let names: Vec<String> = specs.keys().map(|s| s.to_string()).collect();
        let index: std::collections::HashMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let tape = Tape::<f64>::new();
        let p = Params::for_test(
            names.iter().map(|n| tape.constant(specs[n.as_str()].clone())).collect(),
            index,
        );
        let xs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let x = tape.constant(Tensor::new(&[1, 3, 2], xs.iter().flatten().copied().collect()).unwrap());
        let out = attention(&p, "a", x, cfg.heads).unwrap().value();
        let scale = 1.0 / 2f64.sqrt();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| scale * (xs[i][0] * xs[j][0] + xs[i][1] * xs[j][1]))
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..2 {
                let want: f64 = (0..3).map(|j| logits[j].exp() / z * xs[j][c]).sum();
                assert!((out.data()[i * 2 + c] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn window_degenerates_to_full_attention() {
        let cfg = NetworkConfig {
            window: 1024,
            ..small_config()
        };
        let w = Weights::<f64>::init(&cfg, 8).unwrap();
        let tape = Tape::new();
        let p = w.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = tape.constant(Tensor::<f64>::randn(&[2, 2, 2, 16], 1.0, &mut rng));
        let got = upsample_block(&p, &cfg, 0, x).unwrap().value();
        let y = pixel_shuffle(linear(&p, "up.0.fc", x).unwrap(), 2).unwrap();
        let seq = y.reshape(&[1, 32, 8]).unwrap();
        let heads = cfg.heads_at(8);
        let seq = transformer_block(&p, "up.0.win", seq, heads).unwrap();
        let seq = transformer_block(&p, "up.0.shift", seq, heads).unwrap();
        assert!(got.max_abs_diff(&seq.reshape(&[2, 4, 4, 8]).unwrap().value()) < 1e-12);
    }

    #[test]
    fn shifted_window_reaches_the_tail() {
        let cfg = small_config();
        let w = Weights::<f64>::init(&cfg, 10).unwrap();
        let tape = Tape::new();
        let p = w.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = Tensor::<f64>::randn(&[64, 8], 1.0, &mut rng);
        let mut bumped = base.to_vec();
        bumped[63 * 8] += 1.0;
        let bumped = Tensor::new(&[64, 8], bumped).unwrap();
        let run = |t: &Tensor<f64>, shifted: bool| {
            window_block(&p, "up.0.win", tape.constant(t.clone()), 16, 2, shifted)
                .unwrap()
                .value()
                .data()[..8]
                .to_vec()
        };
        assert_eq!(run(&base, false), run(&bumped, false));
        assert_ne!(run(&base, true), run(&bumped, true));
    }

    #[test]
    fn reconstruct_counts_and_alignment() {
        let cfg = small_config();
        let w = Weights::<f64>::init(&cfg, 12).unwrap();
        let cams = rig(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = Tensor::<f64>::uniform(&[2, 8, 8, 3], 0.0, 1.0, &mut rng);
        let set = reconstruct(&w, &img, &cams).unwrap();
        assert_eq!(set.len(), 2 * 64);
        set.validate(0.005, 0.02).unwrap();
        for (i, g) in set.iter().enumerate() {
            let cam = &cams[i / 64];
            let ray = cam.pixel_rays().directions[i % 64];
            let rel = crate::linalg::sub(g.position, cam.center);
            assert!(crate::linalg::norm(crate::linalg::cross(rel, ray)) < 1e-9);
        }
        assert_eq!(reconstruct(&w, &img, &cams).unwrap(), set);
    }

    #[test]
    fn view_permutation_equivariance() {
        let cfg = small_config();
        let w = Weights::<f64>::init(&cfg, 14).unwrap();
        let tape = Tape::new();
        let p = w.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let tokens = Tensor::<f64>::randn(&[2, 2, 2, 16], 1.0, &mut rng);
        let swapped = {
            let d = tokens.data();
            Tensor::new(&[2, 2, 2, 16], [&d[64..], &d[..64]].concat()).unwrap()
        };
        let a = encode(&p, &cfg, tape.constant(tokens)).unwrap().value();
        let b = encode(&p, &cfg, tape.constant(swapped)).unwrap().value();
        let a_sw: Vec<f64> = [&a.data()[64..], &a.data()[..64]].concat();
        let diff = a_sw
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    fn hand_count(cfg: &NetworkConfig) -> usize {
        let block = |c: usize| 4 * c + (3 * c * c + 3 * c) + (c * c + c) + (4 * c * c + 4 * c) + (4 * c * c + c);
        let c = cfg.width;
        let mut n = cfg.patch * cfg.patch * 9 * c + c + cfg.tokens_per_view() * c;
        n += cfg.enc_layers * block(c);
        let mut cin = c;
        for _ in 0..cfg.up_blocks {
            n += cin * 2 * cin + 2 * cin + 2 * block(cin / 2);
            cin /= 2;
        }
        let r = cfg.patch >> cfg.up_blocks;
        n + (cin + 1) * r * r * 12
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        for cfg in [NetworkConfig::default(), NetworkConfig::tiny(), small_config()] {
            assert_eq!(param_count(&cfg), hand_count(&cfg));
        }
        let zero_up = NetworkConfig {
            up_blocks: 0,
            ..small_config()
        };
        assert_eq!(param_count(&zero_up), hand_count(&zero_up));
    }

    #[test]
    fn end_to_end_gradient_wrt_tokenizer_weight() {
        let cfg = small_config();
        let w = Weights::<f64>::init(&cfg, 16).unwrap();
        let cams = rig(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let img = Tensor::<f64>::uniform(&[2, 8, 8, 3], 0.0, 1.0, &mut rng);
        let target = Tensor::<f64>::uniform(&[8, 8, 3], 0.0, 1.0, &mut rng);
        let tok = w.get("tok.w").unwrap().clone();
        let idx = w.names().iter().position(|n| n == "tok.w").unwrap();
        let report = crate::tensor::grad_check(
            |tape, x| {
                let mut p = w.bind(tape, false);
                p.vars[idx] = x;
                let rec = reconstruct_vars(&p, &cfg, tape.constant(img.clone()), &cams)?;
                let out = crate::render::rasterize(&rec.gaussians, &cams[0], &Default::default())?;
                Ok(out.rgb.sub(&tape.constant(target.clone()))?.square().sum_all())
            },
            &tok,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
