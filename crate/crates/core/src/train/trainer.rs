use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{SceneSample, ViewRole};
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport};
use crate::gaussian::GaussianSet;
use crate::network::{reconstruct, reconstruct_vars, Weights};
use crate::render::{render, RenderSettings};
use crate::tensor::{Tape, Tensor};

use super::deferred::{deferred_backward, standard_backward, LossSetup, Supervision};
use super::loss::{LossReport, LossWeights, PerceptualNet};
use super::optim::{clip_global_norm, global_norm, lr_at, AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub warmup: usize,
    /// cosine horizon and run length
    pub steps: usize,
    /// scenes per optimizer step
    pub batch: usize,
    pub supervision_views: usize,
    pub loss: LossWeights,
    pub clip: bool,
    pub clip_norm: f64,
    /// render supervision views one at a time during backprop
    pub deferred: bool,
    pub seed: u64,
    pub log_every: usize,
    /// 0 disables periodic evaluation
    pub eval_every: usize,
    /// 0 keeps only the final checkpoint
    pub checkpoint_every: usize,
    pub render: RenderSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            warmup: 200,
            steps: 2000,
            batch: 1,
            supervision_views: 4,
            loss: LossWeights::default(),
            clip: true,
            clip_norm: 1.0,
            deferred: true,
            seed: 0,
            log_every: 10,
            eval_every: 0,
            checkpoint_every: 0,
            render: RenderSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        let positive = [o.lr, o.eps, self.clip_norm].iter().all(|&x| x > 0.0)
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.weight_decay >= 0.0;
        if !positive || self.steps == 0 || self.batch == 0 || self.supervision_views == 0 {
            return Err(Error::Config(
                "lr, eps, clip_norm, steps, batch and supervision_views must be positive; betas in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub loss: LossReport,
    pub grad_norm: f64,
    pub skipped: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR of the best single image (per-pixel mean of all targets)
    pub baseline_psnr: f64,
    pub scenes: Vec<MetricReport>,
}

pub struct Trainer {
    pub weights: Weights<f32>,
    pub config: TrainConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    perceptual: PerceptualNet<f32>,
}

impl Trainer {
    pub fn new(weights: Weights<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let decay = weights.names().iter().map(|n| n.ends_with(".w")).collect();
        let opt = AdamW::new(config.optimizer, weights.tensors(), decay);
        Ok(Self {
            weights,
            opt,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            cursor: 0,
            step: 0,
            perceptual: PerceptualNet::new(),
            config,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Next scene from a reshuffled cycle over the dataset.
    fn next_scene(&mut self, n: usize) -> usize {
        if self.cursor >= self.order.len() || self.order.len() != n {
            self.order = (0..n).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn setup(&self) -> LossSetup<'_, f32> {
        LossSetup {
            weights: self.config.loss,
            perceptual: (self.config.loss.perceptual != 0.0).then_some(&self.perceptual),
            render: self.config.render,
        }
    }

    /// Parameter gradients for one scene and a given set of supervision views.
    pub fn scene_gradients(
        &self,
        scene: &SceneSample,
        supervision: &[usize],
    ) -> Result<(Vec<Tensor<f32>>, LossReport)> {
        let inputs = scene.indices(ViewRole::Input);
        let tape = Tape::new();
        let p = self.weights.bind(&tape, true);
        let images = tape.constant(scene.stack_images(&inputs)?);
        let rec = reconstruct_vars(&p, &self.weights.config, images, &scene.cameras(&inputs))?;
        let set = rec.gaussians.values();
        let cams = scene.cameras(supervision);
        let imgs: Vec<_> = supervision.iter().map(|&i| scene.views[i].image.clone()).collect();
        let masks: Vec<_> = supervision.iter().map(|&i| scene.views[i].mask.clone()).collect();
        let sup = Supervision {
            cameras: &cams,
            images: &imgs,
            masks: &masks,
        };
        let (g, report) = if self.config.deferred {
            deferred_backward(&set, &sup, &self.setup())?
        } else {
            standard_backward(&set, &sup, &self.setup())?
        };
        let seeds: Vec<_> = rec.gaussians.as_array().into_iter().zip(g).collect();
        let back = tape.backward_seeded(&seeds)?;
        Ok((p.vars.iter().map(|&v| back.wrt(v)).collect(), report))
    }

    fn sample_supervision(&mut self, scene: &SceneSample) -> Result<Vec<usize>> {
        let mut pool = scene.indices(ViewRole::Train);
        if pool.is_empty() {
            return Err(Error::invalid("train", format!("{} has no training views", scene.id)));
        }
        pool.shuffle(&mut self.rng);
        pool.truncate(self.config.supervision_views);
        Ok(pool)
    }

    /// One optimizer step over `batch` scenes.
    pub fn train_step(&mut self, scenes: &[SceneSample]) -> Result<StepReport> {
        if scenes.is_empty() {
            return Err(Error::invalid("train", "empty dataset"));
        }
        let t0 = Instant::now();
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        let mut reports = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let idx = self.next_scene(scenes.len());
            let sup = self.sample_supervision(&scenes[idx])?;
            let (g, r) = self.scene_gradients(&scenes[idx], &sup)?;
            reports.push(r);
            grads = Some(match grads {
                None => g,
                Some(acc) => acc
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()))
                    .collect::<Result<_>>()?,
            });
        }
        let k = 1.0 / self.config.batch as f32;
        let mut grads: Vec<Tensor<f32>> = grads.unwrap().iter().map(|g| g.map(|x| x * k)).collect();
        let loss = average_reports(&reports, &self.config.loss);

        self.step += 1;
        let lr = lr_at(
            self.step,
            self.config.optimizer.lr,
            self.config.warmup,
            self.config.steps,
        );
        let finite = grads.iter().all(|g| g.is_finite()) && loss.total.is_finite();
        let grad_norm = if self.config.clip && finite {
            clip_global_norm(&mut grads, self.config.clip_norm)
        } else {
            global_norm(&grads)
        };
        if finite {
            let mut params = self.weights.tensors().to_vec();
            self.opt.step(&mut params, &grads, lr)?;
            self.weights.set_all(params)?;
        } else {
            log::warn!("step {}: non-finite gradient, update skipped", self.step);
        }
        Ok(StepReport {
            step: self.step,
            lr,
            loss,
            grad_norm,
            skipped: !finite,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }
}

fn average_reports(parts: &[LossReport], w: &LossWeights) -> LossReport {
    let n = parts.len() as f64;
    let avg = |f: fn(&LossReport) -> f64| parts.iter().map(f).sum::<f64>() / n;
    let mut r = LossReport {
        image_l2: avg(|r| r.image_l2),
        perceptual: avg(|r| r.perceptual),
        mask: avg(|r| r.mask),
        ..LossReport::default()
    };
    for p in parts {
        r.per_view_image_l2.extend(&p.per_view_image_l2);
        r.per_view_perceptual.extend(&p.per_view_perceptual);
        r.per_view_mask.extend(&p.per_view_mask);
    }
    r.total = r.reassembled_total(w);
    r
}

/// Reconstructs each scene from its input views and scores the held-out views.
pub fn evaluate(weights: &Weights<f32>, scenes: &[SceneSample], settings: &RenderSettings) -> Result<EvalSummary> {
    let mut reports = Vec::with_capacity(scenes.len());
    let mut targets = Vec::new();
    for scene in scenes {
        let t0 = Instant::now();
        let set = reconstruct_scene(weights, scene)?;
        let mut rep = MetricReport {
            scene: scene.id.clone(),
            gaussians: set.len(),
            ..MetricReport::default()
        };
        for i in scene.indices(ViewRole::HeldOut) {
            let v = &scene.views[i];
            let img = render(&set, &v.camera, settings)?;
            rep.psnr.push(eval::psnr(&img.rgb, &v.image)?);
            rep.ssim.push(eval::ssim(&img.rgb, &v.image)?);
            targets.push(&v.image);
        }
        rep.seconds = t0.elapsed().as_secs_f64();
        reports.push(rep);
    }
    if targets.is_empty() {
        return Err(Error::invalid("evaluate", "no held-out views"));
    }
    let all: Vec<f64> = reports.iter().flat_map(|r| r.psnr.iter().copied()).collect();
    let ssim: Vec<f64> = reports.iter().flat_map(|r| r.ssim.iter().copied()).collect();
    Ok(EvalSummary {
        psnr: all.iter().sum::<f64>() / all.len() as f64,
        ssim: ssim.iter().sum::<f64>() / ssim.len() as f64,
        baseline_psnr: constant_baseline(&targets)?,
        scenes: reports,
    })
}

pub fn reconstruct_scene(weights: &Weights<f32>, scene: &SceneSample) -> Result<GaussianSet<f32>> {
    let inputs = scene.indices(ViewRole::Input);
    reconstruct(weights, &scene.stack_images(&inputs)?, &scene.cameras(&inputs))
}

/// Mean PSNR of the best fixed prediction: the per-pixel mean of the targets.
pub fn constant_baseline(targets: &[&Tensor<f32>]) -> Result<f64> {
    let n = targets[0].numel();
    let mut mean = vec![0.0f64; n];
    for t in targets {
        for (m, v) in mean.iter_mut().zip(t.data()) {
            *m += *v as f64 / targets.len() as f64;
        }
    }
    let mean = Tensor::new(targets[0].shape(), mean)?;
    let mut total = 0.0;
    for t in targets {
        total += eval::psnr(&mean, &t.cast::<f64>())?;
    }
    Ok(total / targets.len() as f64)
}

/// Opacity summed over Gaussians outside `gt`'s bounding box grown by `pad`.
pub fn outside_opacity_mass(set: &GaussianSet<f32>, gt: &GaussianSet<f32>, pad: f64) -> f64 {
    let Some((lo, hi)) = gt.bounds() else {
        return 0.0;
    };
    set.iter()
        .filter(|g| (0..3).any(|k| g.position[k] < lo[k] - pad || g.position[k] > hi[k] + pad))
        .map(|g| g.opacity)
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub images_seen: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub skipped_steps: usize,
    pub eval: Option<EvalSummary>,
    pub seconds: f64,
}

struct MetricLog {
    file: Option<File>,
}

impl MetricLog {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                let path = d.join("metrics.jsonl");
                Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&path)
                        .map_err(|e| Error::io(&path, e))?,
                )
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn write(&mut self, value: serde_json::Value) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{value}").map_err(|e| Error::io("metrics.jsonl", e))?;
        }
        Ok(())
    }
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:06}.grm"))
}

/// Runs `trainer` to its configured step count, logging to
/// `out/metrics.jsonl` and checkpointing under `out/` when `out` is given.
pub fn train_loop(
    trainer: &mut Trainer,
    train: &[SceneSample],
    held_out: &[SceneSample],
    out: Option<&Path>,
    mut on_step: impl FnMut(&StepReport),
) -> Result<TrainSummary> {
    let t0 = Instant::now();
    if let Some(d) = out {
        fs::create_dir_all(d.join("checkpoints")).map_err(|e| Error::io(d, e))?;
    }
    let mut log = MetricLog::open(out)?;
    let cfg = trainer.config;
    let views_per_scene = crate::data::INPUT_AZIMUTHS.len() + cfg.supervision_views;
    let mut first = None;
    let mut last = f64::NAN;
    let mut skipped = 0;
    let mut eval = None;
    while trainer.step() < cfg.steps {
        let r = trainer.train_step(train)?;
        first.get_or_insert(r.loss.total);
        last = r.loss.total;
        skipped += r.skipped as usize;
        if r.step % cfg.log_every.max(1) == 0 || r.step == 1 || r.skipped {
            log.write(json!({
                "step": r.step,
                "lr": r.lr,
                "loss": r.loss.total,
                "image_l2": r.loss.image_l2,
                "perceptual": r.loss.perceptual,
                "mask": r.loss.mask,
                "grad_norm": r.grad_norm,
                "skipped": r.skipped,
                "seconds": r.seconds,
            }))?;
        }
        on_step(&r);
        let last_step = r.step == cfg.steps;
        if !held_out.is_empty() && ((cfg.eval_every > 0 && r.step % cfg.eval_every == 0) || last_step) {
            let e = evaluate(&trainer.weights, held_out, &cfg.render)?;
            log::info!(
                "step {} eval psnr {:.2} (baseline {:.2})",
                r.step,
                e.psnr,
                e.baseline_psnr
            );
            log.write(json!({
                "step": r.step,
                "eval_psnr": e.psnr,
                "eval_ssim": e.ssim,
                "baseline_psnr": e.baseline_psnr,
            }))?;
            eval = Some(e);
        }
        if let Some(d) = out {
            if cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 {
                trainer.weights.save(&checkpoint_path(d, r.step))?;
            }
        }
    }
    if let Some(d) = out {
        trainer.weights.save(&d.join("model.grm"))?;
    }
    Ok(TrainSummary {
        steps: trainer.step(),
        images_seen: trainer.step() * cfg.batch * views_per_scene,
        first_loss: first.unwrap_or(f64::NAN),
        final_loss: last,
        skipped_steps: skipped,
        eval,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetConfig};
    use crate::network::NetworkConfig;

    pub(crate) fn micro() -> (NetworkConfig, DatasetConfig) {
        let net = NetworkConfig {
            patch: 4,
            width: 16,
            enc_layers: 1,
            heads: 2,
            up_blocks: 1,
            window: 64,
            views: 4,
            image_height: 16,
            image_width: 16,
            ..NetworkConfig::default()
        };
        let data = DatasetConfig {
            views: 8,
            resolution: 16,
            held_out: 1,
            ..DatasetConfig::default()
        };
        (net, data)
    }

    #[test]
    fn deferred_and_standard_steps_agree() {
        let (net, dc) = micro();
        let scenes = generate_dataset(1, 0, &dc).unwrap();
        let w = Weights::<f32>::init(&net, 1).unwrap();
        let mut cfg = TrainConfig::default();
        let a = Trainer::new(w.clone(), cfg).unwrap();
        cfg.deferred = false;
        let b = Trainer::new(w, cfg).unwrap();
        let sup = scenes[0].indices(ViewRole::Train)[..2].to_vec();
        let (ga, ra) = a.scene_gradients(&scenes[0], &sup).unwrap();
        let (gb, rb) = b.scene_gradients(&scenes[0], &sup).unwrap();
        assert!((ra.total - rb.total).abs() < 1e-6);
        let (na, nb) = (global_norm(&ga), global_norm(&gb));
        assert!(na > 0.0);
        let diff: Vec<Tensor<f32>> = ga
            .iter()
            .zip(&gb)
            .map(|(x, y)| Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect()).unwrap())
            .collect();
        assert!(global_norm(&diff) < 1e-4 * nb, "{} vs {}", global_norm(&diff), nb);
    }

    #[test]
    fn loop_is_deterministic_and_logs() {
        let (net, dc) = micro();
        let scenes = generate_dataset(2, 0, &dc).unwrap();
        let cfg = TrainConfig {
            steps: 6,
            warmup: 2,
            log_every: 2,
            eval_every: 3,
            checkpoint_every: 3,
            ..TrainConfig::default()
        };
        let run = |dir: Option<&Path>| {
            let mut t = Trainer::new(Weights::init(&net, 3).unwrap(), cfg).unwrap();
            let mut losses = Vec::new();
            let s = train_loop(&mut t, &scenes[..1], &scenes[1..], dir, |r| losses.push(r.loss.total)).unwrap();
            (losses, s)
        };
        let dir = tempfile::tempdir().unwrap();
        let (l1, s1) = run(Some(dir.path()));
        let (l2, _) = run(None);
        assert_eq!(l1, l2);
        assert_eq!(s1.steps, 6);
        assert_eq!(s1.images_seen, 6 * 8);
        assert!(s1.eval.is_some());
        let log = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(lines.iter().any(|v| v.get("eval_psnr").is_some()));
        assert!(lines.iter().filter(|v| v.get("loss").is_some()).count() >= 3);
        assert!(dir.path().join("checkpoints/step_000003.grm").exists());
        let back = Weights::<f32>::load(&dir.path().join("model.grm")).unwrap();
        assert_eq!(back.config, net);
    }

    #[test]
    fn outside_mass_counts_only_outside() {
        use crate::gaussian::Gaussian;
        let g = |p: [f64; 3], o: f64| Gaussian {
            position: p,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [0.01; 3],
            opacity: o,
            color: [0.5; 3],
        };
        let gt = GaussianSet::<f32>::from_gaussians(&[g([-1.0; 3], 0.5), g([1.0; 3], 0.5)]);
        let set =
            GaussianSet::<f32>::from_gaussians(&[g([0.0; 3], 0.9), g([2.0, 0.0, 0.0], 0.25), g([0.0, -1.5, 0.0], 0.5)]);
        assert_eq!(outside_opacity_mass(&set, &gt, 0.1), 0.75);
    }

    #[test]
    fn baseline_of_identical_targets_is_infinite() {
        let t = Tensor::<f32>::full(&[2, 2, 3], 0.3);
        assert_eq!(constant_baseline(&[&t, &t]).unwrap(), f64::INFINITY);
    }
}
