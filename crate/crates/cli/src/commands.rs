//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use grm::camera::load_cameras;
use grm::config::{AblationSwitch, RunConfig};
use grm::data::{generate_dataset, load_dataset, load_scene, save_dataset, SceneSample, ViewRole};
use grm::eval::{self, chamfer_fscore, subsample, MetricReport};
use grm::gaussian::{export_ply, import_ply, GaussianSet};
use grm::io::{npy, read_png, write_png};
use grm::mesh;
use grm::network::{reconstruct as predict, Weights};
use grm::render::{check::gradient_suite, check::GROUPS, render as render_set};
use grm::train::{self, reconstruct_scene, Trainer};
use grm::Tensor;
use serde_json::json;

use crate::run::RunDir;
use crate::Common;

fn resolve(common: &Common) -> Result<RunConfig> {
    Ok(RunConfig::resolve(common.config.as_deref(), &common.overrides)?)
}

fn start(command: &str, common: &Common) -> Result<(RunConfig, RunDir)> {
    let cfg = resolve(common)?;
    let mut run = RunDir::create(command, common.out.as_deref(), &cfg)?;
    if let Some(c) = &common.config {
        run.input(c);
    }
    Ok((cfg, run))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// `(train, held_out)` from the configured dataset: the first `split.scenes`
/// scenes, of which the trailing `split.held_out_scenes` are held out.
fn load_split(cfg: &RunConfig, run: &mut RunDir) -> Result<(Vec<SceneSample>, Vec<SceneSample>)> {
    let root = &cfg.paths.data;
    let (dcfg, mut scenes) = load_dataset(root).with_context(|| format!("loading dataset {}", root.display()))?;
    run.input(root);
    ensure!(
        dcfg.resolution == cfg.network.image_height && dcfg.resolution == cfg.network.image_width,
        "dataset renders {0}x{0} but the network expects {1}x{2}",
        dcfg.resolution,
        cfg.network.image_height,
        cfg.network.image_width
    );
    if scenes.len() < cfg.split.scenes {
        log::warn!(
            "dataset has {} scenes, split asks for {}",
            scenes.len(),
            cfg.split.scenes
        );
    }
    scenes.truncate(cfg.split.scenes);
    let n_held = cfg.split.held_out_scenes.min(scenes.len());
    let held = scenes.split_off(scenes.len() - n_held);
    ensure!(!scenes.is_empty(), "no training scenes left after the held-out split");
    Ok((scenes, held))
}

fn load_weights(path: &Path, run: &mut RunDir) -> Result<Weights<f32>> {
    let w = Weights::<f32>::load(path).with_context(|| format!("loading weights {}", path.display()))?;
    run.input(path);
    Ok(w)
}

pub fn gen_data(common: &Common) -> Result<()> {
    let (cfg, run) = start("gen-data", common)?;
    let t0 = Instant::now();
    let scenes = generate_dataset(cfg.split.scenes, cfg.seed, &cfg.dataset)?;
    let root = run.join("data");
    save_dataset(&root, &cfg.dataset, &scenes)?;
    log::info!(
        "{} scenes x {} views at {}px in {:.1}s -> {}",
        scenes.len(),
        cfg.dataset.views,
        cfg.dataset.resolution,
        t0.elapsed().as_secs_f64(),
        root.display()
    );
    let dir = run.finish(json!({ "scenes": scenes.len(), "data": root }))?;
    println!("{}", dir.join("data").display());
    Ok(())
}

pub fn train(common: &Common) -> Result<()> {
    let (cfg, mut run) = start("train", common)?;
    let (scenes, held) = load_split(&cfg, &mut run)?;
    run.seed("train.seed", cfg.train.seed);
    log::info!(
        "training on {} scenes, {} held out, {} steps",
        scenes.len(),
        held.len(),
        cfg.train.steps
    );
    let mut trainer = Trainer::new(Weights::init(&cfg.network, cfg.seed)?, cfg.train)?;
    let every = cfg.train.log_every.max(1);
    let summary = train::train_loop(&mut trainer, &scenes, &held, Some(&run.path), |r| {
        if r.step % every == 0 || r.step == 1 {
            log::info!(
                "step {} lr {:.2e} loss {:.5} grad {:.3}{}",
                r.step,
                r.lr,
                r.loss.total,
                r.grad_norm,
                if r.skipped { " skipped" } else { "" }
            );
        }
    })?;
    write_json(&run.join("summary.json"), &summary)?;
    if let Some(e) = &summary.eval {
        println!(
            "held-out psnr {:.3} ssim {:.4} baseline {:.3} ({} images seen, {:.0}s)",
            e.psnr, e.ssim, e.baseline_psnr, summary.images_seen, summary.seconds
        );
    }
    let dir = run.finish(json!({
        "steps": summary.steps,
        "images_seen": summary.images_seen,
        "final_loss": summary.final_loss,
        "eval_psnr": summary.eval.as_ref().map(|e| e.psnr),
        "baseline_psnr": summary.eval.as_ref().map(|e| e.baseline_psnr),
    }))?;
    println!("{}", dir.join("model.grm").display());
    Ok(())
}

fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "png" => {
            let (w, h, rgb) = read_png(path)?;
            Ok(Tensor::new(&[h, w, 3], rgb)?)
        }
        "npy" => {
            let (shape, data) = npy::read_f32(path)?;
            ensure!(
                shape.len() == 3 && shape[2] == 3,
                "{}: expected [H, W, 3], got {shape:?}",
                path.display()
            );
            Ok(Tensor::new(&shape, data)?)
        }
        _ => bail!("{}: images must be .png or .npy", path.display()),
    }
}

pub fn reconstruct(
    common: &Common,
    scene: Option<PathBuf>,
    images: &[PathBuf],
    cameras: Option<PathBuf>,
    weights: Option<PathBuf>,
) -> Result<()> {
    let (cfg, mut run) = start("reconstruct", common)?;
    let w = load_weights(weights.as_deref().unwrap_or(&cfg.paths.weights), &mut run)?;
    let t0 = Instant::now();
    let set = match (scene, cameras) {
        (Some(dir), _) => {
            let s = load_scene(&dir)?;
            run.input(&dir);
            reconstruct_scene(&w, &s)?
        }
        (None, Some(cam_path)) => {
            let cams = load_cameras(&cam_path)?;
            run.input(&cam_path);
            ensure!(
                cams.len() == images.len(),
                "{} images but {} cameras",
                images.len(),
                cams.len()
            );
            let mut data = Vec::new();
            let mut shape = None;
            for p in images {
                let img = read_image(p)?;
                run.input(p);
                ensure!(
                    *shape.get_or_insert_with(|| img.shape().to_vec()) == img.shape(),
                    "input images differ in size"
                );
                data.extend_from_slice(img.data());
            }
            let s = shape.unwrap();
            predict(&w, &Tensor::new(&[images.len(), s[0], s[1], 3], data)?, &cams)?
        }
        (None, None) => bail!("give --scene, or --images with --cameras"),
    };
    let seconds = t0.elapsed().as_secs_f64();
    let out = run.join("gaussians.ply");
    export_ply(&set, &out)?;
    log::info!("{} Gaussians in {seconds:.2}s", set.len());
    let dir = run.finish(json!({ "gaussians": set.len(), "seconds": seconds }))?;
    println!("{}", dir.join("gaussians.ply").display());
    Ok(())
}

pub fn render(common: &Common, ply: &Path, cameras: &Path) -> Result<()> {
    let (cfg, mut run) = start("render", common)?;
    let set: GaussianSet<f32> = import_ply(ply)?;
    let cams = load_cameras(cameras)?;
    run.input(ply);
    run.input(cameras);
    for (i, cam) in cams.iter().enumerate() {
        let img = render_set(&set, cam, &cfg.train.render)?;
        let (w, h) = (cam.width, cam.height);
        write_png(&run.join(format!("view_{i:03}.png")), w, h, 3, img.rgb.data())?;
        write_png(&run.join(format!("alpha_{i:03}.png")), w, h, 1, img.alpha.data())?;
        npy::write_f32(&run.join(format!("depth_{i:03}.npy")), &[h, w], img.depth.data())?;
    }
    log::info!("rendered {} views of {} Gaussians", cams.len(), set.len());
    run.finish(json!({ "views": cams.len(), "gaussians": set.len() }))?;
    Ok(())
}

pub fn sso_fit(common: &Common, scene_dir: &Path) -> Result<()> {
    let (cfg, mut run) = start("sso-fit", common)?;
    let scene = load_scene(scene_dir)?;
    run.input(scene_dir);
    run.seed("sso.seed", cfg.sso.seed);
    let inputs = scene.indices(ViewRole::Input);
    let images: Vec<_> = inputs.iter().map(|&i| scene.views[i].image.clone()).collect();
    let masks: Vec<_> = inputs.iter().map(|&i| scene.views[i].mask.clone()).collect();
    let t0 = Instant::now();
    let fit = train::sso_fit(&images, &masks, &scene.cameras(&inputs), &cfg.sso)?;
    let seconds = t0.elapsed().as_secs_f64();
    let mut rep = MetricReport {
        scene: scene.id.clone(),
        gaussians: fit.gaussians.len(),
        seconds,
        ..MetricReport::default()
    };
    for i in scene.indices(ViewRole::HeldOut) {
        let v = &scene.views[i];
        let img = render_set(&fit.gaussians, &v.camera, &cfg.sso.render)?;
        rep.psnr.push(eval::psnr(&img.rgb, &v.image)?);
        rep.ssim.push(eval::ssim(&img.rgb, &v.image)?);
        write_png(
            &run.join(format!("heldout_{i:03}.png")),
            v.camera.width,
            v.camera.height,
            3,
            img.rgb.data(),
        )?;
    }
    export_ply(&fit.gaussians, &run.join("sso.ply"))?;
    write_json(&run.join("losses.json"), &fit.losses)?;
    write_json(&run.join("report.json"), &rep)?;
    println!(
        "{} steps in {seconds:.1}s, final loss {:.6}, held-out psnr {:.3} ssim {:.4}",
        fit.losses.len(),
        fit.final_loss(),
        rep.mean_psnr(),
        rep.mean_ssim()
    );
    run.finish(json!({ "psnr": rep.mean_psnr(), "ssim": rep.mean_ssim(), "seconds": seconds }))?;
    Ok(())
}

pub fn extract_mesh(common: &Common, ply: &Path) -> Result<()> {
    let (cfg, mut run) = start("extract-mesh", common)?;
    let set: GaussianSet<f32> = import_ply(ply)?;
    run.input(ply);
    let t0 = Instant::now();
    let (mesh, vol) = mesh::extract_mesh(&set, &cfg.mesh)?;
    mesh.write_ply(&run.join("mesh.ply"))?;
    mesh.write_obj(&run.join("mesh.obj"))?;
    let stats = json!({
        "vertices": mesh.vertices.len(),
        "triangles": mesh.triangles.len(),
        "components": mesh.components().1,
        "closed": mesh.is_closed(),
        "euler_characteristic": mesh.euler_characteristic(),
        "voxel": vol.voxel,
        "dims": vol.dims,
        "seconds": t0.elapsed().as_secs_f64(),
    });
    println!("{stats}");
    run.finish(stats)?;
    Ok(())
}

fn positions(set: &GaussianSet<f32>, min_opacity: f64) -> Vec<[f64; 3]> {
    set.iter()
        .filter(|g| g.opacity >= min_opacity)
        .map(|g| g.position)
        .collect()
}

pub fn eval(common: &Common, weights: Option<PathBuf>) -> Result<()> {
    let (cfg, mut run) = start("eval", common)?;
    let w = load_weights(weights.as_deref().unwrap_or(&cfg.paths.weights), &mut run)?;
    let (_, held) = load_split(&cfg, &mut run)?;
    ensure!(!held.is_empty(), "split.held_out_scenes is 0, nothing to evaluate");
    let mut summary = train::evaluate(&w, &held, &cfg.train.render)?;
    let e = &cfg.eval;
    let mut rows = vec![MetricReport::csv_header(&e.fscore_thresholds)];
    for (rep, scene) in summary.scenes.iter_mut().zip(&held) {
        let pred = positions(&reconstruct_scene(&w, scene)?, e.opacity_threshold);
        let gt = positions(&scene.gaussians, 0.0);
        if pred.is_empty() {
            log::warn!("{}: no Gaussian reaches opacity {}", scene.id, e.opacity_threshold);
        } else {
            let (p, g) = (subsample(&pred, e.max_points), subsample(&gt, e.max_points));
            rep.geometry = Some(chamfer_fscore(&p, &g, &e.fscore_thresholds, e.align)?);
        }
        rows.push(rep.csv_row());
    }
    fs::write(run.join("metrics.csv"), rows.join("\n") + "\n")?;
    write_json(&run.join("report.json"), &summary)?;
    let chamfer: Vec<f64> = summary
        .scenes
        .iter()
        .filter_map(|r| r.geometry.as_ref().map(|g| g.chamfer))
        .collect();
    let mean_cd = chamfer.iter().sum::<f64>() / chamfer.len().max(1) as f64;
    println!(
        "{} scenes: psnr {:.3} ssim {:.4} baseline {:.3} chamfer {:.5}",
        held.len(),
        summary.psnr,
        summary.ssim,
        summary.baseline_psnr,
        mean_cd
    );
    run.finish(json!({
        "psnr": summary.psnr,
        "ssim": summary.ssim,
        "baseline_psnr": summary.baseline_psnr,
        "chamfer": mean_cd,
    }))?;
    Ok(())
}

pub fn grad_check(common: &Common, scenes: usize, gaussians: usize, size: usize, eps: f64, tol: f64) -> Result<()> {
    let (cfg, run) = start("grad-check", common)?;
    let t0 = Instant::now();
    let rep = gradient_suite(scenes, gaussians, size, cfg.seed, eps)?;
    let seconds = t0.elapsed().as_secs_f64();
    for (g, e) in GROUPS.iter().zip(rep.max_rel_err) {
        println!("{g:<10} {e:.3e}");
    }
    println!(
        "{} scenes ({} skipped for sort ties) in {seconds:.1}s, worst {:.3e}, tolerance {tol:.0e}",
        rep.checked,
        rep.skipped_ties,
        rep.worst()
    );
    write_json(&run.join("report.json"), &rep)?;
    let worst = rep.worst();
    run.finish(json!({ "worst": worst, "tolerance": tol, "seconds": seconds }))?;
    ensure!(worst <= tol, "max relative error {worst:.3e} exceeds {tol:.0e}");
    Ok(())
}

pub fn ablate(common: &Common, switches: &[String]) -> Result<()> {
    let (mut cfg, mut run) = start("ablate", common)?;
    if !switches.is_empty() {
        cfg.ablate.switches = switches
            .iter()
            .map(|s| AblationSwitch::parse(s))
            .collect::<grm::Result<_>>()?;
        fs::write(run.join(crate::run::CONFIG_ECHO), cfg.echo())?;
    }
    let (scenes, held) = load_split(&cfg, &mut run)?;
    ensure!(!held.is_empty(), "ablation needs held-out scenes");
    for (i, s) in cfg.ablate.seeds.iter().enumerate() {
        run.seed(&format!("ablate.seeds[{i}]"), *s);
    }
    let report = train::ablate(&cfg, &scenes, &held, |r| {
        log::info!(
            "{} seed {}: psnr {:.3} ssim {:.4} outside {:.4} ({:.0}s)",
            r.arm,
            r.seed,
            r.psnr,
            r.ssim,
            r.outside_mass,
            r.seconds
        );
    })?;
    let mut table = report.table();
    table.push('\n');
    for &sw in &cfg.ablate.switches {
        let holds = report.direction_holds(sw);
        table.push_str(&format!(
            "{:<18} {}\n",
            sw.name(),
            match holds {
                Some(true) => "reference direction holds",
                Some(false) => "reference direction fails",
                None => "missing",
            }
        ));
    }
    fs::write(run.join("table.txt"), &table)?;
    write_json(&run.join("ablation.json"), &report)?;
    print!("{table}");
    run.finish(json!({ "runs": report.runs.len() }))?;
    Ok(())
}
