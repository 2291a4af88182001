use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MICRO: &str = r#"
[split]
scenes = 3
held_out_scenes = 1

[dataset]
resolution = 16
views = 6
held_out = 1

[network]
patch = 4
width = 16
enc_layers = 1
heads = 2
up_blocks = 1
window = 64
image_height = 16
image_width = 16

[train]
steps = 2
warmup = 1
log_every = 1

[sso]
steps = 3

[mesh]
views = 6
resolution = 24
grid = 20

[ablate]
seeds = [3]
"#;

fn grm(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grm"))
        .args(args)
        .env("GRM_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], root: &Path) -> String {
    let o = grm(args, root);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn micro(dir: &Path) -> PathBuf {
    let p = dir.join("micro.toml");
    fs::write(&p, MICRO).unwrap();
    p
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walkdir::WalkDir::new(root).sort_by_file_name() {
        let e = e.unwrap();
        if e.file_type().is_file() {
            out.push((
                e.path().strip_prefix(root).unwrap().to_path_buf(),
                fs::read(e.path()).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!grm(&["frobnicate"], dir.path()).status.success());
    assert!(!grm(&[], dir.path()).status.success());
    let o = grm(&["gen-data", "train.nope=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    let o = grm(&["ablate", "--switch", "dropout"], dir.path());
    assert!(!o.status.success());
    let o = grm(&["reconstruct", "--weights", "/nonexistent.grm"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn gen_data_is_deterministic_and_echo_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(dir.path());
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(
        &["gen-data", "--config", c, "seed=1", "--out", a.to_str().unwrap()],
        dir.path(),
    );
    ok(
        &["gen-data", "--config", c, "seed=1", "--out", b.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(tree(&a.join("data")), tree(&b.join("data")));
    let echo = a.join("config.toml");
    let e = dir.path().join("e");
    ok(
        &[
            "gen-data",
            "--config",
            echo.to_str().unwrap(),
            "--out",
            e.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(tree(&a.join("data")), tree(&e.join("data")));
    assert_eq!(fs::read(echo).unwrap(), fs::read(e.join("config.toml")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join("MANIFEST.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["seed"], 1);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "data/dataset.json"));
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn default_run_dir_lands_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = micro(dir.path());
    ok(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    let runs: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("gen-data-"))
        .collect();
    assert_eq!(runs.len(), 1);
    assert!(dir.path().join(&runs[0]).join("MANIFEST.json").exists());
}

#[test]
fn grad_check_reports_groups_and_gates_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &["grad-check", "--scenes", "2", "--gaussians", "4", "--size", "8"],
        dir.path(),
    );
    for g in ["means", "rotations", "scales", "opacities", "colors"] {
        assert!(out.contains(g), "{out}");
    }
    let o = grm(
        &[
            "grad-check",
            "--scenes",
            "1",
            "--gaussians",
            "4",
            "--size",
            "8",
            "--tol",
            "0",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn full_pipeline_on_micro_config() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = micro(root);
    let c = cfg.to_str().unwrap();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();

    ok(&["gen-data", "--config", c, "--out", &p("gen")], root);
    let data = format!("paths.data={}", p("gen/data"));
    ok(&["train", "--config", c, &data, "--out", &p("train")], root);
    let weights = p("train/model.grm");
    assert!(Path::new(&weights).exists());
    assert!(root.join("train/metrics.jsonl").exists());

    let scene = p("gen/data/scene_0000");
    ok(
        &[
            "reconstruct",
            "--config",
            c,
            "--weights",
            &weights,
            "--scene",
            &scene,
            "--out",
            &p("rec"),
        ],
        root,
    );
    let set: grm::gaussian::GaussianSet<f32> = grm::gaussian::import_ply(&root.join("rec/gaussians.ply")).unwrap();
    assert_eq!(set.len(), 4 * 16 * 16);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(root.join("gen/data/scene_0000/manifest.json")).unwrap()).unwrap();
    let inputs: Vec<String> = manifest["views"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|v| v["role"] == "input")
        .map(|v| format!("{scene}/preview/{:03}.png", v["index"].as_u64().unwrap()))
        .collect();
    let cams = grm::camera::load_cameras(&root.join("gen/data/scene_0000/cameras.json")).unwrap();
    let idx: Vec<usize> = manifest["views"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|v| v["role"] == "input")
        .map(|v| v["index"].as_u64().unwrap() as usize)
        .collect();
    let in_cams: Vec<_> = idx.iter().map(|&i| cams[i].clone()).collect();
    grm::camera::save_cameras(&root.join("in_cams.json"), &in_cams).unwrap();
    let mut args = vec!["reconstruct", "--config", c, "--weights", &weights, "--cameras"];
    let cam_arg = p("in_cams.json");
    args.push(&cam_arg);
    args.push("--images");
    args.extend(inputs.iter().map(String::as_str));
    let out_png = p("rec_png");
    args.extend(["--out", &out_png]);
    ok(&args, root);
    let from_png: grm::gaussian::GaussianSet<f32> =
        grm::gaussian::import_ply(&root.join("rec_png/gaussians.ply")).unwrap();
    assert_eq!(from_png.len(), set.len());

    ok(
        &[
            "render",
            "--config",
            c,
            "--ply",
            &p("rec/gaussians.ply"),
            "--cameras",
            &cam_arg,
            "--out",
            &p("ren"),
        ],
        root,
    );
    for i in 0..4 {
        assert!(root.join(format!("ren/view_{i:03}.png")).exists());
        assert!(root.join(format!("ren/depth_{i:03}.npy")).exists());
    }

    let out = ok(&["sso-fit", "--config", c, "--scene", &scene, "--out", &p("sso")], root);
    assert!(out.contains("held-out psnr"), "{out}");

    ok(
        &[
            "extract-mesh",
            "--config",
            c,
            "--ply",
            &p("gen/data/scene_0000/gt.ply"),
            "--out",
            &p("mesh"),
        ],
        root,
    );
    assert!(root.join("mesh/mesh.ply").exists() && root.join("mesh/mesh.obj").exists());
    grm::mesh::Mesh::read_ply(&root.join("mesh/mesh.ply")).unwrap();

    ok(
        &["eval", "--config", c, &data, "--weights", &weights, "--out", &p("eval")],
        root,
    );
    let csv = fs::read_to_string(root.join("eval/metrics.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("scene,views,psnr,ssim,chamfer,fscore@0.01"));
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());

    let out = ok(
        &[
            "ablate",
            "--config",
            c,
            &data,
            "--switch",
            "mask-loss",
            "--out",
            &p("abl"),
        ],
        root,
    );
    assert!(out.contains("reference") && out.contains("mask-loss"), "{out}");
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(root.join("abl/ablation.json")).unwrap()).unwrap();
    assert_eq!(rep["runs"].as_array().unwrap().len(), 2);
}
