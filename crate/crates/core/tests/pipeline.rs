use grm::data::{generate_dataset, load_dataset, save_dataset, DatasetConfig, ViewRole};
use grm::gaussian::{export_ply, import_ply, GaussianSet};
use grm::mesh::{extract_mesh, MeshConfig};
use grm::network::{NetworkConfig, Weights};
use grm::train::{evaluate, reconstruct_scene, train_loop, TrainConfig, Trainer};

fn micro() -> (DatasetConfig, NetworkConfig) {
    let data = DatasetConfig {
        views: 8,
        resolution: 16,
        held_out: 2,
        ..DatasetConfig::default()
    };
    let net = NetworkConfig {
        patch: 4,
        width: 16,
        enc_layers: 1,
        heads: 2,
        up_blocks: 1,
        window: 64,
        image_height: 16,
        image_width: 16,
        ..NetworkConfig::default()
    };
    (data, net)
}

#[test]
fn dataset_to_mesh() {
    let (dcfg, ncfg) = micro();
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_dataset(3, 7, &dcfg).unwrap();
    save_dataset(dir.path(), &dcfg, &scenes).unwrap();
    let (back_cfg, back) = load_dataset(dir.path()).unwrap();
    assert_eq!(back_cfg, dcfg);
    assert_eq!(back, scenes);
    assert_eq!(back[0].indices(ViewRole::Input).len(), 4);
    assert_eq!(back[0].indices(ViewRole::HeldOut).len(), 2);

    let tc = TrainConfig {
        steps: 3,
        warmup: 1,
        supervision_views: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Weights::init(&ncfg, 1).unwrap(), tc).unwrap();
    let out = dir.path().join("run");
    let summary = train_loop(&mut trainer, &back[..2], &back[2..], Some(&out), |_| {}).unwrap();
    assert_eq!(summary.steps, 3);
    assert_eq!(summary.images_seen, 3 * (4 + 2));
    assert!(summary.eval.is_some());
    let reloaded = Weights::<f32>::load(&out.join("model.grm")).unwrap();
    assert_eq!(reloaded.tensors(), trainer.weights.tensors());

    let e = evaluate(&reloaded, &back[2..], &tc.render).unwrap();
    assert_eq!(e.scenes.len(), 1);
    assert_eq!(e.scenes[0].psnr.len(), 2);
    assert!(e.psnr.is_finite() && e.baseline_psnr.is_finite());

    let set = reconstruct_scene(&reloaded, &back[2]).unwrap();
    assert_eq!(set.len(), 4 * 16 * 16);
    let ply = dir.path().join("pred.ply");
    export_ply(&set, &ply).unwrap();
    let loaded: GaussianSet<f32> = import_ply(&ply).unwrap();
    assert_eq!(loaded.len(), set.len());

    let mcfg = MeshConfig {
        views: 12,
        resolution: 32,
        grid: 24,
        ..MeshConfig::default()
    };
    let (mesh, vol) = extract_mesh(&back[0].gaussians, &mcfg).unwrap();
    assert!(!mesh.is_empty());
    assert!(vol.weight.iter().any(|w| *w > 0.0));
    assert_eq!(mesh.components().1, 1);
}
