use grm::camera::{orbit_camera, Camera, Intrinsics};
use grm::config::RunConfig;
use grm::eval::{chamfer, chamfer_fscore};
use grm::gaussian::{export_ply, import_ply, Gaussian, GaussianSet};
use grm::io::npy;
use grm::linalg;
use grm::mesh::{marching_cubes, TsdfVolume};
use grm::render::{render, RenderSettings};
use grm::tensor::grad_check;
use grm::{Tape, Tensor};
use proptest::prelude::*;

fn cam(az: f64, el: f64, size: usize) -> Camera {
    orbit_camera(
        az,
        el,
        2.5,
        Intrinsics {
            width: size,
            height: size,
            ..Intrinsics::default()
        },
    )
    .unwrap()
}

fn unit() -> impl Strategy<Value = f64> {
    0.05f64..0.95
}

prop_compose! {
    fn gaussian()(
        position in prop::array::uniform3(-0.6f64..0.6),
        q in prop::array::uniform4(-1.0f64..1.0),
        scale in prop::array::uniform3(0.02f64..0.2),
        opacity in unit(),
        color in prop::array::uniform3(unit()),
    ) -> Gaussian {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        Gaussian { position, rotation: q.map(|v| v / n), scale, opacity, color }
    }
}

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_inverts_pixel_rays(az in 0.0f64..360.0, el in -60.0f64..60.0, u in 0.0f64..32.0, v in 0.0f64..32.0, t in 0.5f64..3.0) {
        let c = cam(az, el, 32);
        let p = linalg::add(c.center, linalg::scale(c.direction_through(u, v), t));
        let ([pu, pv], depth) = c.project(p).unwrap();
        prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        prop_assert!(depth > 0.0);
    }

    #[test]
    fn render_is_bounded_and_order_free(gs in prop::collection::vec(gaussian(), 1..12), bg in prop::array::uniform3(0.0f64..1.0), az in 0.0f64..360.0) {
        let c = cam(az, 20.0, 12);
        let s = RenderSettings::default().with_background(bg);
        let img = render(&GaussianSet::<f64>::from_gaussians(&gs), &c, &s).unwrap();
        prop_assert!(img.alpha.data().iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(img.rgb.data().iter().all(|x| (-1e-12..=1.0 + 1e-12).contains(x)));
        let mut rev = gs.clone();
        rev.reverse();
        let back = render(&GaussianSet::<f64>::from_gaussians(&rev), &c, &s).unwrap();
        prop_assert!(back.rgb.max_abs_diff(&img.rgb) < 1e-12 && back.alpha.max_abs_diff(&img.alpha) < 1e-12);
    }

    #[test]
    fn transparent_gaussians_leave_background(mut gs in prop::collection::vec(gaussian(), 1..8), bg in prop::array::uniform3(0.0f64..1.0)) {
        for g in &mut gs {
            g.opacity = 0.0;
        }
        let img = render(&GaussianSet::<f64>::from_gaussians(&gs), &cam(10.0, 10.0, 8), &RenderSettings::default().with_background(bg)).unwrap();
        for px in img.rgb.data().chunks(3) {
            prop_assert_eq!(px, &bg[..]);
        }
    }

    #[test]
    fn ply_round_trip(gs in prop::collection::vec(gaussian(), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ply");
        let set = GaussianSet::<f32>::from_gaussians(&gs);
        export_ply(&set, &p).unwrap();
        let back: GaussianSet<f32> = import_ply(&p).unwrap();
        prop_assert_eq!(back.len(), set.len());
        for (a, b) in set.iter().zip(back.iter()) {
            for k in 0..3 {
                prop_assert!((a.position[k] - b.position[k]).abs() < 1e-6);
                prop_assert!((a.scale[k] - b.scale[k]).abs() < 1e-6 * a.scale[k].max(1.0));
                prop_assert!((a.color[k] - b.color[k]).abs() < 1e-5);
            }
            prop_assert!((a.opacity - b.opacity).abs() < 1e-5);
            let dot: f64 = (0..4).map(|k| a.rotation[k] * b.rotation[k]).sum();
            prop_assert!((dot.abs() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn npy_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32 * 0.37 - 50.0).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.npy");
        npy::write_f32(&p, &shape, &data).unwrap();
        prop_assert_eq!(npy::read_f32(&p).unwrap(), (shape, data));
    }

    #[test]
    fn chamfer_is_a_symmetric_premetric(a in cloud(), b in cloud()) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let r = chamfer_fscore(&a, &b, &[0.05, 0.2, 0.8], false).unwrap();
        prop_assert!(r.fscores.iter().all(|&(_, f)| (0.0..=1.0).contains(&f)));
        prop_assert!(r.fscores.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn override_echo_round_trip(seed in any::<u32>(), steps in 1usize..100_000, lr in 1e-6f64..1e-1, deferred in any::<bool>()) {
        let o = vec![
            format!("seed={seed}"),
            format!("train.steps={steps}"),
            format!("train.optimizer.lr={lr:e}"),
            format!("train.deferred={deferred}"),
        ];
        let cfg = RunConfig::resolve(None, &o).unwrap();
        prop_assert_eq!(cfg.seed, seed as u64);
        prop_assert_eq!(cfg.train.optimizer.lr, lr);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, cfg.echo()).unwrap();
        prop_assert_eq!(RunConfig::resolve(Some(&p), &[]).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spheres_mesh_closed_with_genus_zero(r in 0.2f64..0.55, c in prop::array::uniform3(-0.05f64..0.05)) {
        let voxel = 0.05;
        let vol = TsdfVolume::from_sdf([-0.7; 3], [0.7; 3], voxel, 3.0 * voxel, |p| linalg::norm(linalg::sub(p, c)) - r).unwrap();
        let m = marching_cubes(&vol);
        prop_assert!(m.is_closed());
        prop_assert_eq!(m.euler_characteristic(), 2);
        prop_assert!(m.signed_volume() > 0.0);
        for v in &m.vertices {
            prop_assert!((linalg::norm(linalg::sub(*v, c)) - r).abs() < voxel);
        }
    }

    #[test]
    fn polynomial_gradients_check(x in prop::collection::vec(-2.0f64..2.0, 1..10)) {
        let t = Tensor::new(&[x.len()], x.clone()).unwrap();
        let r = grad_check(|_tape: &Tape<f64>, v| Ok(v.square().mul(&v)?.sum_all()), &t, 1e-6).unwrap();
        prop_assert!(r.max_rel_err < 1e-6, "{}", r.max_rel_err);
        for (g, xi) in r.analytic.iter().zip(&x) {
            prop_assert!((g - 3.0 * xi * xi).abs() < 1e-9);
        }
    }
}
