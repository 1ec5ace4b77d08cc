mod common;

use squash::runtime::Endower;
use squash::scan_model::{load_route, save_route};
use squash::sim_harness::{generate_scene, SceneSpec};
use squash::squash_builder::SquashBuilder;
use squash::{BuildConfig, Error, FeaturizerSpec, QueryKernel, SquashStore};

use common::{dense_conv_then_index, entries};

fn scene_spec() -> SceneSpec {
    SceneSpec {
        seed: 11,
        extent_m: [50.0, 24.0, 4.0],
        persistent_objects: 10,
        transient_objects: 2,
        points_per_object: 80,
        traversals: 3,
        scan_arclength_m: 23.0,
        ..SceneSpec::default()
    }
}

#[test]
fn route_on_disk_to_endowed_scan_matches_dense_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = generate_scene(&scene_spec()).unwrap();
    let route_dir = tmp.path().join("route");
    save_route(&route_dir, "e2e", &scene.traversals).unwrap();

    let (manifest, traversals) = load_route(&route_dir).unwrap();
    assert_eq!(manifest.route_id, "e2e");
    // points are stored as f32
    assert_eq!(traversals.len(), scene.traversals.len());
    for (a, b) in traversals.iter().zip(&scene.traversals) {
        assert_eq!((a.id(), a.timestamp(), a.frames().len()), (b.id(), b.timestamp(), b.frames().len()));
        for (fa, fb) in a.frames().iter().zip(b.frames()) {
            assert_eq!(fa.pose, fb.pose);
            for (p, q) in fa.cloud.points().iter().zip(fb.cloud.points()) {
                assert!((0..3).all(|k| (p[k] - q[k]).abs() <= 1e-5 * (1.0 + q[k].abs())));
            }
        }
    }

    let cfg = BuildConfig { t_max: 2, kernel_size: 3, d_history: 6, ..BuildConfig::default() };
    let builder = SquashBuilder::new(cfg, FeaturizerSpec::Stats).unwrap();
    let records = builder.build_route(&traversals).unwrap();
    let store_dir = tmp.path().join("store");
    SquashStore::new("e2e", records.clone()).unwrap().save_dir(&store_dir).unwrap();

    let kernel_path = tmp.path().join("k.hqk");
    let kernel = QueryKernel::seeded(cfg.kernel_size, 5, cfg.d_history, 4).unwrap();
    kernel.save(&kernel_path).unwrap();

    let endower = Endower::open(&store_dir, &kernel_path).unwrap();
    assert_eq!(endower.store().records(), records.as_slice());
    assert_eq!(endower.d_history(), 6);

    let scan = &scene.current;
    let out = endower.endow(&scan.cloud, &scan.true_pose).unwrap();
    // anchors every 10 m; the scan sits at 23 m, nearest is 20 m
    assert_eq!(out.anchor_arclength, 20.0);
    assert_eq!(out.cloud.points, scan.cloud.points());

    let record = records.iter().find(|r| r.anchor.arclength == 20.0).unwrap();
    let delta = f64::from(record.grid().delta_m());
    let r = scan.true_pose.rotation();
    let t = scan.true_pose.translation();
    // row-major [R | t]
    let pose: [f64; 12] = std::array::from_fn(|i| if i % 4 == 3 { t[i / 4] } else { r[(i / 4, i % 4)] });
    let [r00, r01, r02, t0, r10, r11, r12, t1, r20, r21, r22, t2] = pose;
    let voxels: Vec<[i32; 3]> = scan
        .cloud
        .points()
        .iter()
        .map(|p| {
            let g = [
                r00 * p[0] + r01 * p[1] + r02 * p[2] + t0,
                r10 * p[0] + r11 * p[1] + r12 * p[2] + t1,
                r20 * p[0] + r21 * p[1] + r22 * p[2] + t2,
            ];
            g.map(|v| (v / delta).floor() as i32)
        })
        .collect();
    let expected = dense_conv_then_index(&entries(record.grid()), 5, 3, 6, kernel.weights(), &voxels);
    let mut nonzero = 0;
    for (i, want) in expected.iter().enumerate() {
        let got = out.cloud.history_row(i);
        for (g, w) in got.iter().zip(want) {
            assert!((f64::from(*g) - w).abs() <= 1e-4 * (1.0 + w.abs()), "point {i}: {g} vs {w}");
        }
        nonzero += usize::from(want.iter().any(|&w| w != 0.0));
    }
    assert!(nonzero > scan.cloud.len() / 2, "{nonzero} of {} points have history", scan.cloud.len());

    let flat: Vec<f64> = scan.cloud.points().iter().flatten().copied().collect();
    assert_eq!(endower.endow_flat(&flat, &pose).unwrap(), out.cloud.history);
}

#[test]
fn open_rejects_kernel_of_wrong_width() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneSpec { traversals: 1, ..scene_spec() }).unwrap();
    let cfg = BuildConfig { t_max: 1, ..BuildConfig::default() };
    let records = SquashBuilder::new(cfg, FeaturizerSpec::Identity)
        .unwrap()
        .build_route(&scene.traversals)
        .unwrap();
    let store_dir = tmp.path().join("store");
    SquashStore::new("x", records).unwrap().save_dir(&store_dir).unwrap();
    let kernel_path = tmp.path().join("k.hqk");
    QueryKernel::averaging(5, 2, 4).unwrap().save(&kernel_path).unwrap();
    assert!(matches!(Endower::open(&store_dir, &kernel_path), Err(Error::Config(_))));

    assert!(Endower::open(tmp.path().join("absent"), &kernel_path).is_err());
    assert!(Endower::open(&store_dir, tmp.path().join("absent.hqk")).is_err());

    QueryKernel::averaging(5, 1, 4).unwrap().save(&kernel_path).unwrap();
    let endower = Endower::open(&store_dir, &kernel_path).unwrap();
    // a zero rotation is not orthonormal
    assert!(matches!(endower.endow_flat(&[0.0; 3], &[0.0; 12]), Err(Error::Validation(_))));
    assert!(endower.endow_flat(&[0.0; 4], &[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.]).is_err());
}
