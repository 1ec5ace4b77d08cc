//! Regenerates the checked-in corpus seeds: `cargo run --example make_seeds`.

use std::fs;
use std::path::Path;

use squash::cloud::encode_hpc;
use squash::geometry::format_pose_csv;
use squash::scan_model::{RouteManifest, TraversalEntry};
use squash::squash_store::{encode_record, AnchorEntry, StoreManifest};
use squash::{Anchor, FcnWeights, PointCloud, Pose6DoF, QueryKernel, SparseFeatureGrid, SquashRecord, VoxelCoord};

fn write(target: &str, name: &str, bytes: &[u8]) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
    fs::create_dir_all(&dir).expect("corpus dir");
    fs::write(dir.join(name), bytes).expect("write seed");
}

fn record(d: usize, entries: &[[i32; 3]]) -> SquashRecord {
    let mut grid = SparseFeatureGrid::new(0.3, d).unwrap();
    for (n, c) in entries.iter().enumerate() {
        let f: Vec<f32> = (0..d).map(|k| (n * d + k) as f32 + 0.5).collect();
        grid.insert(VoxelCoord::new(c[0], c[1], c[2]), &f).unwrap();
    }
    let anchor = Anchor { arclength: 10.0, position: [10.0, -2.0, 0.5] };
    SquashRecord::new(anchor, grid, 2, 0x0123_4567_89ab_cdef).unwrap()
}

fn main() {
    let empty = PointCloud::from_points(Vec::new()).unwrap();
    let xyz = PointCloud::from_points(vec![[0.0, 1.0, 2.0], [-3.5, 4.25, 0.125]]).unwrap();
    let rich = PointCloud::new(vec![[1.0, 2.0, 3.0]; 3], (0..6).map(|v| v as f32).collect(), 2).unwrap();
    write("hpc", "empty.hpc", &encode_hpc(&empty));
    write("hpc", "xyz.hpc", &encode_hpc(&xyz));
    write("hpc", "channels.hpc", &encode_hpc(&rich));

    write("sqh", "empty.sqh", &encode_record(&record(1, &[])));
    write("sqh", "scalar.sqh", &encode_record(&record(1, &[[0, 0, 0], [1, -2, 3], [-40, 7, 0]])));
    write("sqh", "wide.sqh", &encode_record(&record(5, &[[-1, -1, -1], [0, 0, 0]])));

    write("hqk", "avg_k1.hqk", &QueryKernel::averaging(1, 1, 1).unwrap().encode());
    write("hqk", "seeded_k3.hqk", &QueryKernel::seeded(3, 2, 4, 9).unwrap().encode());

    write("hfw", "small.hfw", &FcnWeights::seeded(2, 3, 1).unwrap().encode());
    write("hfw", "default.hfw", &FcnWeights::seeded(16, 8, 2).unwrap().encode());

    let poses = [
        (0, Pose6DoF::identity()),
        (1, Pose6DoF::from_yaw(0.7, [1.5, -2.0, 0.25])),
        (7, Pose6DoF::from_translation([1e6, 0.1, -3.0])),
    ];
    write("pose_csv", "three.csv", format_pose_csv(&poses).as_bytes());
    write("pose_csv", "header_only.csv", format_pose_csv(&[]).as_bytes());

    let store = StoreManifest {
        route_id: "route-a".into(),
        cfg_fingerprint: "0123456789abcdef".into(),
        anchors: vec![
            AnchorEntry { arclength: 0.0, position: [0.0; 3], file: "anchor_000000.sqh".into() },
            AnchorEntry { arclength: 10.0, position: [10.0, 0.0, 0.0], file: "anchor_000001.sqh".into() },
        ],
    };
    write("store_manifest", "two.json", serde_json::to_string_pretty(&store).unwrap().as_bytes());

    let route = RouteManifest {
        route_id: "route-a".into(),
        traversals: vec![
            TraversalEntry { id: "000".into(), dir: "traversal_000".into(), timestamp: 0 },
            TraversalEntry { id: "001".into(), dir: "runs/001".into(), timestamp: 1_700_000_000 },
        ],
    };
    write("route_manifest", "two.json", serde_json::to_string_pretty(&route).unwrap().as_bytes());
}
