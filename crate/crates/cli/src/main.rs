//! `squash`: build, query and benchmark history-feature stores.
//!
//! Results go to stdout as one JSON object per line; diagnostics go to
//! stderr. Exit status is 0 on success, 1 on runtime failure and 2 on
//! invalid usage, configuration or input format.

use std::collections::btree_map::{BTreeMap, Entry};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use squash::cloud::{read_hpc, write_hpc};
use squash::geometry::{format_pose_csv, parse_pose_csv};
use squash::query_engine::{query_latency_probe, QueryKernel};
use squash::runtime::Endower;
use squash::scan_model::{load_route, save_route};
use squash::sim_harness::{
    generate_scene, latency_record, latency_scan, latency_scene_spec, Ephemerality, NoiseModel, RunOptions, Scene,
    SceneSpec,
};
use squash::squash_builder::SquashBuilder;
use squash::squash_store::{entry_len, SQH_HEADER_LEN, SQH_TRAILER_LEN};
use squash::{AggregationMode, BuildConfig, Error, FcnWeights, FeaturizerSpec, SquashStore};

#[derive(Parser)]
#[command(name = "squash", version, about = "Geo-indexed sparse history-feature store for LiDAR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store (one record per anchor) from a route directory.
    #[command(allow_negative_numbers = true)]
    Build(BuildArgs),
    /// Endow a scan with history features from a store.
    #[command(allow_negative_numbers = true)]
    Query(QueryArgs),
    /// Measure query latency and record size on a synthetic scene.
    #[command(allow_negative_numbers = true)]
    Bench(BenchArgs),
    /// Run the ephemerality benchmark on synthetic scenes.
    #[command(allow_negative_numbers = true)]
    Sim(SimArgs),
    /// Write a synthetic route plus a labelled held-out scan.
    #[command(allow_negative_numbers = true)]
    GenScene(GenSceneArgs),
    /// Write a query kernel blob.
    MakeKernel(MakeKernelArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Voxel edge length in metres.
    #[arg(long, default_value_t = 0.3)]
    delta_m: f64,
    /// Edge of the cubic query kernel (odd).
    #[arg(long, default_value_t = 5)]
    kernel_size: usize,
    /// Width of the per-point history feature.
    #[arg(long, default_value_t = 64)]
    d_history: usize,
    /// Number of most recent traversals aggregated per anchor.
    #[arg(long, default_value_t = 5)]
    t_max: usize,
    #[arg(long, default_value_t = 10.0)]
    anchor_spacing_m: f64,
    /// Metres behind the anchor included in the dense window.
    #[arg(long, default_value_t = 0.0)]
    h_start_m: f64,
    /// Metres ahead of the anchor included in the dense window.
    #[arg(long, default_value_t = 20.0)]
    h_end_m: f64,
    /// At most one scan per this many metres of the window.
    #[arg(long, default_value_t = 5.0)]
    frame_stride_m: f64,
}

impl ConfigArgs {
    fn config(&self) -> BuildConfig {
        BuildConfig {
            h_start: self.h_start_m,
            h_end: self.h_end_m,
            frame_stride_m: self.frame_stride_m,
            anchor_spacing_m: self.anchor_spacing_m,
            t_max: self.t_max,
            delta_m: self.delta_m,
            kernel_size: self.kernel_size,
            d_history: self.d_history,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FeaturizerKind {
    Identity,
    Stats,
    Fcn,
}

#[derive(Args)]
struct FeaturizerArgs {
    #[arg(long, value_enum, default_value_t = FeaturizerKind::Identity)]
    featurizer: FeaturizerKind,
    /// Weight blob for `--featurizer fcn`.
    #[arg(long, value_name = "PATH")]
    fcn_weights: Option<PathBuf>,
}

impl FeaturizerArgs {
    fn spec(&self) -> Result<FeaturizerSpec, Error> {
        let kind = match self.featurizer {
            FeaturizerKind::Identity => "identity",
            FeaturizerKind::Stats => "stats",
            FeaturizerKind::Fcn => "fcn",
        };
        let weights = match (&self.fcn_weights, self.featurizer) {
            (Some(path), FeaturizerKind::Fcn) => Some(FcnWeights::load(path)?),
            (Some(_), _) => return Err(Error::Config("--fcn-weights requires --featurizer fcn".into())),
            (None, _) => None,
        };
        FeaturizerSpec::from_kind(kind, None, weights)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Max,
    Mean,
}

#[derive(Args)]
struct BuildArgs {
    /// Route directory containing `manifest.json`.
    route_dir: PathBuf,
    /// Output store directory (replaced atomically).
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    featurizer: FeaturizerArgs,
    #[arg(long, value_enum, default_value_t = Aggregation::Max)]
    aggregation: Aggregation,
}

#[derive(Args)]
struct QueryArgs {
    /// Store directory written by `squash build`.
    store_dir: PathBuf,
    /// Scan in the sensor frame (`.hpc`).
    #[arg(long)]
    scan: PathBuf,
    /// Pose CSV holding the scan pose.
    #[arg(long)]
    pose: PathBuf,
    /// Row of the pose CSV to use; required when it has more than one row.
    #[arg(long)]
    frame_id: Option<u64>,
    /// Query kernel blob. Without it a random kernel of shape
    /// `--kernel-size`/`--d-history` is drawn from `--seed`.
    #[arg(long, value_name = "PATH")]
    kernel: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    kernel_size: usize,
    #[arg(long, default_value_t = 64)]
    d_history: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output `.hpc` with the input channels followed by the history
    /// features.
    #[arg(long, short)]
    out: PathBuf,
    /// Warn when the nearest anchor is farther than this.
    #[arg(long, default_value_t = 5.0)]
    max_distance_m: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Points in the query scan.
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    /// Feature width of the stored grid.
    #[arg(long, default_value_t = 1)]
    d_grid: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `KEY=V1,V2,...`; repeatable (cartesian product). Keys: delta_m,
    /// kernel_size, d_history, d_grid, points, seed. Defaults to
    /// `delta_m=0.2,0.3,0.5,1.0`.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Vec<Sweep>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    featurizer: FeaturizerArgs,
    /// Localization noise sigma applied to the test scan pose.
    #[arg(long, default_value_t = 0.0)]
    loc_sigma_m: f64,
    #[arg(long, default_value_t = 0.0)]
    bearing_sigma_deg: f64,
    /// Distance the anchor lies behind the scan along the route.
    #[arg(long, default_value_t = 0.0)]
    anchor_offset_m: f64,
    /// Perturb past-traversal poses too.
    #[arg(long)]
    noisy_past_poses: bool,
    #[arg(long, default_value_t = 0.02)]
    sensor_noise_m: f64,
    /// First scene seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenes (seeds `seed..seed+seeds`); above one, a summary
    /// line with the median AUC follows each sweep point.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// `KEY=V1,V2,...`; repeatable (cartesian product). Keys: loc_sigma_m,
    /// bearing_sigma_deg, t_max, anchor_offset_m, delta_m, kernel_size.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Vec<Sweep>,
}

#[derive(Args)]
struct GenSceneArgs {
    /// Output directory; receives `route/`, `scan.hpc`, `scan_pose.csv`
    /// and `labels.json`.
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    traversals: usize,
    #[arg(long, default_value_t = 100.0)]
    length_m: f64,
    /// Route position of the held-out scan.
    #[arg(long, default_value_t = 40.0)]
    scan_arclength_m: f64,
    #[arg(long, default_value_t = 0.02)]
    sensor_noise_m: f64,
    /// Ground samples per frame.
    #[arg(long, default_value_t = 0)]
    ground_points: usize,
}

#[derive(Args)]
struct MakeKernelArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    kernel_size: usize,
    /// Feature width of the store the kernel will read.
    #[arg(long, default_value_t = 1)]
    d_in: usize,
    #[arg(long, default_value_t = 64)]
    d_history: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Uniform averaging weights instead of random ones.
    #[arg(long)]
    averaging: bool,
}

#[derive(Debug, Clone)]
struct Sweep {
    key: String,
    values: Vec<f64>,
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let (key, list) = s.split_once('=').ok_or("expected KEY=V1,V2,...")?;
    let values = list
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if key.is_empty() || values.is_empty() {
        return Err("expected KEY=V1,V2,...".into());
    }
    Ok(Sweep {
        key: key.trim().replace('-', "_"),
        values,
    })
}

/// Every combination of the sweep values, in row-major order (last sweep
/// varies fastest).
fn sweep_points(sweeps: &[Sweep]) -> Vec<Vec<(String, f64)>> {
    let mut points = vec![Vec::new()];
    for s in sweeps {
        points = points
            .into_iter()
            .flat_map(|p| {
                s.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((s.key.clone(), v));
                    q
                })
            })
            .collect();
    }
    points
}

fn check_keys(sweeps: &[Sweep], allowed: &[&str]) -> Result<(), Error> {
    for s in sweeps {
        if !allowed.contains(&s.key.as_str()) {
            return Err(Error::Config(format!(
                "unknown sweep key `{}` (expected one of {})",
                s.key,
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

fn as_count(key: &str, v: f64) -> Result<usize, Error> {
    if v.fract() != 0.0 || v < 0.0 || !v.is_finite() {
        return Err(Error::Config(format!("sweep {key}={v} must be a non-negative integer")));
    }
    Ok(v as usize)
}

fn emit(value: &Value) {
    println!("{value}");
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Config(_) | Error::Decode { .. } | Error::DecodeBytes(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

fn cmd_build(args: &BuildArgs) -> Result<(), Error> {
    let start = Instant::now();
    let cfg = args.cfg.config();
    cfg.validate()?;
    let spec = args.featurizer.spec()?;
    let (manifest, traversals) = load_route(&args.route_dir)?;
    let mode = match args.aggregation {
        Aggregation::Max => AggregationMode::Max,
        Aggregation::Mean => AggregationMode::Mean,
    };
    let builder = SquashBuilder::new(cfg, spec)?.with_mode(mode);
    let records = builder.build_route(&traversals)?;
    let store = SquashStore::new(manifest.route_id, records)?;
    store.save_dir(&args.out)?;
    let report = store.storage_report();
    let voxels: usize = report.records.iter().map(|r| r.voxels).sum();
    emit(&json!({
        "command": "build",
        "route_id": store.route_id(),
        "anchors": store.len(),
        "traversals": traversals.len(),
        "voxels": voxels,
        "bytes": report.total_bytes,
        "delta_m": cfg.delta_m,
        "cfg_fingerprint": format!("{:016x}", builder.fingerprint()),
        "wall_ms": elapsed_ms(start),
    }));
    Ok(())
}

fn cmd_query(args: &QueryArgs) -> Result<(), Error> {
    let start = Instant::now();
    let store = SquashStore::load_dir(&args.store_dir)?;
    let d_in = store
        .records()
        .first()
        .map(|r| r.grid().d())
        .ok_or_else(|| Error::NotFound("store has no records".into()))?;
    let kernel = match &args.kernel {
        Some(path) => QueryKernel::load(path)?,
        None => QueryKernel::seeded(args.kernel_size, d_in, args.d_history, args.seed)?,
    };
    let endower = Endower::new(store, kernel)?;
    let scan = read_hpc(&args.scan)?;
    let text = fs::read_to_string(&args.pose).map_err(|e| Error::io(&args.pose, e))?;
    let rows = parse_pose_csv(&text)?;
    let pose = match (args.frame_id, rows.as_slice()) {
        (None, [(_, pose)]) => *pose,
        (None, _) => {
            return Err(Error::Validation(format!(
                "{} has {} rows; pick one with --frame-id",
                args.pose.display(),
                rows.len()
            )))
        }
        (Some(id), _) => rows
            .iter()
            .find(|(f, _)| *f == id)
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::Validation(format!("frame {id} not in {}", args.pose.display())))?,
    };
    let load_ms = elapsed_ms(start);
    let start = Instant::now();
    let endowed = endower.endow(&scan, &pose)?;
    let query_ms = elapsed_ms(start);
    let out = endowed.cloud.to_point_cloud();
    write_hpc(&args.out, &out)?;
    let within = endowed.distance_m <= args.max_distance_m;
    if !within {
        eprintln!(
            "warning: nearest anchor is {:.2} m from the scan pose (threshold {} m)",
            endowed.distance_m, args.max_distance_m
        );
    }
    emit(&json!({
        "command": "query",
        "n_points": out.len(),
        "channels": out.n_channels(),
        "d_history": endower.d_history(),
        "anchor_arclength": endowed.anchor_arclength,
        "distance_m": endowed.distance_m,
        "within_threshold": within,
        "load_ms": load_ms,
        "query_ms": query_ms,
    }));
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    const KEYS: [&str; 6] = ["delta_m", "kernel_size", "d_history", "d_grid", "points", "seed"];
    check_keys(&args.sweep, &KEYS)?;
    let default_sweep = [Sweep {
        key: "delta_m".into(),
        values: vec![0.2, 0.3, 0.5, 1.0],
    }];
    let sweeps: &[Sweep] = if args.sweep.is_empty() { &default_sweep } else { &args.sweep };
    let mut scenes: BTreeMap<u64, Scene> = BTreeMap::new();
    for point in sweep_points(sweeps) {
        let mut cfg = args.cfg.config();
        let (mut d_grid, mut n, mut seed) = (args.d_grid, args.points, args.seed);
        for (key, v) in &point {
            match key.as_str() {
                "delta_m" => cfg.delta_m = *v,
                "kernel_size" => cfg.kernel_size = as_count(key, *v)?,
                "d_history" => cfg.d_history = as_count(key, *v)?,
                "d_grid" => d_grid = as_count(key, *v)?,
                "points" => n = as_count(key, *v)?,
                _ => seed = as_count(key, *v)? as u64,
            }
        }
        cfg.validate()?;
        let scene = match scenes.entry(seed) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(generate_scene(&latency_scene_spec(seed))?),
        };
        let record = latency_record(scene, &cfg, d_grid, seed.wrapping_add(1))?;
        let scan = latency_scan(scene, n, seed.wrapping_add(2))?;
        let kernel = QueryKernel::seeded(cfg.kernel_size, d_grid, cfg.d_history, seed.wrapping_add(3))?;
        let stats = query_latency_probe(&scan, &[n], &record, &kernel, args.reps.max(1))?;
        let s = &stats[0];
        emit(&json!({
            "command": "bench",
            "delta_m": cfg.delta_m,
            "kernel_size": cfg.kernel_size,
            "d_grid": d_grid,
            "d_history": cfg.d_history,
            "seed": seed,
            "n_points": s.n_points,
            "grid_voxels": s.grid_voxels,
            "record_bytes": SQH_HEADER_LEN + s.grid_voxels * entry_len(d_grid) + SQH_TRAILER_LEN,
            "repetitions": s.repetitions,
            "mean_ms": s.mean_ms,
            "median_ms": s.median_ms,
            "p99_ms": s.p99_ms,
        }));
    }
    Ok(())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 0 { (values[m - 1] + values[m]) / 2.0 } else { values[m] })
}

fn cmd_sim(args: &SimArgs) -> Result<(), Error> {
    const KEYS: [&str; 6] = ["loc_sigma_m", "bearing_sigma_deg", "t_max", "anchor_offset_m", "delta_m", "kernel_size"];
    check_keys(&args.sweep, &KEYS)?;
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let spec = args.featurizer.spec()?;
    let scenes = (args.seed..args.seed.saturating_add(args.seeds))
        .map(|seed| {
            generate_scene(&SceneSpec {
                seed,
                sensor_noise_m: args.sensor_noise_m,
                ..SceneSpec::default()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    for point in sweep_points(&args.sweep) {
        let mut cfg = args.cfg.config();
        let mut noise = NoiseModel {
            loc_sigma_m: args.loc_sigma_m,
            bearing_sigma_deg: args.bearing_sigma_deg,
            seed: 0,
        };
        let mut offset = args.anchor_offset_m;
        for (key, v) in &point {
            match key.as_str() {
                "loc_sigma_m" => noise.loc_sigma_m = *v,
                "bearing_sigma_deg" => noise.bearing_sigma_deg = *v,
                "t_max" => cfg.t_max = as_count(key, *v)?,
                "anchor_offset_m" => offset = *v,
                "delta_m" => cfg.delta_m = *v,
                _ => cfg.kernel_size = as_count(key, *v)?,
            }
        }
        cfg.validate()?;
        noise.validate()?;
        let mut aucs = Vec::new();
        for scene in &scenes {
            let opts = RunOptions {
                t: cfg.t_max.min(scene.traversals.len()),
                anchor_offset_m: offset,
                noisy_past_poses: args.noisy_past_poses,
            };
            let seed = scene.spec.seed;
            let bench = Ephemerality::new(scene.clone(), cfg, spec.clone())?;
            let run = bench.run(&opts, &NoiseModel { seed, ..noise })?;
            aucs.extend(run.auc);
            let mut line = Map::new();
            line.insert("command".into(), json!("sim"));
            if let Value::Object(fields) = serde_json::to_value(&run)? {
                line.extend(fields);
            }
            line.insert("delta_m".into(), json!(cfg.delta_m));
            line.insert("kernel_size".into(), json!(cfg.kernel_size));
            emit(&Value::Object(line));
        }
        if scenes.len() > 1 {
            let mean = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
            emit(&json!({
                "command": "sim",
                "summary": true,
                "T": cfg.t_max.min(scenes[0].traversals.len()),
                "sigma_m": noise.loc_sigma_m,
                "bearing_deg": noise.bearing_sigma_deg,
                "anchor_offset_m": offset,
                "delta_m": cfg.delta_m,
                "kernel_size": cfg.kernel_size,
                "runs": scenes.len(),
                "median_auc": median(&mut aucs),
                "mean_auc": mean,
            }));
        }
    }
    Ok(())
}

fn cmd_gen_scene(args: &GenSceneArgs) -> Result<(), Error> {
    let spec = SceneSpec {
        seed: args.seed,
        extent_m: [args.length_m, SceneSpec::default().extent_m[1], SceneSpec::default().extent_m[2]],
        traversals: args.traversals,
        scan_arclength_m: args.scan_arclength_m,
        sensor_noise_m: args.sensor_noise_m,
        ground_points_per_frame: args.ground_points,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec)?;
    let dir: &Path = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let route_id = format!("synthetic-{}", args.seed);
    save_route(dir.join("route"), &route_id, &scene.traversals)?;
    write_hpc(dir.join("scan.hpc"), &scene.current.cloud)?;
    let pose_path = dir.join("scan_pose.csv");
    fs::write(&pose_path, format_pose_csv(&[(0, scene.current.true_pose)])).map_err(|e| Error::io(&pose_path, e))?;
    let labels_path = dir.join("labels.json");
    fs::write(&labels_path, serde_json::to_string(&scene.current.labels)?).map_err(|e| Error::io(&labels_path, e))?;
    let frames: usize = scene.traversals.iter().map(|t| t.frames().len()).sum();
    emit(&json!({
        "command": "gen-scene",
        "route_id": route_id,
        "traversals": scene.traversals.len(),
        "frames": frames,
        "route_length_m": scene.traversals.first().map_or(0.0, |t| t.total_arclength()),
        "scan_points": scene.current.cloud.len(),
        "scan_arclength_m": scene.current.arclength,
    }));
    Ok(())
}

fn cmd_make_kernel(args: &MakeKernelArgs) -> Result<(), Error> {
    let kernel = if args.averaging {
        QueryKernel::averaging(args.kernel_size, args.d_in, args.d_history)?
    } else {
        QueryKernel::seeded(args.kernel_size, args.d_in, args.d_history, args.seed)?
    };
    kernel.save(&args.out)?;
    emit(&json!({
        "command": "make-kernel",
        "kernel_size": kernel.k(),
        "d_in": kernel.d_in(),
        "d_history": kernel.d_out(),
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Query(a) => cmd_query(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sim(a) => cmd_sim(a),
        Command::GenScene(a) => cmd_gen_scene(a),
        Command::MakeKernel(a) => cmd_make_kernel(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
