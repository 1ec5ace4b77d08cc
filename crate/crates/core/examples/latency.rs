//! Prints query latency on the synthetic ground-plane scene.
//!
//! Usage: `cargo run --release --example latency -- [n_points] [d_grid] [d_history] [reps]`

use squash::query_engine::{query_latency_probe, QueryKernel};
use squash::sim_harness::{generate_scene, latency_record, latency_scan, latency_scene_spec};
use squash::BuildConfig;

fn main() -> squash::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let n = args.first().copied().unwrap_or(100_000);
    let d_grid = args.get(1).copied().unwrap_or(1);
    let d_history = args.get(2).copied().unwrap_or(64);
    let reps = args.get(3).copied().unwrap_or(5);
    let scene = generate_scene(&latency_scene_spec(0))?;
    for delta in [0.2, 0.3, 0.5, 1.0] {
        let cfg = BuildConfig { delta_m: delta, ..BuildConfig::default() };
        let record = latency_record(&scene, &cfg, d_grid, 1)?;
        let scan = latency_scan(&scene, n, 2)?;
        let kernel = QueryKernel::seeded(cfg.kernel_size, d_grid, d_history, 3)?;
        let stats = query_latency_probe(&scan, &[n], &record, &kernel, reps)?;
        println!("{}", serde_json::to_string(&stats[0]).expect("json"));
    }
    Ok(())
}
