//! Synthetic multi-traversal scenes and the ephemerality benchmark.
//!
//! A scene is a straight route along `+x` lined with axis-aligned boxes on a
//! lattice of slots. Persistent boxes keep their slot in every traversal;
//! every past traversal and the held-out current scan get their own transient
//! boxes in slots nobody else uses. Points are sampled uniformly on box
//! surfaces (plus an optional ground plane) with Gaussian sensor noise.
//!
//! The benchmark builds a history record from the past traversals, queries
//! the current scan with an averaging kernel and scores each point by its
//! history magnitude. AUC of that score against the persistent/transient
//! labels is a label-free proxy for how much history helps a detector.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::featurizer::FeaturizerSpec;
use crate::geometry::Pose6DoF;
use crate::query_engine::{query, QueryKernel};
use crate::scan_model::{BuildConfig, Frame, Traversal};
use crate::sparse_grid::SparseFeatureGrid;
use crate::squash_builder::{Anchor, SquashBuilder, SquashRecord};

/// Lateral distance between slot rows and between slots along a row.
const SLOT_SPACING_M: f64 = 4.0;
/// Lateral offset of the innermost slot rows from the route centre line.
const FIRST_ROW_M: f64 = 4.0;
const SLOT_JITTER_M: f64 = 0.4;
/// Smallest gap between boxes in neighbouring slots.
pub const MIN_OBJECT_GAP_M: f64 = 1.0;
/// Sensor height above the ground plane (`z = 0`).
pub const SENSOR_HEIGHT_M: f64 = 1.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// Route length, lateral width and height of the scene box.
    pub extent_m: [f64; 3],
    pub persistent_objects: usize,
    pub persistent_size_m: (f64, f64),
    /// Transient boxes in each past traversal and in the current scan.
    pub transient_objects: usize,
    pub transient_size_m: (f64, f64),
    /// Surface samples per object per observing frame.
    pub points_per_object: usize,
    /// Ground samples per frame (0 disables the ground plane).
    pub ground_points_per_frame: usize,
    pub sensor_noise_m: f64,
    /// Past traversals, oldest first.
    pub traversals: usize,
    pub frame_spacing_m: f64,
    /// Range within which past frames observe objects.
    pub sensor_range_m: f64,
    /// Range within which the current scan observes objects.
    pub scan_range_m: f64,
    /// Route position of the current scan.
    pub scan_arclength_m: f64,
    /// Maximum lateral lane offset of a traversal.
    pub lane_jitter_m: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_m: [100.0, 24.0, 4.0],
            persistent_objects: 30,
            persistent_size_m: (1.0, 2.2),
            transient_objects: 5,
            transient_size_m: (0.6, 1.8),
            points_per_object: 200,
            ground_points_per_frame: 0,
            sensor_noise_m: 0.02,
            traversals: 5,
            frame_spacing_m: 1.0,
            sensor_range_m: 30.0,
            scan_range_m: 20.0,
            scan_arclength_m: 40.0,
            lane_jitter_m: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !self.extent_m.iter().all(|&v| pos(v)) {
            return Err(Error::config("scene extent must be positive"));
        }
        for (lo, hi) in [self.persistent_size_m, self.transient_size_m] {
            if !(pos(lo) && hi >= lo && hi.is_finite()) {
                return Err(Error::config("object size ranges must be positive and ordered"));
            }
            let largest = SLOT_SPACING_M - 2.0 * SLOT_JITTER_M - MIN_OBJECT_GAP_M;
            if hi > largest {
                return Err(Error::config(format!("objects larger than {largest} m do not fit a slot")));
            }
        }
        if !(self.sensor_noise_m.is_finite() && self.sensor_noise_m >= 0.0) {
            return Err(Error::config("sensor noise must be >= 0"));
        }
        if !pos(self.frame_spacing_m) || !pos(self.sensor_range_m) || !pos(self.scan_range_m) {
            return Err(Error::config("frame spacing and ranges must be positive"));
        }
        if !(0.0..=self.extent_m[0]).contains(&self.scan_arclength_m) {
            return Err(Error::config("scan position must lie on the route"));
        }
        if !(self.lane_jitter_m.is_finite() && self.lane_jitter_m >= 0.0) {
            return Err(Error::config("lane jitter must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Persistent,
    Transient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Box3 {
    center: [f64; 3],
    size: [f64; 3],
}

impl Box3 {
    /// Uniform sample over the faces whose outward normal points towards
    /// `eye`; `None` if no face does.
    fn sample_visible(&self, rng: &mut ChaCha8Rng, eye: [f64; 3]) -> Option<[f64; 3]> {
        let [sx, sy, sz] = self.size;
        let mut areas = [sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy];
        for (face, area) in areas.iter_mut().enumerate() {
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            let plane = self.center[axis] + sign * self.size[axis] / 2.0;
            if sign * (eye[axis] - plane) <= 0.0 {
                *area = 0.0;
            }
        }
        let total: f64 = areas.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut face = areas.iter().rposition(|&a| a > 0.0)?;
        for (f, &a) in areas.iter().enumerate() {
            if a > 0.0 && pick < a {
                face = f;
                break;
            }
            pick -= a;
        }
        let u = rng.gen_range(-0.5..0.5);
        let v = rng.gen_range(-0.5..0.5);
        let sign = if face % 2 == 0 { -0.5 } else { 0.5 };
        let local = match face / 2 {
            0 => [sign * sx, u * sy, v * sz],
            1 => [u * sx, sign * sy, v * sz],
            _ => [u * sx, v * sy, sign * sz],
        };
        Some([self.center[0] + local[0], self.center[1] + local[1], self.center[2] + local[2]])
    }
}

/// The held-out scan with ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentScan {
    /// Points in the sensor frame.
    pub cloud: PointCloud,
    pub true_pose: Pose6DoF,
    pub arclength: f64,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Past traversals, oldest first (timestamps ascending).
    pub traversals: Vec<Traversal>,
    pub current: CurrentScan,
    /// Objects present at scan time.
    current_objects: Vec<(Box3, Label)>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn slot_lattice(spec: &SceneSpec) -> Vec<[f64; 2]> {
    let [length, width, _] = spec.extent_m;
    let mut slots = Vec::new();
    let mut row = FIRST_ROW_M;
    while row <= width / 2.0 {
        let mut x = SLOT_SPACING_M / 2.0;
        while x <= length {
            slots.push([x, row]);
            slots.push([x, -row]);
            x += SLOT_SPACING_M;
        }
        row += SLOT_SPACING_M;
    }
    slots
}

fn place(rng: &mut ChaCha8Rng, slot: [f64; 2], size: (f64, f64), height: f64) -> Box3 {
    let s = [
        rng.gen_range(size.0..=size.1),
        rng.gen_range(size.0..=size.1),
        rng.gen_range(size.0..=size.1).min(height),
    ];
    let jx = rng.gen_range(-SLOT_JITTER_M..=SLOT_JITTER_M);
    let jy = rng.gen_range(-SLOT_JITTER_M..=SLOT_JITTER_M);
    Box3 {
        center: [slot[0] + jx, slot[1] + jy, s[2] / 2.0],
        size: s,
    }
}

fn planar_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Samples one observation of `objects` from `origin` (global points).
fn observe(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    origin: [f64; 3],
    range: f64,
    objects: &[(Box3, Label)],
    points: &mut Vec<[f64; 3]>,
    labels: &mut Vec<Label>,
) {
    for (b, label) in objects {
        if planar_distance(b.center, origin) > range {
            continue;
        }
        for _ in 0..spec.points_per_object {
            let Some(mut p) = b.sample_visible(rng, origin) else {
                break;
            };
            for v in p.iter_mut() {
                *v += spec.sensor_noise_m * gaussian(rng);
            }
            points.push(p);
            labels.push(*label);
        }
    }
    for _ in 0..spec.ground_points_per_frame {
        // ring-like density falling off as 1/r
        let r = range * rng.gen::<f64>();
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = [origin[0] + r * t.cos(), origin[1] + r * t.sin(), spec.sensor_noise_m * gaussian(rng)];
        points.push(p);
        labels.push(Label::Persistent);
    }
}

fn to_sensor(pose: &Pose6DoF, points: Vec<[f64; 3]>) -> Result<PointCloud> {
    let inv = pose.inverse();
    PointCloud::from_points(points.into_iter().map(|p| inv.transform_point(p)).collect())
}

/// Generates past traversals and the labelled current scan. Fully determined
/// by `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let height = spec.extent_m[2];
    let scan_origin = [spec.scan_arclength_m, 0.0, SENSOR_HEIGHT_M];

    let mut slots = slot_lattice(spec);
    slots.shuffle(&mut rng);
    let needed = spec.persistent_objects + spec.transient_objects * (spec.traversals + 1);
    if needed > slots.len() {
        return Err(Error::config(format!(
            "scene needs {needed} object slots but the extent only has {}",
            slots.len()
        )));
    }
    let persistent: Vec<Box3> = slots
        .drain(..spec.persistent_objects)
        .map(|s| place(&mut rng, s, spec.persistent_size_m, height))
        .collect();
    // current-scan transients must be visible, so take them from slots in range
    let reach = spec.scan_range_m - SLOT_SPACING_M / 2.0;
    let (mut near, far): (Vec<_>, Vec<_>) = slots
        .into_iter()
        .partition(|s| planar_distance([s[0], s[1], 0.0], scan_origin) <= reach);
    if near.len() < spec.transient_objects {
        return Err(Error::config("not enough free slots in scan range for current transients"));
    }
    let current_transients: Vec<Box3> = near
        .drain(..spec.transient_objects)
        .map(|s| place(&mut rng, s, spec.transient_size_m, height))
        .collect();
    let mut free = near;
    free.extend(far);
    free.shuffle(&mut rng);

    let mut traversals = Vec::with_capacity(spec.traversals);
    let steps = (spec.extent_m[0] / spec.frame_spacing_m).floor() as usize;
    for t in 0..spec.traversals {
        let transients: Vec<Box3> = free
            .drain(..spec.transient_objects)
            .map(|s| place(&mut rng, s, spec.transient_size_m, height))
            .collect();
        let objects: Vec<(Box3, Label)> = persistent
            .iter()
            .map(|b| (*b, Label::Persistent))
            .chain(transients.iter().map(|b| (*b, Label::Transient)))
            .collect();
        let lane = rng.gen_range(-spec.lane_jitter_m..=spec.lane_jitter_m);
        let mut frames = Vec::with_capacity(steps + 1);
        for f in 0..=steps {
            let origin = [f as f64 * spec.frame_spacing_m, lane, SENSOR_HEIGHT_M];
            let pose = Pose6DoF::from_translation(origin);
            let mut pts = Vec::new();
            let mut labels = Vec::new();
            observe(&mut rng, spec, origin, spec.sensor_range_m, &objects, &mut pts, &mut labels);
            frames.push(Frame {
                cloud: to_sensor(&pose, pts)?,
                pose,
            });
        }
        traversals.push(Traversal::new(format!("{t:03}"), t as i64, frames)?);
    }

    let objects: Vec<(Box3, Label)> = persistent
        .iter()
        .map(|b| (*b, Label::Persistent))
        .chain(current_transients.iter().map(|b| (*b, Label::Transient)))
        .collect();
    let true_pose = Pose6DoF::from_translation(scan_origin);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    observe(&mut rng, spec, scan_origin, spec.scan_range_m, &objects, &mut pts, &mut labels);
    let current = CurrentScan {
        cloud: to_sensor(&true_pose, pts)?,
        true_pose,
        arclength: spec.scan_arclength_m,
        labels,
    };
    Ok(Scene {
        spec: spec.clone(),
        traversals,
        current,
        current_objects: objects,
    })
}

/// Simulated localization error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub loc_sigma_m: f64,
    pub bearing_sigma_deg: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            loc_sigma_m: 0.0,
            bearing_sigma_deg: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.loc_sigma_m.is_finite() && self.loc_sigma_m >= 0.0)
            || !(self.bearing_sigma_deg.is_finite() && self.bearing_sigma_deg >= 0.0)
        {
            return Err(Error::config("noise sigmas must be >= 0"));
        }
        Ok(())
    }
}

/// Uniform random direction on the unit sphere (normalized Gaussian).
pub fn random_unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Adds a translation of `u * eps` (`u` uniform on the sphere,
/// `eps ~ N(0, loc_sigma^2)`) and a yaw error `~ N(0, bearing_sigma^2)`
/// about the sensor's up axis.
pub fn perturb_pose(pose: &Pose6DoF, noise: &NoiseModel, rng: &mut impl Rng) -> Pose6DoF {
    let u = random_unit_vector(rng);
    let z: f64 = StandardNormal.sample(rng);
    let a: f64 = StandardNormal.sample(rng);
    let eps = noise.loc_sigma_m * z;
    let yaw = (noise.bearing_sigma_deg * a).to_radians();
    Pose6DoF::from_translation([u[0] * eps, u[1] * eps, u[2] * eps])
        .compose(pose)
        .compose(&Pose6DoF::from_yaw(yaw, [0.0; 3]))
}

/// Area under the ROC curve for "score separates persistent (positive) from
/// transient". Ties count one half. `None` if either class is absent.
pub fn auc(scores: &[f64], labels: &[Label]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l == Label::Persistent).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // midrank sum of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * idx[i..=j].iter().filter(|&&k| labels[k] == Label::Persistent).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Best accuracy over thresholds of the rule "score > t => persistent".
pub fn best_accuracy(scores: &[f64], labels: &[Label]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // threshold below everything: all predicted persistent
    let mut correct = labels.iter().filter(|&&l| l == Label::Persistent).count() as i64;
    let mut best = correct;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            correct += if labels[idx[j]] == Label::Transient { 1 } else { -1 };
            j += 1;
        }
        best = best.max(correct);
        i = j;
    }
    best as f64 / scores.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Past traversals aggregated.
    pub t: usize,
    /// Distance the record's anchor lies behind the scan along the route.
    pub anchor_offset_m: f64,
    /// Also perturb past-traversal poses, not just the test scan.
    pub noisy_past_poses: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            t: 2,
            anchor_offset_m: 0.0,
            noisy_past_poses: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub build_ms: f64,
    pub query_ms: f64,
}

/// One benchmark run; serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: usize,
    pub sigma_m: f64,
    pub bearing_deg: f64,
    pub anchor_offset_m: f64,
    /// `None` when the scan has only one class.
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub n_points: usize,
    pub n_persistent: usize,
    pub timings: Timings,
}

/// Ephemerality benchmark over one generated scene.
pub struct Ephemerality {
    scene: Scene,
    cfg: BuildConfig,
    spec: FeaturizerSpec,
}

impl Ephemerality {
    pub fn new(scene: Scene, cfg: BuildConfig, spec: FeaturizerSpec) -> Result<Self> {
        cfg.validate()?;
        if scene.traversals.is_empty() {
            return Err(Error::config("benchmark needs at least one past traversal"));
        }
        Ok(Self { scene, cfg, spec })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    fn noisy_traversals(&self, noise: &NoiseModel) -> Result<Vec<Traversal>> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(1);
        self.scene
            .traversals
            .iter()
            .map(|t| {
                let frames = t
                    .frames()
                    .iter()
                    .map(|f| Frame {
                        cloud: f.cloud.clone(),
                        pose: perturb_pose(&f.pose, noise, &mut rng),
                    })
                    .collect();
                Traversal::new(t.id(), t.timestamp(), frames)
            })
            .collect()
    }

    /// Builds the record used by a run (anchor `anchor_offset_m` behind the
    /// scan on the route).
    pub fn build_record(&self, opts: &RunOptions, noise: &NoiseModel) -> Result<SquashRecord> {
        let cfg = BuildConfig { t_max: opts.t, ..self.cfg };
        let builder = SquashBuilder::new(cfg, self.spec.clone())?;
        let arclength = (self.scene.current.arclength - opts.anchor_offset_m).max(0.0);
        let anchor = Anchor {
            arclength,
            position: self.scene.traversals[0].position_at(arclength),
        };
        if opts.noisy_past_poses {
            builder.build(&self.noisy_traversals(noise)?, &anchor)
        } else {
            builder.build(&self.scene.traversals, &anchor)
        }
    }

    /// Per-point history magnitude of the current scan under `noise`.
    pub fn scores(&self, record: &SquashRecord, noise: &NoiseModel) -> Result<Vec<f64>> {
        noise.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let pose = perturb_pose(&self.scene.current.true_pose, noise, &mut rng);
        let global = pose.transform_points(&self.scene.current.cloud)?;
        let kernel = QueryKernel::averaging(self.cfg.kernel_size, record.grid().d(), 1)?;
        let endowed = query(&global, record, &kernel)?;
        Ok(endowed.history.iter().map(|&h| f64::from(h).abs()).collect())
    }

    pub fn run(&self, opts: &RunOptions, noise: &NoiseModel) -> Result<BenchmarkRun> {
        let start = Instant::now();
        let record = self.build_record(opts, noise)?;
        let build_ms = start.elapsed().as_secs_f64() * 1e3;
        self.run_with_record(&record, opts, noise, build_ms)
    }

    /// Like [`run`](Self::run) with a prebuilt record (reused across noise
    /// levels).
    pub fn run_with_record(&self, record: &SquashRecord, opts: &RunOptions, noise: &NoiseModel, build_ms: f64) -> Result<BenchmarkRun> {
        let start = Instant::now();
        let scores = self.scores(record, noise)?;
        let query_ms = start.elapsed().as_secs_f64() * 1e3;
        let labels = &self.scene.current.labels;
        Ok(BenchmarkRun {
            seed: self.scene.spec.seed,
            t: record.t_used as usize,
            sigma_m: noise.loc_sigma_m,
            bearing_deg: noise.bearing_sigma_deg,
            anchor_offset_m: opts.anchor_offset_m,
            auc: auc(&scores, labels),
            accuracy: best_accuracy(&scores, labels),
            n_points: scores.len(),
            n_persistent: labels.iter().filter(|&&l| l == Label::Persistent).count(),
            timings: Timings { build_ms, query_ms },
        })
    }
}

/// Scene with a ground plane used for latency and storage measurements.
pub fn latency_scene_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        extent_m: [100.0, 80.0, 4.0],
        persistent_objects: 80,
        transient_objects: 5,
        points_per_object: 300,
        ground_points_per_frame: 40_000,
        traversals: 2,
        sensor_range_m: 40.0,
        scan_range_m: 40.0,
        scan_arclength_m: 50.0,
        ..SceneSpec::default()
    }
}

/// A record built from `scene` at the scan position whose support comes from
/// the occupancy featurizer and whose features are `d` uniform draws in
/// `[0, 1)`, standing in for a learned featurizer of width `d`.
pub fn latency_record(scene: &Scene, cfg: &BuildConfig, d: usize, seed: u64) -> Result<SquashRecord> {
    let builder = SquashBuilder::new(*cfg, FeaturizerSpec::Identity)?;
    let s = scene.current.arclength;
    let reference = scene
        .traversals
        .first()
        .ok_or_else(|| Error::config("scene has no past traversals"))?;
    let occupancy = builder.build(&scene.traversals, &Anchor { arclength: s, position: reference.position_at(s) })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = SparseFeatureGrid::new(cfg.delta_m as f32, d)?;
    let mut feature = vec![0.0f32; d];
    for &c in occupancy.grid().coords() {
        for v in feature.iter_mut() {
            *v = rng.gen_range(f32::EPSILON..1.0);
        }
        grid.insert(c, &feature)?;
    }
    SquashRecord::new(occupancy.anchor, grid, occupancy.t_used, occupancy.cfg_fingerprint)
}

/// Fresh observations from the current scan position (global frame),
/// accumulated until there are `n` points.
pub fn latency_scan(scene: &Scene, n: usize, seed: u64) -> Result<PointCloud> {
    let spec = &scene.spec;
    let origin = scene.current.true_pose.translation();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::new();
    while points.len() < n {
        let before = points.len();
        observe(&mut rng, spec, origin, spec.scan_range_m, &scene.current_objects, &mut points, &mut labels);
        if points.len() == before {
            return Err(Error::config("scene scan observes nothing"));
        }
    }
    points.truncate(n);
    PointCloud::from_points(points)
}

pub const T_SWEEP: [usize; 3] = [1, 2, 5];
pub const SIGMA_SWEEP_M: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub base: BenchmarkRun,
    /// AUC versus number of past traversals (capped at what the scene has).
    pub t_curve: Vec<BenchmarkRun>,
    /// AUC versus localization sigma, at the base T.
    pub sigma_curve: Vec<BenchmarkRun>,
}

/// Base run at `cfg.t_max` and `noise`, plus the T and sigma sweeps.
pub fn ephemerality_benchmark(scene: &SceneSpec, cfg: &BuildConfig, spec: &FeaturizerSpec, noise: &NoiseModel) -> Result<BenchmarkReport> {
    let bench = Ephemerality::new(generate_scene(scene)?, *cfg, spec.clone())?;
    let available = bench.scene.traversals.len();
    let base_opts = RunOptions {
        t: cfg.t_max.min(available),
        ..RunOptions::default()
    };
    let base = bench.run(&base_opts, noise)?;
    let mut t_curve = Vec::new();
    for t in T_SWEEP.into_iter().filter(|&t| t <= available) {
        t_curve.push(bench.run(&RunOptions { t, ..base_opts }, noise)?);
    }
    let record = bench.build_record(&base_opts, noise)?;
    let sigma_curve = SIGMA_SWEEP_M
        .iter()
        .map(|&s| bench.run_with_record(&record, &base_opts, &NoiseModel { loc_sigma_m: s, ..*noise }, 0.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport { base, t_curve, sigma_curve })
}
