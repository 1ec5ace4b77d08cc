//! Traversals of a route, arclength parameterization and dense combining of
//! scans around anchor locations.
//!
//! On disk a traversal is a directory holding `poses.csv` and
//! `frames/NNNNNN.hpc` (one scan per pose row, in the sensor frame). A route
//! directory holds `manifest.json` listing its traversals with timestamps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::{read_hpc, write_hpc, PointCloud};
use crate::error::{DecodeError, Error, Result};
use crate::geometry::{format_pose_csv, parse_pose_csv, Pose6DoF};

const ARCLENGTH_EPS: f64 = 1e-9;

/// Offline build parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Metres behind the anchor included in the dense window.
    pub h_start: f64,
    /// Metres ahead of the anchor included in the dense window.
    pub h_end: f64,
    /// At most one scan is kept per this many metres of the window.
    pub frame_stride_m: f64,
    pub anchor_spacing_m: f64,
    /// Number of most recent traversals aggregated per anchor.
    pub t_max: usize,
    /// Voxel edge length.
    pub delta_m: f64,
    /// Edge of the cubic query kernel; odd.
    pub kernel_size: usize,
    pub d_history: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            h_start: 0.0,
            h_end: 20.0,
            frame_stride_m: 5.0,
            anchor_spacing_m: 10.0,
            t_max: 5,
            delta_m: 0.3,
            kernel_size: 5,
            d_history: 64,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(self.h_start.is_finite() && self.h_start >= 0.0) {
            return Err(Error::config("h_start must be >= 0"));
        }
        if !positive(self.h_end) {
            return Err(Error::config("h_end must be > 0"));
        }
        if !positive(self.frame_stride_m) {
            return Err(Error::config("frame_stride_m must be > 0"));
        }
        if !positive(self.anchor_spacing_m) {
            return Err(Error::config("anchor_spacing_m must be > 0"));
        }
        if !positive(self.delta_m) {
            return Err(Error::config("delta_m must be > 0"));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::config("kernel_size must be odd and >= 1"));
        }
        if self.t_max == 0 {
            return Err(Error::config("t_max must be >= 1"));
        }
        if self.d_history == 0 {
            return Err(Error::config("d_history must be >= 1"));
        }
        Ok(())
    }

    /// Canonical little-endian encoding, used for fingerprints.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        for v in [self.h_start, self.h_end, self.frame_stride_m, self.anchor_spacing_m, self.delta_m] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.t_max, self.kernel_size, self.d_history] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out
    }
}

/// One scan (sensor frame) with its global pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: PointCloud,
    pub pose: Pose6DoF,
}

/// A single recorded drive: ordered frames and their cumulative path length.
#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    id: String,
    timestamp: i64,
    frames: Vec<Frame>,
    arclengths: Vec<f64>,
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Traversal {
    /// Arclengths are accumulated from consecutive pose translations.
    pub fn new(id: impl Into<String>, timestamp: i64, frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::validation("traversal has no frames"));
        }
        let mut arclengths = Vec::with_capacity(frames.len());
        let mut acc = 0.0;
        arclengths.push(acc);
        for w in frames.windows(2) {
            acc += distance(w[0].pose.translation(), w[1].pose.translation());
            arclengths.push(acc);
        }
        Ok(Self {
            id: id.into(),
            timestamp,
            frames,
            arclengths,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn arclengths(&self) -> &[f64] {
        &self.arclengths
    }

    pub fn total_arclength(&self) -> f64 {
        *self.arclengths.last().expect("non-empty")
    }

    /// Global position at `arclength`, interpolated linearly between frames
    /// and clamped to the ends of the traversal.
    pub fn position_at(&self, arclength: f64) -> [f64; 3] {
        let idx = self.arclengths.partition_point(|&s| s <= arclength);
        if idx == 0 {
            return self.frames[0].pose.translation();
        }
        if idx >= self.frames.len() {
            return self.frames[self.frames.len() - 1].pose.translation();
        }
        let (s0, s1) = (self.arclengths[idx - 1], self.arclengths[idx]);
        let a = self.frames[idx - 1].pose.translation();
        let b = self.frames[idx].pose.translation();
        let w = if s1 > s0 { (arclength - s0) / (s1 - s0) } else { 0.0 };
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2])]
    }

    /// Index of the frame closest to `position` and its distance. Ties go to
    /// the earlier frame.
    pub fn nearest_frame(&self, position: [f64; 3]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, f) in self.frames.iter().enumerate() {
            let d = distance(f.pose.translation(), position);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Indices of frames in `[anchor - h_start, anchor + h_end]`, keeping the
    /// first frame of each `frame_stride_m` bucket measured from the window
    /// start.
    pub fn select_frames(&self, anchor_arclength: f64, cfg: &BuildConfig) -> Result<Vec<usize>> {
        let total = self.total_arclength();
        if !anchor_arclength.is_finite()
            || anchor_arclength < -ARCLENGTH_EPS
            || anchor_arclength > total + ARCLENGTH_EPS
        {
            return Err(Error::EmptySelection(format!(
                "anchor {anchor_arclength} m outside traversal range [0, {total}] m"
            )));
        }
        let lo = anchor_arclength - cfg.h_start;
        let hi = anchor_arclength + cfg.h_end;
        let mut selected = Vec::new();
        let mut last_bucket = None;
        for (i, &s) in self.arclengths.iter().enumerate() {
            if s < lo || s > hi {
                continue;
            }
            let bucket = ((s - lo) / cfg.frame_stride_m).floor() as i64;
            if last_bucket != Some(bucket) {
                selected.push(i);
                last_bucket = Some(bucket);
            }
        }
        if selected.is_empty() {
            return Err(Error::EmptySelection(format!(
                "no frames in window [{lo}, {hi}] m"
            )));
        }
        Ok(selected)
    }

    /// Union of the selected frames, transformed into the global frame.
    /// Overlapping points are kept; the output is a concatenation.
    pub fn combine_dense(&self, anchor_arclength: f64, cfg: &BuildConfig) -> Result<PointCloud> {
        let selected = self.select_frames(anchor_arclength, cfg)?;
        let n_channels = self.frames[selected[0]].cloud.n_channels();
        let mut out = PointCloud::empty(n_channels);
        for i in selected {
            let frame = &self.frames[i];
            out.extend_from(&frame.pose.transform_points(&frame.cloud)?)?;
        }
        Ok(out)
    }
}

/// Anchor arclengths `0, s, 2s, ...` up to the total traversal length.
pub fn anchor_locations(traversal: &Traversal, cfg: &BuildConfig) -> Vec<f64> {
    let total = traversal.total_arclength();
    let count = (total / cfg.anchor_spacing_m + ARCLENGTH_EPS).floor() as usize;
    (0..=count).map(|k| k as f64 * cfg.anchor_spacing_m).collect()
}

/// Entry of a route manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalEntry {
    pub id: String,
    /// Directory relative to the manifest.
    pub dir: String,
    /// Larger is more recent.
    pub timestamp: i64,
}

/// `manifest.json` of a route directory. The first listed traversal defines
/// the route geometry (anchor positions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteManifest {
    pub route_id: String,
    pub traversals: Vec<TraversalEntry>,
}

pub const ROUTE_MANIFEST: &str = "manifest.json";

impl RouteManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: RouteManifest = serde_json::from_str(text)?;
        if m.traversals.is_empty() {
            return Err(Error::validation("route manifest lists no traversals"));
        }
        for t in &m.traversals {
            let p = Path::new(&t.dir);
            if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return Err(Error::validation(format!(
                    "traversal dir `{}` must be relative and inside the route directory",
                    t.dir
                )));
            }
        }
        Ok(m)
    }
}

fn frame_path(dir: &Path, frame_id: u64) -> PathBuf {
    dir.join("frames").join(format!("{frame_id:06}.hpc"))
}

/// Loads one traversal directory.
pub fn load_traversal(dir: impl AsRef<Path>, id: &str, timestamp: i64) -> Result<Traversal> {
    let dir = dir.as_ref();
    let poses_path = dir.join("poses.csv");
    let text = fs::read_to_string(&poses_path).map_err(|e| Error::io(&poses_path, e))?;
    let poses = parse_pose_csv(&text).map_err(|e| match e {
        Error::DecodeBytes(d) => Error::decode_at(&poses_path, d),
        other => other,
    })?;
    if poses.is_empty() {
        return Err(Error::decode_at(&poses_path, DecodeError::malformed("no pose rows")));
    }
    let frames = poses
        .into_iter()
        .map(|(frame_id, pose)| {
            Ok(Frame {
                cloud: read_hpc(frame_path(dir, frame_id))?,
                pose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Traversal::new(id, timestamp, frames)
}

/// Writes a traversal directory; frames are numbered by position.
pub fn save_traversal(dir: impl AsRef<Path>, traversal: &Traversal) -> Result<()> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut rows = Vec::with_capacity(traversal.frames.len());
    for (i, frame) in traversal.frames.iter().enumerate() {
        write_hpc(frame_path(dir, i as u64), &frame.cloud)?;
        rows.push((i as u64, frame.pose));
    }
    let poses_path = dir.join("poses.csv");
    fs::write(&poses_path, format_pose_csv(&rows)).map_err(|e| Error::io(&poses_path, e))
}

/// Loads a route directory: its manifest and every listed traversal, in
/// manifest order.
pub fn load_route(dir: impl AsRef<Path>) -> Result<(RouteManifest, Vec<Traversal>)> {
    let dir = dir.as_ref();
    let path = dir.join(ROUTE_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = RouteManifest::parse(&text)?;
    let traversals = manifest
        .traversals
        .iter()
        .map(|t| load_traversal(dir.join(&t.dir), &t.id, t.timestamp))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, traversals))
}

/// Writes a route directory with one subdirectory per traversal.
pub fn save_route(dir: impl AsRef<Path>, route_id: &str, traversals: &[Traversal]) -> Result<()> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(traversals.len());
    for t in traversals {
        let sub = format!("traversal_{}", t.id);
        save_traversal(dir.join(&sub), t)?;
        entries.push(TraversalEntry {
            id: t.id.clone(),
            dir: sub,
            timestamp: t.timestamp,
        });
    }
    let manifest = RouteManifest {
        route_id: route_id.to_string(),
        traversals: entries,
    };
    let path = dir.join(ROUTE_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}
