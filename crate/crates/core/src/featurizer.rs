//! Spatial featurizers: dense point cloud -> sparse voxel feature grid.
//!
//! * `Identity` marks every occupied voxel with `[1.0]`.
//! * `Stats` (not a learned model) stores `[log2(1 + n), mean offset x/y/z
//!   in voxel units, 1.0]` per occupied voxel.
//! * `Fcn` runs the identity occupancy grid through two 3x3x3 sparse
//!   convolutions (bias, ReLU in between) with externally supplied weights.
//!
//! FCN weight blob (`HFW1`, little-endian): `u32 d_mid`, `u32 d_out`, layer-1
//! weights `27 x 1 x d_mid`, layer-1 bias `d_mid`, layer-2 weights
//! `27 x d_mid x d_out`, layer-2 bias `d_out`. Weights are offset-major with
//! offsets in lexicographic `(di, dj, dk)` order from `(-1, -1, -1)`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::bytes::{checked_len, put_f32s, Reader};
use crate::cloud::PointCloud;
use crate::error::{DecodeError, Error, Result};
use crate::sparse_grid::{kernel_offsets, quantize, SparseFeatureGrid, VoxelCoord};

pub const HFW_MAGIC: [u8; 4] = *b"HFW1";
pub const DEFAULT_FCN_D_MID: usize = 16;
pub const STATS_WIDTH: usize = 5;
const FCN_KERNEL: usize = 3;
const FCN_TAPS: usize = 27;

/// Weights of the two-layer FCN featurizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnWeights {
    pub d_mid: usize,
    pub d_out: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl FcnWeights {
    pub fn new(d_mid: usize, d_out: usize, w1: Vec<f32>, b1: Vec<f32>, w2: Vec<f32>, b2: Vec<f32>) -> Result<Self> {
        if d_mid == 0 || d_out == 0 {
            return Err(Error::config("fcn widths must be >= 1"));
        }
        let shapes = [
            ("layer-1 weights", w1.len(), FCN_TAPS * d_mid),
            ("layer-1 bias", b1.len(), d_mid),
            ("layer-2 weights", w2.len(), FCN_TAPS * d_mid * d_out),
            ("layer-2 bias", b2.len(), d_out),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::config(format!("{name}: expected {want} values, got {got}")));
            }
        }
        if w1.iter().chain(&b1).chain(&w2).chain(&b2).any(|v| !v.is_finite()) {
            return Err(Error::config("fcn weights must be finite"));
        }
        Ok(Self { d_mid, d_out, w1, b1, w2, b2 })
    }

    /// Uniform random weights in `±1/sqrt(fan_in)`; biases small positive so
    /// the rectifier does not zero everything.
    pub fn seeded(d_mid: usize, d_out: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, scale: f32| -> Vec<f32> {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let s1 = 1.0 / (FCN_TAPS as f32).sqrt();
        let s2 = 1.0 / ((FCN_TAPS * d_mid) as f32).sqrt();
        let w1 = draw(FCN_TAPS * d_mid, s1);
        let w2 = draw(FCN_TAPS * d_mid * d_out, s2);
        let b1 = vec![0.01; d_mid];
        let b2 = vec![0.0; d_out];
        Self::new(d_mid, d_out, w1, b1, w2, b2)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * (self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()));
        out.extend_from_slice(&HFW_MAGIC);
        out.extend_from_slice(&(self.d_mid as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_out as u32).to_le_bytes());
        put_f32s(&mut out, &self.w1);
        put_f32s(&mut out, &self.b1);
        put_f32s(&mut out, &self.w2);
        put_f32s(&mut out, &self.b2);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        r.magic(HFW_MAGIC)?;
        let d_mid = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        if d_mid == 0 || d_out == 0 {
            return Err(DecodeError::malformed("fcn widths must be >= 1"));
        }
        let n2 = checked_len(&[FCN_TAPS, d_mid, d_out])?;
        let total = checked_len(&[FCN_TAPS, d_mid])?
            .checked_add(d_mid)
            .and_then(|v| v.checked_add(n2))
            .and_then(|v| v.checked_add(d_out))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| DecodeError::malformed("declared size overflows"))?;
        if r.remaining() < total {
            return Err(DecodeError::Truncated { needed: r.position() + total, available: buf.len() });
        }
        let w1 = r.finite_f32s(FCN_TAPS * d_mid, "layer-1 weights")?;
        let b1 = r.finite_f32s(d_mid, "layer-1 bias")?;
        let w2 = r.finite_f32s(n2, "layer-2 weights")?;
        let b2 = r.finite_f32s(d_out, "layer-2 bias")?;
        r.finish()?;
        Ok(Self { d_mid, d_out, w1, b1, w2, b2 })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf).map_err(|e| Error::decode_at(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeaturizerSpec {
    Identity,
    Stats,
    Fcn(Arc<FcnWeights>),
}

impl FeaturizerSpec {
    /// Builds a spec from its name. `d_out`, when given, must match the
    /// featurizer's fixed or weight-defined width.
    pub fn from_kind(kind: &str, d_out: Option<usize>, weights: Option<FcnWeights>) -> Result<Self> {
        let spec = match kind {
            "identity" => FeaturizerSpec::Identity,
            "stats" => FeaturizerSpec::Stats,
            "fcn" => FeaturizerSpec::Fcn(Arc::new(
                weights.ok_or_else(|| Error::config("fcn featurizer requires a weight blob"))?,
            )),
            other => return Err(Error::config(format!("unknown featurizer `{other}`"))),
        };
        if let Some(d) = d_out {
            if d != spec.d_out() {
                return Err(Error::config(format!(
                    "{kind} featurizer produces {} features, {d} requested",
                    spec.d_out()
                )));
            }
        }
        Ok(spec)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FeaturizerSpec::Identity => "identity",
            FeaturizerSpec::Stats => "stats",
            FeaturizerSpec::Fcn(_) => "fcn",
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            FeaturizerSpec::Identity => 1,
            FeaturizerSpec::Stats => STATS_WIDTH,
            FeaturizerSpec::Fcn(w) => w.d_out,
        }
    }

    /// Canonical bytes identifying the featurizer, including weights.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = self.kind().as_bytes().to_vec();
        if let FeaturizerSpec::Fcn(w) = self {
            out.extend_from_slice(&w.encode());
        }
        out
    }
}

/// Encodes a dense cloud into a sparse feature grid at voxel edge `delta_m`
/// (narrowed to f32, which is what quantization then uses).
pub fn featurize(cloud: &PointCloud, spec: &FeaturizerSpec, delta_m: f64) -> Result<SparseFeatureGrid> {
    if cloud.is_empty() {
        return Err(Error::validation("cannot featurize an empty cloud"));
    }
    let delta32 = delta_m as f32;
    match spec {
        FeaturizerSpec::Identity => occupancy(cloud, delta32),
        FeaturizerSpec::Stats => stats(cloud, delta32),
        FeaturizerSpec::Fcn(w) => {
            let occ = occupancy(cloud, delta32)?;
            fcn_forward(&occ, w)
        }
    }
}

fn occupancy(cloud: &PointCloud, delta32: f32) -> Result<SparseFeatureGrid> {
    let mut grid = SparseFeatureGrid::new(delta32, 1)?;
    let delta = grid.delta();
    for &p in cloud.points() {
        let c = quantize(p, delta);
        if !grid.contains(c) {
            grid.insert(c, &[1.0])?;
        }
    }
    Ok(grid)
}

fn stats(cloud: &PointCloud, delta32: f32) -> Result<SparseFeatureGrid> {
    let mut grid = SparseFeatureGrid::new(delta32, STATS_WIDTH)?;
    let delta = grid.delta();
    // largest f32 strictly below 1.0
    let below_one = f32::from_bits(1.0f32.to_bits() - 1);
    let mut acc: FxHashMap<VoxelCoord, (u64, [f64; 3])> = FxHashMap::default();
    for &p in cloud.points() {
        let c = quantize(p, delta);
        let e = acc.entry(c).or_insert((0, [0.0; 3]));
        e.0 += 1;
        for (k, s) in e.1.iter_mut().enumerate() {
            let t = p[k] / delta;
            *s += t - t.floor();
        }
    }
    let mut entries: Vec<_> = acc.into_iter().collect();
    entries.sort_unstable_by_key(|(c, _)| *c);
    for (c, (n, sums)) in entries {
        let nf = n as f64;
        let mean = |s: f64| ((s / nf) as f32).clamp(0.0, below_one);
        let f = [
            (1.0 + nf).log2() as f32,
            mean(sums[0]),
            mean(sums[1]),
            mean(sums[2]),
            1.0,
        ];
        grid.insert(c, &f)?;
    }
    Ok(grid)
}

/// Input support dilated by a cubic kernel of radius `r`, sorted.
pub(crate) fn dilate(grid: &SparseFeatureGrid, r: i32) -> Vec<VoxelCoord> {
    let mut out = Vec::with_capacity(grid.len() * ((2 * r + 1).pow(3) as usize));
    for &c in grid.coords() {
        for di in -r..=r {
            for dj in -r..=r {
                for dk in -r..=r {
                    out.push(c.offset(di, dj, dk));
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// 3x3x3 convolution evaluated on `support`. Each output is
/// `bias + sum_o W[o]^T x[v + o]` summed in fixed offset order, so results do
/// not depend on entry storage order. All-zero outputs are dropped.
pub(crate) fn sparse_conv3(
    input: &SparseFeatureGrid,
    support: &[VoxelCoord],
    weights: &[f32],
    bias: &[f32],
    relu: bool,
) -> Result<SparseFeatureGrid> {
    let d_in = input.d();
    let d_out = bias.len();
    debug_assert_eq!(weights.len(), FCN_TAPS * d_in * d_out);
    let offsets = kernel_offsets(FCN_KERNEL);
    let mut out = SparseFeatureGrid::new(input.delta_m(), d_out)?;
    let mut acc = vec![0.0f32; d_out];
    for &v in support {
        acc.copy_from_slice(bias);
        for (o, off) in offsets.iter().enumerate() {
            if let Some(x) = input.get(v.offset(off[0], off[1], off[2])) {
                let w = &weights[o * d_in * d_out..(o + 1) * d_in * d_out];
                for (ci, &xv) in x.iter().enumerate() {
                    let row = &w[ci * d_out..(ci + 1) * d_out];
                    for (a, &wv) in acc.iter_mut().zip(row) {
                        *a += xv * wv;
                    }
                }
            }
        }
        if relu {
            for a in acc.iter_mut() {
                *a = a.max(0.0);
            }
        }
        out.insert(v, &acc)?;
    }
    Ok(out)
}

/// Each layer's output support is its input support dilated by one voxel,
/// so the final support is the occupancy dilated by two.
fn fcn_forward(occ: &SparseFeatureGrid, w: &FcnWeights) -> Result<SparseFeatureGrid> {
    let hidden = sparse_conv3(occ, &dilate(occ, 1), &w.w1, &w.b1, true)?;
    sparse_conv3(&hidden, &dilate(occ, 2), &w.w2, &w.b2, false)
}
