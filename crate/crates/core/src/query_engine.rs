//! Run-time lookup of history features for a live scan.
//!
//! For each scan point `p` the history feature is
//! `sum_o theta[o]^T Q[quantize(p) + o]` over the `K^3` kernel offsets, with
//! missing voxels contributing zero. The convolved grid is never
//! materialized: each distinct scan voxel is evaluated once and shared by the
//! points that fall in it.
//!
//! Kernel blob (`HQK1`, little-endian): `u32 k`, `u32 d_in`, `u32 d_out`,
//! then `k^3 x d_in x d_out` f32 weights, offset-major with offsets in
//! lexicographic order from `(-(k-1)/2, -(k-1)/2, -(k-1)/2)`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::bytes::{checked_len, put_f32s, Reader};
use crate::cloud::PointCloud;
use crate::error::{DecodeError, Error, Result};
use crate::sparse_grid::{quantize, SparseFeatureGrid, VoxelCoord};
use crate::squash_builder::SquashRecord;

pub const HQK_MAGIC: [u8; 4] = *b"HQK1";
/// Largest kernel edge accepted from a blob.
pub const MAX_KERNEL_SIZE: usize = 15;

/// `K x K x K` filter mapping `d_in` grid features to `d_out` history
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryKernel {
    k: usize,
    d_in: usize,
    d_out: usize,
    weights: Vec<f32>,
}

impl QueryKernel {
    pub fn new(k: usize, d_in: usize, d_out: usize, weights: Vec<f32>) -> Result<Self> {
        if k == 0 || k % 2 == 0 || k > MAX_KERNEL_SIZE {
            return Err(Error::config(format!("kernel size must be odd and in 1..={MAX_KERNEL_SIZE}, got {k}")));
        }
        if d_in == 0 || d_out == 0 {
            return Err(Error::config("kernel widths must be >= 1"));
        }
        let want = k * k * k * d_in * d_out;
        if weights.len() != want {
            return Err(Error::config(format!("kernel needs {want} weights, got {}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::config("kernel weights must be finite"));
        }
        Ok(Self { k, d_in, d_out, weights })
    }

    /// Every weight `1 / K^3`.
    pub fn averaging(k: usize, d_in: usize, d_out: usize) -> Result<Self> {
        let w = 1.0 / (k * k * k) as f32;
        Self::new(k, d_in, d_out, vec![w; k * k * k * d_in * d_out])
    }

    /// Uniform random weights in `±1/sqrt(K^3 d_in)`.
    pub fn seeded(k: usize, d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        let n = k * k * k * d_in * d_out;
        let scale = 1.0 / ((k * k * k * d_in) as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(k, d_in, d_out, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// Offset-major weights: `weights[(o * d_in + c_in) * d_out + c_out]`.
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.weights.len());
        out.extend_from_slice(&HQK_MAGIC);
        for v in [self.k, self.d_in, self.d_out] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        put_f32s(&mut out, &self.weights);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        r.magic(HQK_MAGIC)?;
        let k = r.u32()? as usize;
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        if k == 0 || k % 2 == 0 || k > MAX_KERNEL_SIZE || d_in == 0 || d_out == 0 {
            return Err(DecodeError::malformed(format!("invalid kernel shape k={k} d_in={d_in} d_out={d_out}")));
        }
        let n = checked_len(&[k, k, k, d_in, d_out])?;
        let bytes = n.checked_mul(4).ok_or_else(|| DecodeError::malformed("declared size overflows"))?;
        if r.remaining() < bytes {
            return Err(DecodeError::Truncated { needed: r.position() + bytes, available: buf.len() });
        }
        let weights = r.finite_f32s(n, "kernel weights")?;
        r.finish()?;
        Ok(Self { k, d_in, d_out, weights })
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

/// A scan with per-point history features attached.
#[derive(Debug, Clone, PartialEq)]
pub struct EndowedPointCloud {
    pub points: Vec<[f64; 3]>,
    pub base_channels: Vec<f32>,
    pub n_base: usize,
    /// Row-major `N x d_history`.
    pub history: Vec<f32>,
    pub d_history: usize,
}

impl EndowedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn history_row(&self, i: usize) -> &[f32] {
        &self.history[i * self.d_history..(i + 1) * self.d_history]
    }

    /// Flattens into a cloud with `c + d_history` channels per point.
    pub fn to_point_cloud(&self) -> PointCloud {
        let width = self.n_base + self.d_history;
        let mut channels = Vec::with_capacity(self.len() * width);
        for i in 0..self.len() {
            channels.extend_from_slice(&self.base_channels[i * self.n_base..(i + 1) * self.n_base]);
            channels.extend_from_slice(self.history_row(i));
        }
        PointCloud::from_parts_unchecked(self.points.clone(), channels, width)
    }
}

/// Distinct scan voxels in sorted order, and each point's slot.
fn scan_voxels(points: &[[f64; 3]], delta: f64) -> (Vec<VoxelCoord>, Vec<u32>) {
    let mut memo: FxHashMap<VoxelCoord, u32> = FxHashMap::default();
    let mut voxels = Vec::new();
    let mut slots: Vec<u32> = points
        .iter()
        .map(|&p| {
            let c = quantize(p, delta);
            *memo.entry(c).or_insert_with(|| {
                voxels.push(c);
                (voxels.len() - 1) as u32
            })
        })
        .collect();
    let mut order: Vec<u32> = (0..voxels.len() as u32).collect();
    order.sort_unstable_by_key(|&s| voxels[s as usize]);
    let mut rank = vec![0u32; voxels.len()];
    for (r, &s) in order.iter().enumerate() {
        rank[s as usize] = r as u32;
    }
    for s in slots.iter_mut() {
        *s = rank[*s as usize];
    }
    (order.iter().map(|&s| voxels[s as usize]).collect(), slots)
}

/// Largest `(i, j)` bounding-box area, relative to the number of columns,
/// for which column ranges are kept in a dense table.
const DENSE_COLUMN_FILL: usize = 16;

/// Where each `(i, j)` column's entries start and end.
enum ColumnRanges {
    Dense {
        i0: i32,
        j0: i32,
        width: usize,
        height: usize,
        /// `(start, end)`; empty columns have `start == end`.
        ranges: Vec<(u32, u32)>,
    },
    Hashed(FxHashMap<(i32, i32), (u32, u32)>),
}

/// Grid entries grouped by `(i, j)` column, each column sorted by `k`.
/// Turns the `K^3` neighbourhood probe into `K^2` column lookups.
struct ColumnIndex {
    ranges: ColumnRanges,
    ks: Vec<i32>,
    rows: Vec<u32>,
}

impl ColumnIndex {
    fn new(grid: &SparseFeatureGrid) -> Self {
        let coords = grid.coords();
        let mut order: Vec<u32> = (0..coords.len() as u32).collect();
        if !coords.windows(2).all(|w| w[0] < w[1]) {
            order.sort_unstable_by_key(|&r| coords[r as usize]);
        }
        let mut columns = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let c = coords[order[start] as usize];
            let mut end = start + 1;
            while end < order.len() && {
                let e = coords[order[end] as usize];
                (e.i, e.j) == (c.i, c.j)
            } {
                end += 1;
            }
            columns.push(((c.i, c.j), (start as u32, end as u32)));
            start = end;
        }
        let ranges = match grid.bounding_box() {
            Some((lo, hi)) => {
                let width = (i64::from(hi.i) - i64::from(lo.i) + 1) as u64;
                let height = (i64::from(hi.j) - i64::from(lo.j) + 1) as u64;
                let area = width.saturating_mul(height);
                if area <= (columns.len() * DENSE_COLUMN_FILL) as u64 {
                    let (width, height) = (width as usize, height as usize);
                    let mut ranges = vec![(0, 0); width * height];
                    for ((i, j), range) in columns {
                        ranges[(i - lo.i) as usize * height + (j - lo.j) as usize] = range;
                    }
                    ColumnRanges::Dense { i0: lo.i, j0: lo.j, width, height, ranges }
                } else {
                    ColumnRanges::Hashed(columns.into_iter().collect())
                }
            }
            None => ColumnRanges::Hashed(FxHashMap::default()),
        };
        Self {
            ranges,
            ks: order.iter().map(|&r| coords[r as usize].k).collect(),
            rows: order,
        }
    }

    #[inline]
    fn column(&self, i: i32, j: i32) -> Option<(usize, usize)> {
        let (lo, hi) = match &self.ranges {
            ColumnRanges::Dense { i0, j0, width, height, ranges } => {
                let a = usize::try_from(i64::from(i) - i64::from(*i0)).ok()?;
                let b = usize::try_from(i64::from(j) - i64::from(*j0)).ok()?;
                if a >= *width || b >= *height {
                    return None;
                }
                ranges[a * height + b]
            }
            ColumnRanges::Hashed(map) => *map.get(&(i, j))?,
        };
        (lo < hi).then_some((lo as usize, hi as usize))
    }
}

/// Reusable buffers for [`eval_chunk`].
#[derive(Default)]
struct Scratch {
    /// Per kernel offset: `(chunk row, grid row)` hits.
    hits: Vec<Vec<(u32, u32)>>,
    gathered: Vec<f32>,
    product: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    /// One product per offset over the gathered occupied neighbours, then a
    /// scatter-add into the output rows.
    Gather,
    /// Each row holds its whole `K^3 x d_in` neighbourhood (zeros where
    /// empty); a single product with the full kernel.
    Im2col,
}

impl Strategy {
    /// Im2col multiplies every empty tap too, so it only pays off when the
    /// per-tap product is too narrow for the gather path to be efficient.
    fn for_kernel(kernel: &QueryKernel) -> Self {
        if kernel.d_in <= 2 {
            Strategy::Im2col
        } else {
            Strategy::Gather
        }
    }
}

/// Voxels per independently evaluated chunk. Depends only on the kernel so
/// the sequential and parallel paths perform identical arithmetic.
fn chunk_voxels(kernel: &QueryKernel) -> usize {
    let row = kernel.k.pow(3) * kernel.d_in;
    ((1 << 20) / row).clamp(256, 4096)
}

/// Row-major `C = A B` with `A: m x k`, `B: k x n`, `C: m x n`.
fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    // SAFETY: lengths checked above; strides describe dense row-major storage.
    unsafe {
        matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Calls `emit(offset index, chunk row, grid row)` for every occupied
/// neighbour of every voxel, voxel by voxel.
#[inline]
fn for_each_hit(columns: &ColumnIndex, k: usize, voxels: &[VoxelCoord], mut emit: impl FnMut(usize, usize, usize)) {
    let h = (k / 2) as i32;
    for (r, v) in voxels.iter().enumerate() {
        let k_lo = v.k.saturating_sub(h);
        for (a, di) in (-h..=h).enumerate() {
            for (b, dj) in (-h..=h).enumerate() {
                let Some((lo, hi)) = columns.column(v.i.saturating_add(di), v.j.saturating_add(dj)) else {
                    continue;
                };
                let first = lo + columns.ks[lo..hi].partition_point(|&kk| kk < k_lo);
                let column = (a * k + b) * k;
                for e in first..hi {
                    let dk = i64::from(columns.ks[e]) - i64::from(v.k);
                    if dk > i64::from(h) {
                        break;
                    }
                    emit(column + (dk + i64::from(h)) as usize, r, columns.rows[e] as usize);
                }
            }
        }
    }
}

/// Writes the convolution response at each of `voxels` into `out`
/// (`voxels.len() x d_out`).
fn eval_chunk(
    grid: &SparseFeatureGrid,
    columns: &ColumnIndex,
    kernel: &QueryKernel,
    voxels: &[VoxelCoord],
    out: &mut [f32],
    scratch: &mut Scratch,
    strategy: Strategy,
) {
    let (k, d_in, d_out) = (kernel.k, kernel.d_in, kernel.d_out);
    let taps = k * k * k;
    match strategy {
        Strategy::Im2col => {
            let width = taps * d_in;
            scratch.gathered.clear();
            scratch.gathered.resize(voxels.len() * width, 0.0);
            let gathered = &mut scratch.gathered;
            for_each_hit(columns, k, voxels, |o, r, row| {
                let at = r * width + o * d_in;
                gathered[at..at + d_in].copy_from_slice(grid.row(row));
            });
            gemm(voxels.len(), width, d_out, &scratch.gathered, &kernel.weights, out);
        }
        Strategy::Gather => {
            scratch.hits.resize_with(taps, Vec::new);
            scratch.hits.iter_mut().for_each(Vec::clear);
            let hits = &mut scratch.hits;
            for_each_hit(columns, k, voxels, |o, r, row| hits[o].push((r as u32, row as u32)));
            out.fill(0.0);
            let tap = d_in * d_out;
            for (o, hits) in scratch.hits.iter().enumerate() {
                let m = hits.len();
                if m == 0 {
                    continue;
                }
                scratch.gathered.clear();
                for &(_, row) in hits {
                    scratch.gathered.extend_from_slice(grid.row(row as usize));
                }
                scratch.product.clear();
                scratch.product.resize(m * d_out, 0.0);
                gemm(m, d_in, d_out, &scratch.gathered, &kernel.weights[o * tap..(o + 1) * tap], &mut scratch.product);
                for (&(r, _), y) in hits.iter().zip(scratch.product.chunks_exact(d_out)) {
                    let r = r as usize;
                    for (acc, &b) in out[r * d_out..(r + 1) * d_out].iter_mut().zip(y) {
                        *acc += b;
                    }
                }
            }
        }
    }
}

fn check_widths(record: &SquashRecord, kernel: &QueryKernel) -> Result<()> {
    if kernel.d_in != record.grid().d() {
        return Err(Error::config(format!(
            "kernel expects {} input features, record has {}",
            kernel.d_in,
            record.grid().d()
        )));
    }
    Ok(())
}

fn assemble(scan: &PointCloud, slots: &[u32], voxel_features: &[f32], d_out: usize) -> EndowedPointCloud {
    let mut history = Vec::with_capacity(scan.len() * d_out);
    for &s in slots {
        let s = s as usize;
        history.extend_from_slice(&voxel_features[s * d_out..(s + 1) * d_out]);
    }
    EndowedPointCloud {
        points: scan.points().to_vec(),
        base_channels: scan.channels().to_vec(),
        n_base: scan.n_channels(),
        history,
        d_history: d_out,
    }
}

fn evaluate(scan: &PointCloud, record: &SquashRecord, kernel: &QueryKernel, strategy: Option<Strategy>, parallel: bool) -> Result<EndowedPointCloud> {
    check_widths(record, kernel)?;
    let grid = record.grid();
    let (voxels, slots) = scan_voxels(scan.points(), grid.delta());
    let columns = ColumnIndex::new(grid);
    let d_out = kernel.d_out;
    let chunk = chunk_voxels(kernel);
    let strategy = strategy.unwrap_or_else(|| Strategy::for_kernel(kernel));
    let mut features = vec![0.0f32; voxels.len() * d_out];
    if parallel {
        features
            .par_chunks_mut(chunk * d_out)
            .zip(voxels.par_chunks(chunk))
            .for_each_init(Scratch::default, |scratch, (out, vs)| eval_chunk(grid, &columns, kernel, vs, out, scratch, strategy));
    } else {
        let mut scratch = Scratch::default();
        for (vs, out) in voxels.chunks(chunk).zip(features.chunks_mut(chunk * d_out)) {
            eval_chunk(grid, &columns, kernel, vs, out, &mut scratch, strategy);
        }
    }
    Ok(assemble(scan, &slots, &features, d_out))
}

/// History features for every point of `scan` (global frame).
pub fn query(scan: &PointCloud, record: &SquashRecord, kernel: &QueryKernel) -> Result<EndowedPointCloud> {
    evaluate(scan, record, kernel, None, false)
}

/// Multi-threaded [`query`]; output is bit-identical to the sequential path.
pub fn query_par(scan: &PointCloud, record: &SquashRecord, kernel: &QueryKernel) -> Result<EndowedPointCloud> {
    evaluate(scan, record, kernel, None, true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub n_points: usize,
    pub delta_m: f32,
    pub grid_voxels: usize,
    pub repetitions: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Wall-time statistics of [`query`] for prefixes of `scan` of each size.
/// One warm-up run per size is excluded.
pub fn query_latency_probe(
    scan: &PointCloud,
    sizes: &[usize],
    record: &SquashRecord,
    kernel: &QueryKernel,
    repetitions: usize,
) -> Result<Vec<LatencyStats>> {
    check_widths(record, kernel)?;
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let n = n.min(scan.len());
        let c = scan.n_channels();
        let sub = PointCloud::from_parts_unchecked(
            scan.points()[..n].to_vec(),
            scan.channels()[..n * c].to_vec(),
            c,
        );
        std::hint::black_box(query(&sub, record, kernel)?);
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            std::hint::black_box(query(std::hint::black_box(&sub), record, kernel)?);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        let mean = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
        times.sort_by(f64::total_cmp);
        out.push(LatencyStats {
            n_points: n,
            delta_m: record.grid().delta_m(),
            grid_voxels: record.grid().len(),
            repetitions,
            mean_ms: mean,
            median_ms: percentile(&times, 0.5),
            p99_ms: percentile(&times, 0.99),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_grid::{kernel_offsets, DEFAULT_DENSE_CAP};
    use crate::squash_builder::Anchor;

    fn record_of(grid: SparseFeatureGrid) -> SquashRecord {
        SquashRecord::new(Anchor { arclength: 0.0, position: [0.0; 3] }, grid, 1, 0).unwrap()
    }

    fn origin_record() -> SquashRecord {
        let mut g = SparseFeatureGrid::new(0.3, 1).unwrap();
        g.insert(VoxelCoord::new(0, 0, 0), &[1.0]).unwrap();
        record_of(g)
    }

    /// Dense convolution over the padded bounding box, then direct indexing.
    fn dense_oracle(record: &SquashRecord, kernel: &QueryKernel, points: &[[f64; 3]]) -> Vec<f32> {
        let grid = record.grid();
        let dense = grid.to_dense(DEFAULT_DENSE_CAP).unwrap();
        let r = (kernel.k() / 2) as i32;
        let lo = dense.origin.offset(-r, -r, -r);
        let shape = dense.shape.map(|s| s + 2 * r as usize);
        let mut conv = crate::sparse_grid::DenseGrid::zeros(lo, shape, kernel.d_out());
        let offsets = kernel_offsets(kernel.k());
        let coords: Vec<_> = conv.coords().collect();
        for c in coords {
            let mut acc = vec![0.0f32; kernel.d_out()];
            for (o, off) in offsets.iter().enumerate() {
                if let Some(q) = dense.get(c.offset(off[0], off[1], off[2])) {
                    for ci in 0..kernel.d_in() {
                        for co in 0..kernel.d_out() {
                            acc[co] += q[ci] * kernel.weights()[(o * kernel.d_in() + ci) * kernel.d_out() + co];
                        }
                    }
                }
            }
            conv.get_mut(c).unwrap().copy_from_slice(&acc);
        }
        points
            .iter()
            .flat_map(|&p| {
                let c = quantize(p, grid.delta());
                conv.get(c).map_or(vec![0.0; kernel.d_out()], |f| f.to_vec())
            })
            .collect()
    }

    #[test]
    fn origin_voxel_examples() {
        let rec = origin_record();
        let k = QueryKernel::new(3, 1, 1, vec![1.0; 27]).unwrap();
        let scan = PointCloud::from_points(vec![[0.1, 0.1, 0.1], [1.0, 1.0, 1.0]]).unwrap();
        let e = query(&scan, &rec, &k).unwrap();
        assert_eq!(e.history_row(0), &[1.0]);
        assert_eq!(e.history_row(1), &[0.0]);
    }

    #[test]
    fn matches_dense_oracle_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let d_in = [1, 4][trial % 2];
            let k = [3, 5][(trial / 2) % 2];
            let mut g = SparseFeatureGrid::new(0.3, d_in).unwrap();
            for _ in 0..rng.gen_range(1..200) {
                let c = VoxelCoord::new(rng.gen_range(0..12), rng.gen_range(0..12), rng.gen_range(0..12));
                let f: Vec<f32> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
                g.insert(c, &f).unwrap();
            }
            let rec = record_of(g);
            let kernel = QueryKernel::seeded(k, d_in, 3, trial as u64).unwrap();
            let pts: Vec<[f64; 3]> = (0..500)
                .map(|_| [rng.gen_range(-1.0..4.6), rng.gen_range(-1.0..4.6), rng.gen_range(-1.0..4.6)])
                .collect();
            let e = query(&PointCloud::from_points(pts.clone()).unwrap(), &rec, &kernel).unwrap();
            let oracle = dense_oracle(&rec, &kernel, &pts);
            for (a, b) in e.history.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn both_strategies_and_column_layouts_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for (trial, d_in) in [1usize, 3, 1, 3].into_iter().enumerate() {
            // the last two grids have an outlier voxel, forcing hashed columns
            let sparse_extent = trial >= 2;
            let mut g = SparseFeatureGrid::new(0.3, d_in).unwrap();
            for _ in 0..400 {
                let c = VoxelCoord::new(rng.gen_range(0..10), rng.gen_range(0..10), rng.gen_range(0..10));
                let f: Vec<f32> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
                g.insert(c, &f).unwrap();
            }
            if sparse_extent {
                g.insert(VoxelCoord::new(5000, -5000, 3), &vec![0.5; d_in]).unwrap();
            }
            let rec = record_of(g);
            let columns = ColumnIndex::new(rec.grid());
            assert_eq!(matches!(columns.ranges, ColumnRanges::Hashed(_)), sparse_extent);
            let kernel = QueryKernel::seeded(5, d_in, 4, trial as u64).unwrap();
            let mut pts: Vec<[f64; 3]> = (0..600)
                .map(|_| [rng.gen_range(-1.0..3.6), rng.gen_range(-1.0..3.6), rng.gen_range(-1.0..3.6)])
                .collect();
            pts.push([1500.1, -1499.9, 0.95]);
            let scan = PointCloud::from_points(pts.clone()).unwrap();
            let near: Vec<[f64; 3]> = pts[..600].to_vec();
            let oracle = if sparse_extent {
                // oracle over the compact part only; the outlier is checked by hand
                let mut compact = rec.grid().clone();
                compact.remove(VoxelCoord::new(5000, -5000, 3));
                dense_oracle(&record_of(compact), &kernel, &near)
            } else {
                dense_oracle(&rec, &kernel, &near)
            };
            for strategy in [Strategy::Gather, Strategy::Im2col] {
                let e = evaluate(&scan, &rec, &kernel, Some(strategy), false).unwrap();
                for (a, b) in e.history[..600 * 4].iter().zip(&oracle) {
                    assert!((a - b).abs() <= 1e-5, "{strategy:?}: {a} vs {b}");
                }
                // the far point sits on the outlier voxel: centre tap only
                let centre = 62 * d_in * 4;
                let want: Vec<f32> = if sparse_extent {
                    (0..4).map(|co| (0..d_in).map(|ci| 0.5 * kernel.weights()[centre + ci * 4 + co]).sum()).collect()
                } else {
                    vec![0.0; 4]
                };
                for (a, b) in e.history_row(600).iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn parallel_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d_in in [1, 4] {
            let mut g = SparseFeatureGrid::new(0.5, d_in).unwrap();
            for _ in 0..4000 {
                let c = VoxelCoord::new(rng.gen_range(-40..40), rng.gen_range(-40..40), rng.gen_range(-3..3));
                let f: Vec<f32> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
                g.insert(c, &f).unwrap();
            }
            let rec = record_of(g);
            let kernel = QueryKernel::seeded(5, d_in, 8, 1).unwrap();
            let pts: Vec<[f64; 3]> = (0..30_000)
                .map(|_| [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-1.5..1.5)])
                .collect();
            let scan = PointCloud::from_points(pts).unwrap();
            assert!(scan_voxels(scan.points(), 0.5).0.len() > 2 * chunk_voxels(&kernel));
            let a = query(&scan, &rec, &kernel).unwrap();
            let b = query_par(&scan, &rec, &kernel).unwrap();
            assert!(a.history.iter().zip(&b.history).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn kernel_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g = SparseFeatureGrid::new(0.3, 2).unwrap();
        for _ in 0..300 {
            let c = VoxelCoord::new(rng.gen_range(0..10), rng.gen_range(0..10), rng.gen_range(0..10));
            g.insert(c, &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap();
        }
        let rec = record_of(g);
        let k1 = QueryKernel::seeded(3, 2, 4, 1).unwrap();
        let k2 = QueryKernel::seeded(3, 2, 4, 2).unwrap();
        let sum: Vec<f32> = k1.weights().iter().zip(k2.weights()).map(|(a, b)| a + b).collect();
        let k12 = QueryKernel::new(3, 2, 4, sum).unwrap();
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|_| [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)])
            .collect();
        let scan = PointCloud::from_points(pts).unwrap();
        let a = query(&scan, &rec, &k1).unwrap();
        let b = query(&scan, &rec, &k2).unwrap();
        let ab = query(&scan, &rec, &k12).unwrap();
        for i in 0..ab.history.len() {
            assert!((ab.history[i] - (a.history[i] + b.history[i])).abs() <= 1e-5);
        }
    }

    #[test]
    fn shared_voxel_points_get_identical_features_and_empty_grid_is_zero() {
        let rec = origin_record();
        let k = QueryKernel::seeded(5, 1, 6, 0).unwrap();
        let scan = PointCloud::new(vec![[0.01, 0.02, 0.03], [0.25, 0.2, 0.1]], vec![3.0, 4.0], 1).unwrap();
        let e = query(&scan, &rec, &k).unwrap();
        assert_eq!(e.history_row(0), e.history_row(1));
        let flat = e.to_point_cloud();
        assert_eq!(flat.n_channels(), 7);
        assert_eq!(flat.channel_row(1)[0], 4.0);

        let empty = record_of(SparseFeatureGrid::new(0.3, 1).unwrap());
        let e = query(&scan, &empty, &k).unwrap();
        assert!(e.history.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_mismatch_and_far_points() {
        let rec = origin_record();
        let k = QueryKernel::averaging(3, 2, 1).unwrap();
        assert!(matches!(query(&PointCloud::empty(0), &rec, &k), Err(Error::Config(_))));
        let k = QueryKernel::averaging(3, 1, 1).unwrap();
        let far = PointCloud::from_points(vec![[1e12, -1e12, 1e12]]).unwrap();
        assert_eq!(query(&far, &rec, &k).unwrap().history, vec![0.0]);
    }

    #[test]
    fn kernel_blob_round_trip_and_errors() {
        let k = QueryKernel::seeded(5, 2, 3, 4).unwrap();
        let buf = k.encode();
        assert_eq!(&buf[..4], b"HQK1");
        assert_eq!(buf.len(), 16 + 4 * 125 * 6);
        assert_eq!(QueryKernel::decode(&buf).unwrap(), k);
        assert!(matches!(QueryKernel::decode(&buf[..100]), Err(DecodeError::Truncated { .. })));
        let mut even = buf.clone();
        even[4..8].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(QueryKernel::decode(&even), Err(DecodeError::Malformed(_))));
        assert!(QueryKernel::new(3, 1, 1, vec![f32::NAN; 27]).is_err());
        assert!(QueryKernel::new(2, 1, 1, vec![0.0; 8]).is_err());
    }

    #[test]
    fn probe_handles_empty_scan() {
        let rec = origin_record();
        let k = QueryKernel::averaging(5, 1, 4).unwrap();
        let stats = query_latency_probe(&PointCloud::empty(0), &[0, 10], &rec, &k, 3).unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].n_points, 0);
        assert!(stats[0].mean_ms >= 0.0 && stats[0].mean_ms < 50.0);
    }
}
