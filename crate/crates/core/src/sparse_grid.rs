//! Sparse voxel feature grids keyed by integer voxel coordinates.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// Bounding-box volume above which [`SparseFeatureGrid::to_dense`] refuses.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelCoord {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelCoord {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    /// Adds an offset, saturating at the `i32` range.
    #[inline]
    pub fn offset(self, di: i32, dj: i32, dk: i32) -> Self {
        Self {
            i: self.i.saturating_add(di),
            j: self.j.saturating_add(dj),
            k: self.k.saturating_add(dk),
        }
    }
}

/// Voxel containing `p`: componentwise `floor(p / delta)`. Out-of-range
/// values saturate.
#[inline]
pub fn quantize(p: [f64; 3], delta_m: f64) -> VoxelCoord {
    VoxelCoord {
        i: (p[0] / delta_m).floor() as i32,
        j: (p[1] / delta_m).floor() as i32,
        k: (p[2] / delta_m).floor() as i32,
    }
}

/// Offsets of a cubic kernel of edge `k` in lexicographic `(di, dj, dk)`
/// order starting from `(-(k-1)/2, ...)`.
pub fn kernel_offsets(k: usize) -> Vec<[i32; 3]> {
    let r = (k as i32 - 1) / 2;
    let mut out = Vec::with_capacity(k * k * k);
    for di in -r..=r {
        for dj in -r..=r {
            for dk in -r..=r {
                out.push([di, dj, dk]);
            }
        }
    }
    out
}

/// Map from voxel coordinate to a fixed-width f32 feature vector.
///
/// All-zero vectors are never stored, so a voxel is occupied iff it has an
/// entry. Entries live in a dense feature buffer indexed through a hash map.
#[derive(Debug, Clone)]
pub struct SparseFeatureGrid {
    delta_m: f32,
    d: usize,
    index: FxHashMap<VoxelCoord, u32>,
    coords: Vec<VoxelCoord>,
    features: Vec<f32>,
}

impl PartialEq for SparseFeatureGrid {
    fn eq(&self, other: &Self) -> bool {
        self.delta_m.to_bits() == other.delta_m.to_bits()
            && self.d == other.d
            && self.len() == other.len()
            && self.iter().all(|(c, f)| other.get(c) == Some(f))
    }
}

impl SparseFeatureGrid {
    pub fn new(delta_m: f32, d: usize) -> Result<Self> {
        if !(delta_m.is_finite() && delta_m > 0.0) {
            return Err(Error::config(format!("delta_m must be positive, got {delta_m}")));
        }
        if d == 0 {
            return Err(Error::config("feature width must be >= 1"));
        }
        Ok(Self {
            delta_m,
            d,
            index: FxHashMap::default(),
            coords: Vec::new(),
            features: Vec::new(),
        })
    }

    pub fn delta_m(&self) -> f32 {
        self.delta_m
    }

    /// Voxel edge as used for quantization.
    pub fn delta(&self) -> f64 {
        f64::from(self.delta_m)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn get(&self, c: VoxelCoord) -> Option<&[f32]> {
        self.index.get(&c).map(|&i| self.row(i as usize))
    }

    pub fn contains(&self, c: VoxelCoord) -> bool {
        self.index.contains_key(&c)
    }

    /// Feature vector of the entry at storage position `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    /// Sets the vector at `c`. An all-zero vector removes the entry.
    pub fn insert(&mut self, c: VoxelCoord, feature: &[f32]) -> Result<()> {
        if feature.len() != self.d {
            return Err(Error::validation(format!(
                "feature width {} does not match grid width {}",
                feature.len(),
                self.d
            )));
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite feature value"));
        }
        if feature.iter().all(|&v| v == 0.0) {
            self.remove(c);
            return Ok(());
        }
        match self.index.get(&c) {
            Some(&i) => {
                let i = i as usize;
                self.features[i * self.d..(i + 1) * self.d].copy_from_slice(feature);
            }
            None => {
                let i = u32::try_from(self.coords.len())
                    .map_err(|_| Error::validation("grid exceeds u32::MAX entries"))?;
                self.index.insert(c, i);
                self.coords.push(c);
                self.features.extend_from_slice(feature);
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, c: VoxelCoord) -> Option<Vec<f32>> {
        let i = self.index.remove(&c)? as usize;
        let last = self.coords.len() - 1;
        let removed = self.row(i).to_vec();
        if i != last {
            let moved = self.coords[last];
            self.coords[i] = moved;
            let (head, tail) = self.features.split_at_mut(last * self.d);
            head[i * self.d..(i + 1) * self.d].copy_from_slice(&tail[..self.d]);
            self.index.insert(moved, i as u32);
        }
        self.coords.pop();
        self.features.truncate(last * self.d);
        Some(removed)
    }

    /// Entries in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (VoxelCoord, &[f32])> + '_ {
        self.coords
            .iter()
            .enumerate()
            .map(move |(i, &c)| (c, self.row(i)))
    }

    /// Entries sorted lexicographically by `(i, j, k)`.
    pub fn sorted_entries(&self) -> Vec<(VoxelCoord, &[f32])> {
        let mut order: Vec<usize> = (0..self.coords.len()).collect();
        order.sort_unstable_by_key(|&i| self.coords[i]);
        order.into_iter().map(|i| (self.coords[i], self.row(i))).collect()
    }

    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    /// Inclusive min/max corners of the occupied voxels.
    pub fn bounding_box(&self) -> Option<(VoxelCoord, VoxelCoord)> {
        let first = *self.coords.first()?;
        Some(self.coords.iter().fold((first, first), |(lo, hi), c| {
            (
                VoxelCoord::new(lo.i.min(c.i), lo.j.min(c.j), lo.k.min(c.k)),
                VoxelCoord::new(hi.i.max(c.i), hi.j.max(c.j), hi.k.max(c.k)),
            )
        }))
    }

    /// Copy of the grid with entries stored in sorted coordinate order.
    pub fn canonicalized(&self) -> Self {
        let mut out = Self {
            delta_m: self.delta_m,
            d: self.d,
            index: FxHashMap::default(),
            coords: Vec::with_capacity(self.len()),
            features: Vec::with_capacity(self.features.len()),
        };
        out.index.reserve(self.len());
        for (c, f) in self.sorted_entries() {
            out.index.insert(c, out.coords.len() as u32);
            out.coords.push(c);
            out.features.extend_from_slice(f);
        }
        out
    }

    /// Sorted map view, convenient for comparisons in tests.
    pub fn to_btree(&self) -> BTreeMap<VoxelCoord, Vec<f32>> {
        self.iter().map(|(c, f)| (c, f.to_vec())).collect()
    }

    /// Dense `(H, W, D, d)` copy over the occupied bounding box.
    pub fn to_dense(&self, cap: usize) -> Result<DenseGrid> {
        let (lo, hi) = self
            .bounding_box()
            .ok_or_else(|| Error::Refused("cannot densify an empty grid".into()))?;
        let shape = [
            (i64::from(hi.i) - i64::from(lo.i) + 1) as u64,
            (i64::from(hi.j) - i64::from(lo.j) + 1) as u64,
            (i64::from(hi.k) - i64::from(lo.k) + 1) as u64,
        ];
        let volume = shape[0].checked_mul(shape[1]).and_then(|v| v.checked_mul(shape[2]));
        match volume {
            Some(v) if v <= cap as u64 => {}
            _ => {
                return Err(Error::Refused(format!(
                    "bounding box {}x{}x{} exceeds dense cap of {cap} voxels",
                    shape[0], shape[1], shape[2]
                )))
            }
        }
        let mut dense = DenseGrid::zeros(lo, [shape[0] as usize, shape[1] as usize, shape[2] as usize], self.d);
        for (c, f) in self.iter() {
            dense.get_mut(c).expect("inside bounding box").copy_from_slice(f);
        }
        Ok(dense)
    }
}

/// Dense 4D array of features over a box of voxels starting at `origin`.
/// Layout is `((x * W + y) * D + z) * d + channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub origin: VoxelCoord,
    pub shape: [usize; 3],
    pub d: usize,
    pub data: Vec<f32>,
}

impl DenseGrid {
    pub fn zeros(origin: VoxelCoord, shape: [usize; 3], d: usize) -> Self {
        Self {
            origin,
            shape,
            d,
            data: vec![0.0; shape[0] * shape[1] * shape[2] * d],
        }
    }

    fn cell(&self, c: VoxelCoord) -> Option<usize> {
        let x = i64::from(c.i) - i64::from(self.origin.i);
        let y = i64::from(c.j) - i64::from(self.origin.j);
        let z = i64::from(c.k) - i64::from(self.origin.k);
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.shape[0] || y >= self.shape[1] || z >= self.shape[2] {
            return None;
        }
        Some((x * self.shape[1] + y) * self.shape[2] + z)
    }

    /// Features at `c`, or `None` outside the box.
    pub fn get(&self, c: VoxelCoord) -> Option<&[f32]> {
        let i = self.cell(c)?;
        Some(&self.data[i * self.d..(i + 1) * self.d])
    }

    pub fn get_mut(&mut self, c: VoxelCoord) -> Option<&mut [f32]> {
        let i = self.cell(c)?;
        let d = self.d;
        Some(&mut self.data[i * d..(i + 1) * d])
    }

    /// All voxel coordinates in the box, in layout order.
    pub fn coords(&self) -> impl Iterator<Item = VoxelCoord> + '_ {
        let [h, w, dd] = self.shape;
        let o = self.origin;
        (0..h).flat_map(move |x| {
            (0..w).flat_map(move |y| {
                (0..dd).map(move |z| o.offset(x as i32, y as i32, z as i32))
            })
        })
    }

    /// Sparse form, dropping all-zero vectors.
    pub fn to_sparse(&self, delta_m: f32) -> Result<SparseFeatureGrid> {
        let mut grid = SparseFeatureGrid::new(delta_m, self.d)?;
        for c in self.coords() {
            let f = self.get(c).expect("in box");
            if f.iter().any(|&v| v != 0.0) {
                grid.insert(c, f)?;
            }
        }
        Ok(grid)
    }
}
