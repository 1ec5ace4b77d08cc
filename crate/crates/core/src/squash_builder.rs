//! Per-anchor aggregation of featurized past traversals into history grids.

use std::borrow::Borrow;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeaturizerSpec};
use crate::scan_model::{anchor_locations, BuildConfig, Traversal};
use crate::sparse_grid::{SparseFeatureGrid, VoxelCoord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationMode {
    #[default]
    Max,
    /// Mean over the grids that occupy the voxel (not over all grids).
    Mean,
}

/// A location along the route at which a record is built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    /// Arclength along the reference traversal.
    pub arclength: f64,
    /// Global position of the reference traversal at that arclength.
    pub position: [f64; 3],
}

/// Aggregated history grid for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashRecord {
    pub anchor: Anchor,
    grid: SparseFeatureGrid,
    pub t_used: u32,
    pub cfg_fingerprint: u64,
}

impl SquashRecord {
    /// Freezes `grid` (entries re-stored in sorted coordinate order).
    pub fn new(anchor: Anchor, grid: SparseFeatureGrid, t_used: u32, cfg_fingerprint: u64) -> Result<Self> {
        if t_used == 0 {
            return Err(Error::validation("t_used must be >= 1"));
        }
        if !anchor.arclength.is_finite() || !anchor.position.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("anchor must be finite"));
        }
        Ok(Self {
            anchor,
            grid: grid.canonicalized(),
            t_used,
            cfg_fingerprint,
        })
    }

    pub fn grid(&self) -> &SparseFeatureGrid {
        &self.grid
    }
}

/// Stable 64-bit fingerprint of a build configuration and featurizer.
pub fn cfg_fingerprint(cfg: &BuildConfig, spec: &FeaturizerSpec) -> u64 {
    let mut h = Sha256::new();
    h.update(cfg.canonical_bytes());
    h.update(spec.canonical_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Per-voxel reduction of grids sharing `delta_m` and `d`. The output
/// support is the union of input supports, except that voxels whose result
/// is exactly zero are dropped.
pub fn aggregate<G: Borrow<SparseFeatureGrid>>(grids: &[G], mode: AggregationMode) -> Result<SparseFeatureGrid> {
    let first = grids
        .first()
        .ok_or_else(|| Error::config("aggregate needs at least one grid"))?
        .borrow();
    let (delta, d) = (first.delta_m(), first.d());
    for g in grids {
        let g = g.borrow();
        if g.delta_m().to_bits() != delta.to_bits() || g.d() != d {
            return Err(Error::config(format!(
                "cannot aggregate grids with (delta {}, d {}) and (delta {}, d {})",
                delta,
                d,
                g.delta_m(),
                g.d()
            )));
        }
    }
    let mut acc: FxHashMap<VoxelCoord, (Vec<f64>, u32)> = FxHashMap::default();
    for g in grids {
        for (c, f) in g.borrow().iter() {
            match acc.get_mut(&c) {
                Some((v, n)) => {
                    *n += 1;
                    for (a, &x) in v.iter_mut().zip(f) {
                        match mode {
                            AggregationMode::Max => *a = a.max(f64::from(x)),
                            AggregationMode::Mean => *a += f64::from(x),
                        }
                    }
                }
                None => {
                    acc.insert(c, (f.iter().map(|&x| f64::from(x)).collect(), 1));
                }
            }
        }
    }
    let mut entries: Vec<_> = acc.into_iter().collect();
    entries.sort_unstable_by_key(|(c, _)| *c);
    let mut out = SparseFeatureGrid::new(delta, d)?;
    let mut row = vec![0.0f32; d];
    for (c, (v, n)) in entries {
        for (r, a) in row.iter_mut().zip(&v) {
            *r = match mode {
                AggregationMode::Max => *a as f32,
                AggregationMode::Mean => (*a / f64::from(n)) as f32,
            };
        }
        out.insert(c, &row)?;
    }
    Ok(out)
}

type CacheKey = (String, u64, u64);

/// Builds records for anchors, caching per-traversal feature grids keyed by
/// (traversal id, anchor arclength, configuration fingerprint).
pub struct SquashBuilder {
    cfg: BuildConfig,
    spec: FeaturizerSpec,
    mode: AggregationMode,
    fingerprint: u64,
    cache: Mutex<FxHashMap<CacheKey, Arc<SparseFeatureGrid>>>,
}

impl SquashBuilder {
    pub fn new(cfg: BuildConfig, spec: FeaturizerSpec) -> Result<Self> {
        cfg.validate()?;
        let fingerprint = cfg_fingerprint(&cfg, &spec);
        Ok(Self {
            cfg,
            spec,
            mode: AggregationMode::Max,
            fingerprint,
            cache: Mutex::new(FxHashMap::default()),
        })
    }

    pub fn with_mode(mut self, mode: AggregationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn config(&self) -> &BuildConfig {
        &self.cfg
    }

    pub fn cached_grids(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Traversals covering `anchor`, most recent first, each with the local
    /// arclength of its frame nearest the anchor position. A traversal covers
    /// the anchor when that frame lies within one anchor spacing. Equal
    /// timestamps rank later-listed traversals as more recent.
    pub fn covering<'t>(&self, traversals: &'t [Traversal], anchor: &Anchor) -> Vec<(&'t Traversal, f64)> {
        let mut out: Vec<(usize, &Traversal, f64)> = traversals
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let (frame, dist) = t.nearest_frame(anchor.position);
                (dist <= self.cfg.anchor_spacing_m).then(|| (i, t, t.arclengths()[frame]))
            })
            .collect();
        out.sort_by(|a, b| b.1.timestamp().cmp(&a.1.timestamp()).then(b.0.cmp(&a.0)));
        out.into_iter().map(|(_, t, s)| (t, s)).collect()
    }

    fn traversal_grid(&self, traversal: &Traversal, local_arclength: f64) -> Result<Arc<SparseFeatureGrid>> {
        let key = (traversal.id().to_string(), local_arclength.to_bits(), self.fingerprint);
        if let Some(g) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(g));
        }
        let dense = traversal.combine_dense(local_arclength, &self.cfg)?;
        let grid = if dense.is_empty() {
            SparseFeatureGrid::new(self.cfg.delta_m as f32, self.spec.d_out())?
        } else {
            featurize(&dense, &self.spec, self.cfg.delta_m)?
        };
        let grid = Arc::new(grid);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&grid));
        Ok(grid)
    }

    /// Featurizes the `t_max` most recent covering traversals and aggregates
    /// them.
    pub fn build(&self, traversals: &[Traversal], anchor: &Anchor) -> Result<SquashRecord> {
        let covering = self.covering(traversals, anchor);
        if covering.is_empty() {
            return Err(Error::EmptyBuild {
                anchor_arclength: anchor.arclength,
            });
        }
        let used = &covering[..covering.len().min(self.cfg.t_max)];
        let grids = used
            .iter()
            .map(|(t, s)| self.traversal_grid(t, *s))
            .collect::<Result<Vec<_>>>()?;
        let grid = aggregate(&grids, self.mode)?;
        SquashRecord::new(*anchor, grid, used.len() as u32, self.fingerprint)
    }

    /// Anchors every `anchor_spacing_m` along the first traversal, which
    /// defines the route.
    pub fn route_anchors(&self, traversals: &[Traversal]) -> Result<Vec<Anchor>> {
        let reference = traversals
            .first()
            .ok_or_else(|| Error::EmptySelection("no traversals".into()))?;
        Ok(anchor_locations(reference, &self.cfg)
            .into_iter()
            .map(|arclength| Anchor {
                arclength,
                position: reference.position_at(arclength),
            })
            .collect())
    }

    /// Builds every route anchor, in parallel across anchors.
    pub fn build_route(&self, traversals: &[Traversal]) -> Result<Vec<SquashRecord>> {
        let anchors = self.route_anchors(traversals)?;
        anchors.par_iter().map(|a| self.build(traversals, a)).collect()
    }
}

/// One-shot build of a single anchor with max aggregation.
pub fn build_squash(
    traversals: &[Traversal],
    anchor: &Anchor,
    cfg: &BuildConfig,
    spec: &FeaturizerSpec,
) -> Result<SquashRecord> {
    SquashBuilder::new(*cfg, spec.clone())?.build(traversals, anchor)
}
