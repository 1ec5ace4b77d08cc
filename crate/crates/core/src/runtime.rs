//! Load-once, query-many entry point used by `squash query` and by host
//! language bindings.

use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::Pose6DoF;
use crate::query_engine::{query, EndowedPointCloud, QueryKernel};
use crate::squash_store::SquashStore;

/// Retrieval metadata accompanying an endowed scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Endowment {
    pub cloud: EndowedPointCloud,
    pub anchor_arclength: f64,
    /// Distance from the scan pose to the retrieved anchor.
    pub distance_m: f64,
}

/// A frozen store plus query kernel. Shareable across threads.
#[derive(Debug, Clone)]
pub struct Endower {
    store: SquashStore,
    kernel: QueryKernel,
}

impl Endower {
    pub fn new(store: SquashStore, kernel: QueryKernel) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::NotFound("store has no records".into()));
        }
        if let Some(r) = store.records().iter().find(|r| r.grid().d() != kernel.d_in()) {
            return Err(Error::config(format!(
                "kernel expects {} input features, record at {} m has {}",
                kernel.d_in(),
                r.anchor.arclength,
                r.grid().d()
            )));
        }
        Ok(Self { store, kernel })
    }

    pub fn open(store_dir: impl AsRef<Path>, kernel_path: impl AsRef<Path>) -> Result<Self> {
        Self::new(SquashStore::load_dir(store_dir)?, QueryKernel::load(kernel_path)?)
    }

    pub fn store(&self) -> &SquashStore {
        &self.store
    }

    pub fn kernel(&self) -> &QueryKernel {
        &self.kernel
    }

    pub fn d_history(&self) -> usize {
        self.kernel.d_out()
    }

    /// Endows a sensor-frame scan captured at `pose`. The returned cloud
    /// keeps the input (sensor-frame) coordinates and channels.
    pub fn endow(&self, scan: &PointCloud, pose: &Pose6DoF) -> Result<Endowment> {
        let global = pose.transform_points(scan)?;
        let hit = self.store.retrieve(pose.translation())?;
        let mut cloud = query(&global, hit.record, &self.kernel)?;
        cloud.points = scan.points().to_vec();
        Ok(Endowment {
            cloud,
            anchor_arclength: hit.record.anchor.arclength,
            distance_m: hit.distance,
        })
    }

    /// Flat-array form: `points` is row-major `N x 3`, `pose` is a row-major
    /// `3 x 4` `[R | t]`. Returns row-major `N x d_history`.
    pub fn endow_flat(&self, points: &[f64], pose: &[f64; 12]) -> Result<Vec<f32>> {
        if points.len() % 3 != 0 {
            return Err(Error::validation(format!("point buffer length {} is not a multiple of 3", points.len())));
        }
        let pts = points.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        let scan = PointCloud::from_points(pts)?;
        let pose = Pose6DoF::from_row_major(
            [pose[0], pose[1], pose[2], pose[4], pose[5], pose[6], pose[8], pose[9], pose[10]],
            [pose[3], pose[7], pose[11]],
        )?;
        Ok(self.endow(&scan, &pose)?.cloud.history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_grid::{SparseFeatureGrid, VoxelCoord};
    use crate::squash_builder::{Anchor, SquashRecord};

    fn endower() -> Endower {
        let mut g = SparseFeatureGrid::new(1.0, 1).unwrap();
        g.insert(VoxelCoord::new(10, 0, 0), &[2.0]).unwrap();
        let rec = SquashRecord::new(Anchor { arclength: 10.0, position: [10.0, 0.0, 0.0] }, g, 1, 0).unwrap();
        let store = SquashStore::new("r", vec![rec]).unwrap();
        Endower::new(store, QueryKernel::new(1, 1, 1, vec![1.0]).unwrap()).unwrap()
    }

    #[test]
    fn endow_uses_global_frame_and_keeps_sensor_points() {
        let e = endower();
        let scan = PointCloud::from_points(vec![[0.5, 0.5, 0.5], [3.0, 0.0, 0.0]]).unwrap();
        let pose = Pose6DoF::from_translation([10.0, 0.0, 0.0]);
        let out = e.endow(&scan, &pose).unwrap();
        assert_eq!(out.cloud.history, vec![2.0, 0.0]);
        assert_eq!(out.cloud.points, scan.points());
        assert_eq!(out.distance_m, 0.0);
        let flat = e
            .endow_flat(&[0.5, 0.5, 0.5, 3.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 10.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
            .unwrap();
        assert_eq!(flat, out.cloud.history);
    }

    #[test]
    fn flat_errors_and_empty() {
        let e = endower();
        let id = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(e.endow_flat(&[1.0, 2.0], &id).is_err());
        assert!(e.endow_flat(&[], &id).unwrap().is_empty());
        let mut bad = id;
        bad[0] = 3.0;
        assert!(e.endow_flat(&[], &bad).is_err());
    }

    #[test]
    fn rejects_empty_store_and_width_mismatch() {
        let store = SquashStore::new("r", vec![]).unwrap();
        assert!(Endower::new(store, QueryKernel::averaging(3, 1, 1).unwrap()).is_err());
        let store = endower().store().clone();
        assert!(matches!(Endower::new(store, QueryKernel::averaging(3, 2, 1).unwrap()), Err(Error::Config(_))));
    }
}
