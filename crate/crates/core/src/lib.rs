//! Geo-indexed sparse history features for LiDAR point clouds.
//!
//! Past traversals of a route are combined into dense point clouds around
//! anchor locations, quantized into sparse voxel feature grids, aggregated
//! across traversals and stored per anchor. At run time a live scan looks up
//! the nearest record and receives per-point history features from a lazily
//! evaluated sparse `K x K x K` convolution.
//!
//! Conventions: the global frame is right-handed with `z` up. Coordinates are
//! `f64` internally; feature channels are `f32`.

pub mod cloud;
pub mod error;
pub mod featurizer;
pub mod geometry;
pub mod query_engine;
pub mod runtime;
pub mod scan_model;
pub mod sim_harness;
pub mod sparse_grid;
pub mod squash_builder;
pub mod squash_store;

pub(crate) mod bytes;

pub use cloud::PointCloud;
pub use error::{DecodeError, Error, Result};
pub use featurizer::{FcnWeights, FeaturizerSpec};
pub use geometry::Pose6DoF;
pub use query_engine::{EndowedPointCloud, QueryKernel};
pub use scan_model::{BuildConfig, Frame, Traversal};
pub use sparse_grid::{SparseFeatureGrid, VoxelCoord};
pub use squash_builder::{AggregationMode, Anchor, SquashRecord};
pub use squash_store::SquashStore;
