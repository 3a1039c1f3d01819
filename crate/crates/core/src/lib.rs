//! Building footprints to voxel heights, per-cell volumes, and a
//! tree-ensemble regression from blurred volume to air temperature.

pub mod eval;
pub mod geo;
pub mod grid;
pub mod ingest;
pub mod model;
pub mod png;
pub mod raster;
pub mod synth;
pub mod volume;
pub mod voxel;

pub use geo::{compute_bbox, world_to_voxel, BBox, GeoError, GridSpec, VoxelIndex};
pub use grid::{Grid, GridError, NODATA};
pub use ingest::BuildingRecord;
