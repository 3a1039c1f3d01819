//! Planar coordinate geometry: bounding boxes, grid specs and the
//! world-to-voxel index transform.
//!
//! All grids are row-major with a top-left origin: row 0 is the northmost
//! row, column 0 the westmost column.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::BuildingRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid bbox: x [{x_min}, {x_max}], y [{y_min}, {y_max}]")]
    InvalidBBox {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    #[error("{axis} coordinate {value} outside [{min}, {max}]")]
    OutOfRange {
        axis: char,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("grid must have at least one cell per axis (got {width}x{height})")]
    EmptyGrid { width: usize, height: usize },
    #[error("cell size must be positive and finite (got {0})")]
    InvalidCellSize(f64),
    #[error("extent {extent} m is not a whole number of {cell_size} m cells")]
    NotCommensurable { extent: f64, cell_size: f64 },
    #[error("cannot compute a bbox from an empty building list")]
    EmptyInput,
    #[error("crop bbox does not contain any cell center of the grid")]
    EmptyCrop,
}

/// Axis-aligned bounding box in planar meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, GeoError> {
        let ok = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite())
            && x_min < x_max
            && y_min < y_max;
        if !ok {
            return Err(GeoError::InvalidBBox {
                x_min,
                x_max,
                y_min,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn width_m(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height_m(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Inclusive containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            x_max: self.x_max.max(other.x_max),
            y_min: self.y_min.min(other.y_min),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Expands the box outward so every edge lies on the lattice
    /// `origin + k * step`.
    pub fn snap_outward(&self, origin_x: f64, origin_y: f64, step: f64) -> BBox {
        let snap_down = |v: f64, o: f64| o + ((v - o) / step).floor() * step;
        let snap_up = |v: f64, o: f64| o + ((v - o) / step).ceil() * step;
        let mut b = BBox {
            x_min: snap_down(self.x_min, origin_x),
            x_max: snap_up(self.x_max, origin_x),
            y_min: snap_down(self.y_min, origin_y),
            y_max: snap_up(self.y_max, origin_y),
        };
        if b.x_max <= b.x_min {
            b.x_max = b.x_min + step;
        }
        if b.y_max <= b.y_min {
            b.y_max = b.y_min + step;
        }
        b
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x_min: self.x_min.max(other.x_min),
            x_max: self.x_max.min(other.x_max),
            y_min: self.y_min.max(other.y_min),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }
}

/// Georeferenced raster geometry. Cell `(col, row)` covers
/// `[x_min + col*c, x_min + (col+1)*c] x [y_max - (row+1)*c, y_max - row*c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
}

impl GridSpec {
    /// Builds a spec whose extent must be a whole number of cells (to within
    /// 1e-6 of a cell).
    pub fn from_bbox(bbox: BBox, cell_size_m: f64) -> Result<Self, GeoError> {
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(GeoError::InvalidCellSize(cell_size_m));
        }
        let width = whole_cells(bbox.width_m(), cell_size_m)?;
        let height = whole_cells(bbox.height_m(), cell_size_m)?;
        Self::new(bbox, width, height, cell_size_m)
    }

    /// Builds a spec anchored at the lower-left corner.
    pub fn from_origin(
        x_min: f64,
        y_min: f64,
        width: usize,
        height: usize,
        cell_size_m: f64,
    ) -> Result<Self, GeoError> {
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(GeoError::InvalidCellSize(cell_size_m));
        }
        let bbox = BBox::new(
            x_min,
            x_min + width as f64 * cell_size_m,
            y_min,
            y_min + height as f64 * cell_size_m,
        )
        .map_err(|_| GeoError::EmptyGrid { width, height })?;
        Self::new(bbox, width, height, cell_size_m)
    }

    pub fn new(bbox: BBox, width: usize, height: usize, cell_size_m: f64) -> Result<Self, GeoError> {
        if width == 0 || height == 0 {
            return Err(GeoError::EmptyGrid { width, height });
        }
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(GeoError::InvalidCellSize(cell_size_m));
        }
        for (extent, n) in [(bbox.width_m(), width), (bbox.height_m(), height)] {
            if (extent - n as f64 * cell_size_m).abs() > cell_size_m {
                return Err(GeoError::NotCommensurable {
                    extent,
                    cell_size: cell_size_m,
                });
            }
        }
        Ok(Self {
            bbox,
            width,
            height,
            cell_size_m,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area_m2(&self) -> f64 {
        self.cell_size_m * self.cell_size_m
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// World coordinate of the center of cell `(col, row)`.
    #[inline]
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.bbox.x_min + (col as f64 + 0.5) * self.cell_size_m,
            self.bbox.y_max - (row as f64 + 0.5) * self.cell_size_m,
        )
    }

    /// Columns whose center x lies in `[x0, x1]`, clipped to the grid.
    pub fn cols_with_centers_in(&self, x0: f64, x1: f64) -> Option<(usize, usize)> {
        let lo = ((x0 - self.bbox.x_min) / self.cell_size_m - 0.5).ceil();
        let hi = ((x1 - self.bbox.x_min) / self.cell_size_m - 0.5).floor();
        clip_range(lo, hi, self.width)
    }

    /// Rows whose center y lies in `[y0, y1]`, clipped to the grid.
    pub fn rows_with_centers_in(&self, y0: f64, y1: f64) -> Option<(usize, usize)> {
        let lo = ((self.bbox.y_max - y1) / self.cell_size_m - 0.5).ceil();
        let hi = ((self.bbox.y_max - y0) / self.cell_size_m - 0.5).floor();
        clip_range(lo, hi, self.height)
    }

    /// The cell containing a world point, using half-open cell intervals
    /// (the east and south grid edges belong to the last column/row).
    pub fn cell_containing(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.bbox.contains(x, y) {
            return None;
        }
        let col = (((x - self.bbox.x_min) / self.cell_size_m).floor() as usize).min(self.width - 1);
        let row = (((self.bbox.y_max - y) / self.cell_size_m).floor() as usize).min(self.height - 1);
        Some((col, row))
    }

    /// Structural equality with a tolerance on floating geometry.
    pub fn same_geometry(&self, other: &GridSpec) -> bool {
        let tol = 1e-6 * self.cell_size_m.min(other.cell_size_m);
        self.width == other.width
            && self.height == other.height
            && (self.cell_size_m - other.cell_size_m).abs() <= tol
            && (self.bbox.x_min - other.bbox.x_min).abs() <= tol
            && (self.bbox.y_min - other.bbox.y_min).abs() <= tol
            && (self.bbox.x_max - other.bbox.x_max).abs() <= tol
            && (self.bbox.y_max - other.bbox.y_max).abs() <= tol
    }
}

fn clip_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let lo = lo.max(0.0);
    let hi = hi.min(n as f64 - 1.0);
    (lo <= hi).then(|| (lo as usize, hi as usize))
}

fn whole_cells(extent: f64, cell: f64) -> Result<usize, GeoError> {
    let n = (extent / cell).round();
    if n < 1.0 || (n * cell - extent).abs() > 1e-6 * cell {
        return Err(GeoError::NotCommensurable {
            extent,
            cell_size: cell,
        });
    }
    Ok(n as usize)
}

/// Integer voxel index produced by the world-to-voxel transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub col: usize,
    pub row: usize,
}

/// The single rounding rule shared by both axes: half away from zero.
#[inline]
pub fn round_index(v: f64) -> f64 {
    v.round()
}

/// Maps an easting onto a column index:
/// `round((x - x_min) / (x_max - x_min) * (width - 1))`.
pub fn world_to_voxel_x(x: f64, bbox: &BBox, width: usize) -> Result<usize, GeoError> {
    if !(x >= bbox.x_min && x <= bbox.x_max) {
        return Err(GeoError::OutOfRange {
            axis: 'x',
            value: x,
            min: bbox.x_min,
            max: bbox.x_max,
        });
    }
    let span = width.saturating_sub(1) as f64;
    Ok(round_index((x - bbox.x_min) / (bbox.x_max - bbox.x_min) * span) as usize)
}

/// Maps a northing onto a row index with the Y flip:
/// `round((y_max - y) / (y_max - y_min) * (height - 1))`.
pub fn world_to_voxel_y(y: f64, bbox: &BBox, height: usize) -> Result<usize, GeoError> {
    if !(y >= bbox.y_min && y <= bbox.y_max) {
        return Err(GeoError::OutOfRange {
            axis: 'y',
            value: y,
            min: bbox.y_min,
            max: bbox.y_max,
        });
    }
    let span = height.saturating_sub(1) as f64;
    Ok(round_index((bbox.y_max - y) / (bbox.y_max - bbox.y_min) * span) as usize)
}

pub fn world_to_voxel(x: f64, y: f64, spec: &GridSpec) -> Result<VoxelIndex, GeoError> {
    Ok(VoxelIndex {
        col: world_to_voxel_x(x, &spec.bbox, spec.width)?,
        row: world_to_voxel_y(y, &spec.bbox, spec.height)?,
    })
}

/// Tight bounds over every footprint vertex.
pub fn compute_bbox(buildings: &[BuildingRecord]) -> Result<BBox, GeoError> {
    let mut it = buildings.iter().flat_map(|b| b.footprint.iter());
    let first = it.next().ok_or(GeoError::EmptyInput)?;
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (first[0], first[0], first[1], first[1]);
    for p in it {
        x_min = x_min.min(p[0]);
        x_max = x_max.max(p[0]);
        y_min = y_min.min(p[1]);
        y_max = y_max.max(p[1]);
    }
    BBox::new(x_min, x_max, y_min, y_max)
}
