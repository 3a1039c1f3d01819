//! Building geometry and temperature grid ingestion.

mod building_list;
pub mod citygml;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{BBox, GeoError};
use crate::grid::{crop_coarse_grid, Grid, GridError};

pub use building_list::{parse_building_list, write_building_list};
pub use citygml::{parse_citygml_buildings, write_citygml_solids, CityGmlParse, HeightSource};

/// Plausible near-surface air temperature bounds (°C, exclusive).
pub const TEMPERATURE_BOUNDS: (f64, f64) = (-60.0, 60.0);

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("XML parse error at byte {offset}: {msg}")]
    Xml { offset: u64, msg: String },
    #[error("building list record {index}: {msg}")]
    Schema { index: usize, msg: String },
    #[error("building list is not a JSON array: {0}")]
    Json(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("temperature {value} at cell ({col}, {row}) outside plausible range")]
    Implausible { col: usize, row: usize, value: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One building: a closed footprint ring with a height per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub id: String,
    /// Footprint vertices in planar meters. The ring may repeat the first
    /// vertex at the end or leave the closure implicit.
    pub footprint: Vec<[f64; 2]>,
    /// Height above local ground for each footprint vertex, same length as
    /// `footprint`.
    #[serde(rename = "heights")]
    pub vertex_heights: Vec<f64>,
}

impl BuildingRecord {
    /// A flat-roof building: every vertex carries `height`.
    pub fn flat(id: impl Into<String>, footprint: Vec<[f64; 2]>, height: f64) -> Self {
        let n = footprint.len();
        Self {
            id: id.into(),
            footprint,
            vertex_heights: vec![height; n],
        }
    }

    /// Footprint without the closing duplicate vertex.
    pub fn ring(&self) -> &[[f64; 2]] {
        let fp = &self.footprint;
        if fp.len() > 1 && fp.first() == fp.last() {
            &fp[..fp.len() - 1]
        } else {
            fp
        }
    }

    /// Heights aligned with [`ring`](Self::ring).
    pub fn ring_heights(&self) -> &[f64] {
        &self.vertex_heights[..self.ring().len()]
    }

    pub fn height(&self) -> f64 {
        self.vertex_heights.iter().copied().fold(0.0, f64::max)
    }

    pub fn bbox(&self) -> Option<BBox> {
        let ring = self.ring();
        let first = ring.first()?;
        let mut b = BBox {
            x_min: first[0],
            x_max: first[0],
            y_min: first[1],
            y_max: first[1],
        };
        for p in ring {
            b.x_min = b.x_min.min(p[0]);
            b.x_max = b.x_max.max(p[0]);
            b.y_min = b.y_min.min(p[1]);
            b.y_max = b.y_max.max(p[1]);
        }
        Some(b)
    }

    /// Shoelace area of the ring (absolute value).
    pub fn area(&self) -> f64 {
        let ring = self.ring();
        let n = ring.len();
        let mut twice = 0.0;
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            twice += a[0] * b[1] - b[0] * a[1];
        }
        twice.abs() / 2.0
    }

    /// Checks the record invariants; returns a message naming the field.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id: must not be empty".into());
        }
        if self.footprint.len() != self.vertex_heights.len() {
            return Err(format!(
                "heights: length {} differs from footprint length {}",
                self.vertex_heights.len(),
                self.footprint.len()
            ));
        }
        if let Some(i) = self.footprint.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(format!("footprint[{i}]: non-finite coordinate"));
        }
        if let Some(i) = self.vertex_heights.iter().position(|h| !h.is_finite() || *h < 0.0) {
            return Err(format!("heights[{i}]: must be finite and >= 0"));
        }
        let mut distinct: Vec<[f64; 2]> = Vec::new();
        for p in self.ring() {
            if !distinct.contains(p) {
                distinct.push(*p);
            }
        }
        if distinct.len() < 3 {
            return Err(format!("footprint: {} distinct vertices, need at least 3", distinct.len()));
        }
        Ok(())
    }
}

/// Reads buildings from either a CityGML document (`.gml`, `.xml`) or a
/// building-list JSON document (anything else).
pub fn read_buildings(path: &Path) -> Result<Vec<BuildingRecord>, IngestError> {
    let bytes = std::fs::read(path)?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("gml") | Some("xml") => Ok(parse_citygml_buildings(&bytes)?.buildings),
        _ => parse_building_list(&bytes),
    }
}

/// Reads an ASCII temperature grid and crops it to `target_bbox`.
pub fn read_temperature_grid(path: &Path, target_bbox: &BBox) -> Result<Grid, IngestError> {
    let grid = Grid::read_ascii(path)?;
    temperature_from_grid(&grid, target_bbox)
}

/// Crops an already parsed grid and checks value plausibility.
pub fn temperature_from_grid(grid: &Grid, target_bbox: &BBox) -> Result<Grid, IngestError> {
    let cropped = crop_coarse_grid(grid, target_bbox)?;
    let (lo, hi) = TEMPERATURE_BOUNDS;
    for (i, &v) in cropped.values.iter().enumerate() {
        if cropped.is_valid(v) && !(v > lo && v < hi) {
            return Err(IngestError::Implausible {
                col: i % cropped.spec.width,
                row: i / cropped.spec.width,
                value: v,
            });
        }
    }
    Ok(cropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GridSpec;
    use crate::grid::NODATA;

    fn write_grid(dir: &Path, text: &str) -> std::path::PathBuf {
        let p = dir.join("t.asc");
        std::fs::write(&p, text).unwrap();
        p
    }

    const FOUR_BY_FOUR: &str = "ncols 4\nnrows 4\nxllcorner 0\nyllcorner 0\ncellsize 1000\nNODATA_value -999\n\
        1 2 3 4\n5 6 7 8\n9 10 11 -999\n13 14 15 16\n";

    #[test]
    fn full_extent_keeps_all_values_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_grid(dir.path(), FOUR_BY_FOUR);
        let bbox = BBox::new(0.0, 4000.0, 0.0, 4000.0).unwrap();
        let g = read_temperature_grid(&p, &bbox).unwrap();
        assert_eq!(g.values.len(), 16);
        assert_eq!(g.values[..3], [1.0, 2.0, 3.0]);
        assert_eq!(g.values[11], NODATA);
        assert!(!g.is_valid(g.values[11]));
    }

    #[test]
    fn corner_crop_equals_manual_slice() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_grid(dir.path(), FOUR_BY_FOUR);
        let full = Grid::read_ascii(&p).unwrap();
        // south-east 2x2 corner: rows 2..4, cols 2..4
        let bbox = BBox::new(2000.0, 4000.0, 0.0, 2000.0).unwrap();
        let g = read_temperature_grid(&p, &bbox).unwrap();
        let mut manual = Vec::new();
        for row in 2..4 {
            for col in 2..4 {
                manual.push(full.get(col, row));
            }
        }
        assert_eq!(g.values, manual);
        assert_eq!(g.spec, GridSpec::from_origin(2000.0, 0.0, 2, 2, 1000.0).unwrap());
    }

    #[test]
    fn disjoint_bbox_is_empty_crop() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_grid(dir.path(), FOUR_BY_FOUR);
        let bbox = BBox::new(9000.0, 9500.0, 0.0, 100.0).unwrap();
        assert!(matches!(
            read_temperature_grid(&p, &bbox),
            Err(IngestError::Geo(GeoError::EmptyCrop))
        ));
    }

    #[test]
    fn implausible_temperature_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_grid(
            dir.path(),
            "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -999\n15 75\n",
        );
        let bbox = BBox::new(0.0, 2.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            read_temperature_grid(&p, &bbox),
            Err(IngestError::Implausible { col: 1, row: 0, .. })
        ));
    }

    #[test]
    fn ring_strips_closure() {
        let b = BuildingRecord::flat(
            "a",
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]],
            3.0,
        );
        assert_eq!(b.ring().len(), 3);
        assert_eq!(b.area(), 0.5);
        assert!(b.validate().is_ok());
        let degenerate = BuildingRecord::flat("d", vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]], 1.0);
        assert!(degenerate.validate().is_err());
    }
}
