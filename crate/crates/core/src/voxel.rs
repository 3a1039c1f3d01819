//! 2.5D height fields built by vertex-patch intersection with a footprint
//! mask, plus the brute-force point-in-polygon voxelizer used as an oracle.
//!
//! The patch method never visits the full grid: per building it maps the
//! footprint vertices to voxel indices, probes a small patch around each one
//! for burned mask cells, and flood-fills the matched footprint inside the
//! building's own bounding box. Cost grows with vertex count and footprint
//! area, not with `width * height`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{world_to_voxel, GridSpec, VoxelIndex};
use crate::grid::{write_ascii_grid, Grid, GridError, NODATA};
use crate::ingest::BuildingRecord;
use crate::raster::{point_in_polygon, FootprintMask};

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("mask grid does not match the target grid spec")]
    SpecMismatch,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("VTK format error: {0}")]
    Vtk(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Per-cell extruded building height in meters (0 = no building).
///
/// The implied voxel set is `{(col, row, k) : k * cell_size < height}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub spec: GridSpec,
    pub values: Vec<f32>,
    /// Optional owner layer: index into `owner_ids`, `u32::MAX` for none.
    pub owner: Option<Vec<u32>>,
    pub owner_ids: Vec<String>,
}

pub const NO_OWNER: u32 = u32::MAX;

impl HeightField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
            owner: None,
            owner_ids: Vec::new(),
        }
    }

    fn with_owner(spec: GridSpec, owner_ids: Vec<String>) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
            owner: Some(vec![NO_OWNER; spec.len()]),
            owner_ids,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[self.spec.index(col, row)]
    }

    /// Max-height claim; ties keep the lower building index so the owner
    /// layer does not depend on processing order either.
    #[inline]
    fn claim(&mut self, idx: usize, height: f32, who: u32) {
        let cur = self.values[idx];
        match &mut self.owner {
            Some(owner) => {
                if height > cur || (height == cur && height > 0.0 && who < owner[idx]) {
                    self.values[idx] = height;
                    owner[idx] = who;
                }
            }
            None => {
                if height > cur {
                    self.values[idx] = height;
                }
            }
        }
    }

    pub fn write_ascii(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_ascii_grid(&mut w, &self.spec, NODATA, self.values.iter().map(|&v| f64::from(v)))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_ascii(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let g = Grid::read_ascii(path)?;
        Ok(Self::from_grid(&g))
    }

    /// Nodata and negative cells become 0.
    pub fn from_grid(g: &Grid) -> Self {
        Self {
            spec: g.spec,
            values: g
                .values
                .iter()
                .map(|&v| if g.is_valid(v) && v > 0.0 { v as f32 } else { 0.0 })
                .collect(),
            owner: None,
            owner_ids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    /// Patch half-width in cells; 1 gives a 3x3 patch.
    pub patch_radius: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { patch_radius: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub total_buildings: usize,
    pub matched: usize,
    pub unmatched_ids: Vec<String>,
}

impl MatchReport {
    pub fn match_rate(&self) -> f64 {
        if self.total_buildings == 0 {
            return 1.0;
        }
        self.matched as f64 / self.total_buildings as f64
    }
}

/// Outcome of the vertex-matching phase for one building.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingMatch {
    /// Assigned height: the maximum over matching vertices.
    pub height: f64,
    /// Burned mask cells found inside the matching vertices' patches.
    pub seeds: Vec<VoxelIndex>,
}

/// Vertex mapping and patch matching for every building. Returns `None` for
/// unmatched buildings.
pub fn match_buildings(
    buildings: &[BuildingRecord],
    mask: &FootprintMask,
    spec: &GridSpec,
    cfg: PatchConfig,
) -> Result<Vec<Option<BuildingMatch>>, VoxelError> {
    if !mask.spec.same_geometry(spec) {
        return Err(VoxelError::SpecMismatch);
    }
    Ok(buildings
        .par_iter()
        .map(|b| match_building(b, mask, spec, cfg.patch_radius))
        .collect())
}

fn match_building(b: &BuildingRecord, mask: &FootprintMask, spec: &GridSpec, r: usize) -> Option<BuildingMatch> {
    let mut height: Option<f64> = None;
    let mut seeds = Vec::new();
    for (v, &h) in b.ring().iter().zip(b.ring_heights()) {
        let Ok(idx) = world_to_voxel(v[0], v[1], spec) else {
            continue;
        };
        let c0 = idx.col.saturating_sub(r);
        let c1 = (idx.col + r).min(spec.width - 1);
        let r0 = idx.row.saturating_sub(r);
        let r1 = (idx.row + r).min(spec.height - 1);
        let mut hit = false;
        for row in r0..=r1 {
            for col in c0..=c1 {
                if mask.get(col, row) == 1 {
                    hit = true;
                    seeds.push(VoxelIndex { col, row });
                }
            }
        }
        if hit {
            height = Some(height.map_or(h, |m| m.max(h)));
        }
    }
    height.map(|height| BuildingMatch { height, seeds })
}

/// Mask cells 4-connected to `seeds` through burned cells, restricted to the
/// cells whose centers fall in the building's bounding box.
fn fill_building(b: &BuildingRecord, m: &BuildingMatch, mask: &FootprintMask, spec: &GridSpec) -> Vec<usize> {
    let Some(bb) = b.bbox() else { return Vec::new() };
    let (Some((c0, c1)), Some((r0, r1))) = (
        spec.cols_with_centers_in(bb.x_min, bb.x_max),
        spec.rows_with_centers_in(bb.y_min, bb.y_max),
    ) else {
        return Vec::new();
    };
    let w = c1 - c0 + 1;
    let h = r1 - r0 + 1;
    let mut visited = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut cells = Vec::new();
    let local = |col: usize, row: usize| (row - r0) * w + (col - c0);
    for s in &m.seeds {
        if (c0..=c1).contains(&s.col) && (r0..=r1).contains(&s.row) && !visited[local(s.col, s.row)] {
            visited[local(s.col, s.row)] = true;
            stack.push((s.col, s.row));
        }
    }
    while let Some((col, row)) = stack.pop() {
        cells.push(spec.index(col, row));
        let mut visit = |nc: usize, nr: usize, stack: &mut Vec<(usize, usize)>| {
            let li = local(nc, nr);
            if !visited[li] && mask.get(nc, nr) == 1 {
                visited[li] = true;
                stack.push((nc, nr));
            }
        };
        if col > c0 {
            visit(col - 1, row, &mut stack);
        }
        if col < c1 {
            visit(col + 1, row, &mut stack);
        }
        if row > r0 {
            visit(col, row - 1, &mut stack);
        }
        if row < r1 {
            visit(col, row + 1, &mut stack);
        }
    }
    cells.sort_unstable();
    cells
}

/// Builds the height field with the patch-intersection method.
pub fn voxelize_patch_method(
    buildings: &[BuildingRecord],
    mask: &FootprintMask,
    spec: &GridSpec,
    cfg: PatchConfig,
) -> Result<(HeightField, MatchReport), VoxelError> {
    let matches = match_buildings(buildings, mask, spec, cfg)?;
    let fills: Vec<Option<(f32, Vec<usize>)>> = buildings
        .par_iter()
        .zip(matches.par_iter())
        .map(|(b, m)| m.as_ref().map(|m| (m.height as f32, fill_building(b, m, mask, spec))))
        .collect();

    let mut field = HeightField::with_owner(*spec, buildings.iter().map(|b| b.id.clone()).collect());
    let mut report = MatchReport {
        total_buildings: buildings.len(),
        ..Default::default()
    };
    for (i, (b, fill)) in buildings.iter().zip(fills).enumerate() {
        match fill {
            Some((height, cells)) => {
                report.matched += 1;
                for idx in cells {
                    field.claim(idx, height, i as u32);
                }
            }
            None => report.unmatched_ids.push(b.id.clone()),
        }
    }
    Ok((field, report))
}

/// Brute-force voxelizer: every cell center is tested against every
/// building. No mask, no patches.
pub fn voxelize_oracle(buildings: &[BuildingRecord], spec: &GridSpec) -> HeightField {
    let prepared: Vec<(crate::geo::BBox, &[[f64; 2]], f32)> = buildings
        .iter()
        .filter_map(|b| Some((b.bbox()?, b.ring(), b.height() as f32)))
        .collect();
    let mut field = HeightField::zeros(*spec);
    field
        .values
        .par_chunks_mut(spec.width)
        .enumerate()
        .for_each(|(row, out)| {
            for (col, cell) in out.iter_mut().enumerate() {
                let (x, y) = spec.cell_center(col, row);
                for (bb, ring, h) in &prepared {
                    if *h > *cell && bb.contains(x, y) && point_in_polygon([x, y], ring) {
                        *cell = *h;
                    }
                }
            }
        });
    field
}

/// Total volume in m³ and, when the owner layer exists, the per-building
/// split (which partitions the total).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSummary {
    pub total_m3: f64,
    pub per_owner: Option<BTreeMap<String, f64>>,
}

pub fn building_volume(field: &HeightField) -> VolumeSummary {
    let area = field.spec.cell_area_m2();
    let total_m3 = field.values.iter().map(|&h| f64::from(h)).sum::<f64>() * area;
    let per_owner = field.owner.as_ref().map(|owner| {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for (&h, &o) in field.values.iter().zip(owner) {
            if o != NO_OWNER && h > 0.0 {
                *sums.entry(field.owner_ids[o as usize].clone()).or_default() += f64::from(h) * area;
            }
        }
        sums
    });
    VolumeSummary { total_m3, per_owner }
}

/// Number of occupied voxel layers for a column of the given height.
#[inline]
fn layers(height: f32, cell: f64) -> usize {
    if height <= 0.0 {
        0
    } else {
        (f64::from(height) / cell).ceil() as usize
    }
}

/// Writes the extruded voxel set as a legacy VTK structured-points file.
/// Point (i, j, k) is voxel (col = i, row = height-1-j, layer k), so the
/// VTK origin is the south-west corner at ground level.
pub fn export_voxels(field: &HeightField, path: impl AsRef<Path>) -> Result<usize, VoxelError> {
    let spec = &field.spec;
    let cell = spec.cell_size_m;
    let nz = field.values.iter().map(|&h| layers(h, cell)).max().unwrap_or(0);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "voxtherm height field extrusion")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", spec.width, spec.height, nz)?;
    writeln!(
        w,
        "ORIGIN {} {} {}",
        spec.bbox.x_min + cell / 2.0,
        spec.bbox.y_min + cell / 2.0,
        cell / 2.0
    )?;
    writeln!(w, "SPACING {cell} {cell} {cell}")?;
    writeln!(w, "POINT_DATA {}", spec.width * spec.height * nz)?;
    writeln!(w, "SCALARS occupied unsigned_char 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    let mut occupied = 0;
    let mut line = String::with_capacity(spec.width * 2);
    for k in 0..nz {
        for j in 0..spec.height {
            let row = spec.height - 1 - j;
            line.clear();
            for col in 0..spec.width {
                let on = k < layers(field.get(col, row), cell);
                occupied += usize::from(on);
                if col > 0 {
                    line.push(' ');
                }
                line.push(if on { '1' } else { '0' });
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
    }
    w.flush()?;
    Ok(occupied)
}

/// Reads a file written by [`export_voxels`]. Heights come back quantized to
/// whole layers: `ceil(h / cell) * cell`.
pub fn import_voxels(path: impl AsRef<Path>) -> Result<HeightField, VoxelError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut dims = None;
    let mut origin = None;
    let mut spacing = None;
    let mut lines = reader.lines();
    for line in lines.by_ref() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("DIMENSIONS") => {
                let v: Vec<usize> = parts.filter_map(|s| s.parse().ok()).collect();
                dims = Some((v.first().copied(), v.get(1).copied(), v.get(2).copied()));
            }
            Some("ORIGIN") => origin = Some(parts.filter_map(|s| s.parse::<f64>().ok()).collect::<Vec<_>>()),
            Some("SPACING") => spacing = parts.next().and_then(|s| s.parse::<f64>().ok()),
            Some("LOOKUP_TABLE") => break,
            _ => {}
        }
    }
    let bad = |m: &str| VoxelError::Vtk(m.to_string());
    let (Some(nx), Some(ny), Some(nz)) = dims.ok_or_else(|| bad("missing DIMENSIONS"))? else {
        return Err(bad("DIMENSIONS needs three values"));
    };
    let origin = origin.filter(|o| o.len() == 3).ok_or_else(|| bad("missing ORIGIN"))?;
    let cell = spacing.ok_or_else(|| bad("missing SPACING"))?;
    let spec = GridSpec::from_origin(origin[0] - cell / 2.0, origin[1] - cell / 2.0, nx, ny, cell)
        .map_err(|e| VoxelError::Vtk(e.to_string()))?;
    let mut counts = vec![0u32; nx * ny];
    let mut n = 0usize;
    for line in lines {
        for tok in line?.split_whitespace() {
            if n >= nx * ny * nz {
                return Err(bad("more scalars than DIMENSIONS declares"));
            }
            let ij = n % (nx * ny);
            let (i, j) = (ij % nx, ij / nx);
            match tok {
                "0" => {}
                "1" => counts[spec.index(i, ny - 1 - j)] += 1,
                other => return Err(VoxelError::Vtk(format!("bad scalar {other:?}"))),
            }
            n += 1;
        }
    }
    if n != nx * ny * nz {
        return Err(VoxelError::Vtk(format!("expected {} scalars, found {n}", nx * ny * nz)));
    }
    let mut field = HeightField::zeros(spec);
    for (v, c) in field.values.iter_mut().zip(counts) {
        *v = (f64::from(c) * cell) as f32;
    }
    Ok(field)
}

/// Human-readable summary line for logs.
pub fn describe(report: &MatchReport) -> String {
    format!(
        "{} of {} buildings matched ({:.1}%)",
        report.matched,
        report.total_buildings,
        100.0 * report.match_rate()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::rasterize_footprints;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::from_origin(0.0, 0.0, w, h, 1.0).unwrap()
    }

    fn rect(id: &str, x: f64, y: f64, w: f64, h: f64, heights: Vec<f64>) -> BuildingRecord {
        BuildingRecord {
            id: id.into(),
            footprint: vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]],
            vertex_heights: heights,
        }
    }

    fn run(buildings: &[BuildingRecord], s: &GridSpec, r: usize) -> (HeightField, MatchReport) {
        let (mask, _) = rasterize_footprints(buildings, s);
        voxelize_patch_method(buildings, &mask, s, PatchConfig { patch_radius: r }).unwrap()
    }

    #[test]
    fn square_takes_highest_matching_vertex() {
        let s = spec(30, 30);
        let b = rect("sq", 10.0, 10.0, 10.0, 10.0, vec![3.0, 10.0, 7.0, 5.0]);
        let (field, report) = run(&[b], &s, 1);
        assert_eq!(report.matched, 1);
        let cells: Vec<f32> = field.values.iter().copied().filter(|&v| v > 0.0).collect();
        assert_eq!(cells.len(), 100);
        assert!(cells.iter().all(|&v| v == 10.0));
    }

    #[test]
    fn sliver_without_cells_is_unmatched() {
        let s = spec(20, 20);
        // 0.4 m wide strip between cell centers 5.5 and 6.5.
        let b = rect("sliver", 5.55, 3.0, 0.4, 10.0, vec![4.0; 4]);
        let (field, report) = run(&[b], &s, 1);
        assert_eq!(report.matched, 0);
        assert_eq!(report.unmatched_ids, vec!["sliver".to_string()]);
        assert!(field.values.iter().all(|&v| v == 0.0));
        assert_eq!(report.matched + report.unmatched_ids.len(), report.total_buildings);
    }

    #[test]
    fn spec_mismatch_rejected() {
        let (mask, _) = rasterize_footprints(&[], &spec(10, 10));
        assert!(matches!(
            voxelize_patch_method(&[], &mask, &spec(10, 11), PatchConfig::default()),
            Err(VoxelError::SpecMismatch)
        ));
    }

    #[test]
    fn oracle_basics() {
        let s = spec(30, 30);
        assert!(voxelize_oracle(&[], &s).values.iter().all(|&v| v == 0.0));
        let b = rect("box", 2.0, 3.0, 10.0, 10.0, vec![12.0; 4]);
        let f = voxelize_oracle(&[b], &s);
        assert_eq!(f.values.iter().filter(|&&v| v == 12.0).count(), 100);
        assert_eq!(f.values.iter().filter(|&&v| v > 0.0).count(), 100);
    }

    #[test]
    fn oracle_overlap_takes_max() {
        let s = spec(20, 20);
        let a = rect("a", 0.0, 0.0, 6.0, 6.0, vec![5.0; 4]);
        let b = rect("b", 4.0, 4.0, 6.0, 6.0, vec![9.0; 4]);
        let f = voxelize_oracle(&[a.clone(), b.clone()], &s);
        // Cell centers x, y in {4.5, 5.5} lie in both squares: 4 cells.
        let mut expect = vec![0.0f32; s.len()];
        for row in 0..20 {
            for col in 0..20 {
                let (x, y) = s.cell_center(col, row);
                let in_a = x < 6.0 && y < 6.0;
                let in_b = (4.0..10.0).contains(&x) && (4.0..10.0).contains(&y);
                expect[s.index(col, row)] = if in_b { 9.0 } else if in_a { 5.0 } else { 0.0 };
            }
        }
        assert_eq!(f.values, expect);
        assert_eq!(f.values.iter().filter(|&&v| v == 9.0).count(), 36);
        let g = voxelize_oracle(&[b, a], &s);
        assert_eq!(f.values, g.values);
    }

    #[test]
    fn patch_method_matches_oracle_for_separated_buildings() {
        let s = spec(60, 60);
        let bs = vec![
            rect("a", 2.0, 2.0, 10.0, 8.0, vec![6.0; 4]),
            rect("b", 20.0, 5.0, 4.0, 15.0, vec![11.5; 4]),
            BuildingRecord::flat("c", vec![[35.0, 35.0], [50.0, 38.0], [44.0, 52.0]], 20.0),
        ];
        let (field, report) = run(&bs, &s, 1);
        assert_eq!(report.matched, 3);
        assert_eq!(field.values, voxelize_oracle(&bs, &s).values);
    }

    #[test]
    fn overlap_is_permutation_invariant() {
        let s = spec(30, 30);
        let a = rect("a", 2.0, 2.0, 10.0, 10.0, vec![5.0; 4]);
        let b = rect("b", 8.0, 8.0, 10.0, 10.0, vec![9.0; 4]);
        let c = rect("c", 5.0, 14.0, 6.0, 6.0, vec![7.0; 4]);
        let (f1, _) = run(&[a.clone(), b.clone(), c.clone()], &s, 1);
        let (f2, _) = run(&[c, b, a], &s, 1);
        assert_eq!(f1.values, f2.values);
    }

    #[test]
    fn larger_patches_never_match_fewer() {
        let s = spec(40, 40);
        let bs = vec![
            rect("a", 5.55, 3.0, 0.4, 10.0, vec![4.0; 4]),
            rect("b", 10.0, 10.0, 5.0, 5.0, vec![4.0; 4]),
            BuildingRecord::flat("thin", vec![[20.0, 20.0], [30.0, 20.6], [20.0, 20.9]], 3.0),
        ];
        let counts: Vec<usize> = (0..4).map(|r| run(&bs, &s, r).1.matched).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }

    #[test]
    fn matched_volume_is_fill_count_times_height() {
        let s = spec(40, 40);
        let b = BuildingRecord::flat("p", vec![[3.2, 4.7], [25.1, 6.3], [18.8, 30.2], [6.6, 22.0]], 8.0);
        let (field, _) = run(std::slice::from_ref(&b), &s, 1);
        let (mask, _) = rasterize_footprints(std::slice::from_ref(&b), &s);
        let v = building_volume(&field);
        assert_eq!(v.total_m3, mask.count() as f64 * 8.0);
        assert_eq!(v.per_owner.unwrap()["p"], v.total_m3);
    }

    #[test]
    fn volume_examples() {
        let s = spec(20, 20);
        assert_eq!(building_volume(&HeightField::zeros(s)).total_m3, 0.0);
        let f = voxelize_oracle(&[rect("b", 0.0, 0.0, 10.0, 10.0, vec![12.0; 4])], &s);
        assert_eq!(building_volume(&f).total_m3, 1200.0);
    }

    #[test]
    fn per_owner_partitions_total() {
        let s = spec(30, 30);
        let a = rect("a", 2.0, 2.0, 10.0, 10.0, vec![5.0; 4]);
        let b = rect("b", 8.0, 8.0, 10.0, 10.0, vec![9.0; 4]);
        let (field, _) = run(&[a, b], &s, 1);
        let v = building_volume(&field);
        let parts: f64 = v.per_owner.unwrap().values().sum();
        assert_eq!(parts, v.total_m3);
    }

    #[test]
    fn vtk_export_counts_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(6, 5);
        let p = dir.path().join("v.vtk");
        assert_eq!(export_voxels(&HeightField::zeros(s), &p).unwrap(), 0);

        let f = voxelize_oracle(&[rect("b", 1.0, 1.0, 2.0, 2.0, vec![3.0; 4])], &s);
        assert_eq!(export_voxels(&f, &p).unwrap(), 12);
        let back = import_voxels(&p).unwrap();
        assert_eq!(back.values, f.values);
        assert!(back.spec.same_geometry(&s));
    }
}
