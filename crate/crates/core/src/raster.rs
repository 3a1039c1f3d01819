//! Footprint rasterization onto the fine grid and point-in-polygon testing.
//!
//! A cell is burned (set to 1) iff its center lies inside or on the boundary
//! of a footprint ring under the even-odd rule. The scanline rasterizer and
//! [`point_in_polygon`] share the edge-crossing and on-segment predicates, so
//! the mask equals a per-cell `point_in_polygon` scan exactly.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::GridSpec;
use crate::grid::{write_ascii_grid, GridError, NODATA};
use crate::ingest::BuildingRecord;

/// Binary footprint raster: 1 where a building covers the cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintMask {
    pub spec: GridSpec,
    pub values: Vec<u8>,
}

impl FootprintMask {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0; spec.len()],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.values[self.spec.index(col, row)]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn write_ascii(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_ascii_grid(&mut w, &self.spec, NODATA, self.values.iter().map(|&v| f64::from(v)))?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn read_ascii(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let g = crate::grid::Grid::read_ascii(path)?;
        let values = g
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                v if v == 0.0 || v == g.nodata => Ok(0),
                v if v == 1.0 => Ok(1),
                v => Err(GridError::Format {
                    line: 7 + i / g.spec.width,
                    msg: format!("mask value {v} is not 0 or 1"),
                }),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { spec: g.spec, values })
    }

    /// Grayscale PNG: 0 black, 1 white.
    pub fn write_png(&self, path: impl AsRef<Path>) -> image::ImageResult<()> {
        let pixels = self.values.iter().map(|&v| if v == 1 { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.spec.width as u32, self.spec.height as u32, pixels)
            .expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
    }
}

/// A building that could not be rasterized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterIssue {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RasterReport {
    pub rasterized: usize,
    pub skipped: Vec<RasterIssue>,
}

/// x coordinate where edge `a -> b` crosses the horizontal line at `y`, if
/// the edge straddles it under the half-open rule `(a.y > y) != (b.y > y)`.
#[inline]
fn edge_crossing_x(a: [f64; 2], b: [f64; 2], y: f64) -> Option<f64> {
    if (a[1] > y) != (b[1] > y) {
        Some(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
    } else {
        None
    }
}

/// Exact on-segment test (collinear and within the segment's bounds).
#[inline]
fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    cross == 0.0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn signed_area2(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum()
}

fn strip_closure(ring: &[[f64; 2]]) -> &[[f64; 2]] {
    if ring.len() > 1 && ring.first() == ring.last() {
        &ring[..ring.len() - 1]
    } else {
        ring
    }
}

/// Even-odd point-in-polygon with boundary points counted as inside.
/// Rings with fewer than 3 vertices or zero area contain nothing.
pub fn point_in_polygon(p: [f64; 2], ring: &[[f64; 2]]) -> bool {
    let ring = strip_closure(ring);
    let n = ring.len();
    if n < 3 || signed_area2(ring) == 0.0 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if let Some(x) = edge_crossing_x(a, b, p[1]) {
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Half-open span `[col_start, col_end)` of burned cells in one row.
type Span = (usize, usize, usize);

/// Burned cell spans `(row, col_start, col_end)` for one ring. Work is
/// bounded by the ring's bounding box, never the full grid.
pub fn ring_spans(ring: &[[f64; 2]], spec: &GridSpec) -> Vec<Span> {
    let ring = strip_closure(ring);
    let n = ring.len();
    if n < 3 || signed_area2(ring) == 0.0 {
        return Vec::new();
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in ring {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (Some((r0, r1)), Some((c_lo, c_hi))) = (spec.rows_with_centers_in(y0, y1), spec.cols_with_centers_in(x0, x1))
    else {
        return Vec::new();
    };
    let cell = spec.cell_size_m;
    let xmin = spec.bbox.x_min;
    let mut spans = Vec::new();
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    let mut on_edge: Vec<usize> = Vec::new();
    let width = c_hi - c_lo + 1;
    let mut row_buf = vec![false; width];
    for row in r0..=r1 {
        let (_, cy) = spec.cell_center(c_lo, row);
        xs.clear();
        on_edge.clear();
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            if let Some(x) = edge_crossing_x(a, b, cy) {
                xs.push(x);
            }
            // Centers lying exactly on this edge.
            if cy >= a[1].min(b[1]) && cy <= a[1].max(b[1]) {
                let (ex0, ex1) = if a[1] == b[1] {
                    (a[0].min(b[0]), a[0].max(b[0]))
                } else {
                    let x = a[0] + (cy - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    (x, x)
                };
                let lo = (((ex0 - xmin) / cell - 0.5).floor() as i64 - 1).max(c_lo as i64);
                let hi = (((ex1 - xmin) / cell - 0.5).ceil() as i64 + 1).min(c_hi as i64);
                for col in lo..=hi {
                    let col = col as usize;
                    let (cx, _) = spec.cell_center(col, row);
                    if on_segment([cx, cy], a, b) {
                        on_edge.push(col);
                    }
                }
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        row_buf.iter_mut().for_each(|v| *v = false);
        // A center is inside iff an odd number of crossings lie strictly to
        // its right, i.e. it sits strictly inside some pair (xs[2k], xs[2k+1]].
        for pair in xs.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            if let Some((lo, hi)) = spec.cols_with_centers_in(a, b) {
                let lo = lo.max(c_lo);
                let hi = hi.min(c_hi);
                for col in lo..=hi {
                    let (cx, _) = spec.cell_center(col, row);
                    if cx >= a && cx < b {
                        row_buf[col - c_lo] = true;
                    }
                }
            }
        }
        for &col in &on_edge {
            row_buf[col - c_lo] = true;
        }
        let mut col = 0;
        while col < width {
            if row_buf[col] {
                let start = col;
                while col < width && row_buf[col] {
                    col += 1;
                }
                spans.push((row, c_lo + start, c_lo + col));
            } else {
                col += 1;
            }
        }
    }
    spans
}

/// Burns every footprint into a fresh mask. Buildings with invalid geometry
/// or vertices outside the grid extent are skipped and reported.
pub fn rasterize_footprints(buildings: &[BuildingRecord], spec: &GridSpec) -> (FootprintMask, RasterReport) {
    let per_building: Vec<Result<Vec<Span>, RasterIssue>> = buildings
        .par_iter()
        .map(|b| {
            if let Err(reason) = b.validate() {
                return Err(RasterIssue { id: b.id.clone(), reason });
            }
            if let Some(p) = b.ring().iter().find(|p| !spec.bbox.contains(p[0], p[1])) {
                return Err(RasterIssue {
                    id: b.id.clone(),
                    reason: format!("vertex ({}, {}) outside grid extent", p[0], p[1]),
                });
            }
            Ok(ring_spans(b.ring(), spec))
        })
        .collect();
    let mut mask = FootprintMask::zeros(*spec);
    let mut report = RasterReport::default();
    for r in per_building {
        match r {
            Ok(spans) => {
                report.rasterized += 1;
                for (row, c0, c1) in spans {
                    let base = row * spec.width;
                    mask.values[base + c0..base + c1].fill(1);
                }
            }
            Err(issue) => report.skipped.push(issue),
        }
    }
    (mask, report)
}
