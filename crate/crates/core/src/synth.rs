//! Seeded synthetic cities with recomputable ground truth.
//!
//! Buildings are integer-aligned rectangles that never straddle a coarse
//! cell, so the per-cell true volume is exact bookkeeping: width * depth *
//! max vertex height, summed per coarse cell.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geo::{BBox, GeoError, GridSpec};
use crate::grid::{Grid, GridError};
use crate::ingest::{write_building_list, write_citygml_solids, BuildingRecord};
use crate::volume::{gaussian_blur, gaussian_kernel, DEFAULT_RADIUS, DEFAULT_SIGMA};

/// Temperature = base + gain * blur(volume) + noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempModel {
    pub base_c: f64,
    /// °C per m³ of blurred volume.
    pub gain: f64,
    /// Noise std as a fraction of the signal std.
    pub noise_frac: f64,
    pub sigma: f64,
    pub radius: usize,
}

impl Default for TempModel {
    fn default() -> Self {
        Self {
            base_c: 14.0,
            gain: 2e-5,
            noise_frac: 0.1,
            sigma: DEFAULT_SIGMA,
            radius: DEFAULT_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_buildings: usize,
    pub extent_m: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub coarse_res_m: f64,
    pub temp: TempModel,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            n_buildings: 200,
            extent_m: 8000.0,
            origin_x: 0.0,
            origin_y: 0.0,
            coarse_res_m: 1000.0,
            temp: TempModel::default(),
        }
    }
}

pub struct SynthCity {
    pub params: SynthParams,
    pub buildings: Vec<BuildingRecord>,
    /// Exact per-coarse-cell building volume (m³).
    pub true_volume: Grid,
    pub temperature: Grid,
}

const MIN_SIDE: i64 = 8;
const MAX_SIDE: i64 = 48;
const GAP_M: i64 = 3;
/// Distance kept from every coarse-cell edge.
const CELL_MARGIN: i64 = 2;

#[derive(Clone, Copy)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn clear_of(&self, o: &Rect) -> bool {
        self.x1 + GAP_M <= o.x0 || o.x1 + GAP_M <= self.x0 || self.y1 + GAP_M <= o.y0 || o.y1 + GAP_M <= self.y0
    }
}

pub fn generate_city(params: &SynthParams) -> Result<SynthCity, GeoError> {
    let coarse = params.coarse_res_m;
    let spec = GridSpec::from_bbox(
        BBox::new(
            params.origin_x,
            params.origin_x + params.extent_m,
            params.origin_y,
            params.origin_y + params.extent_m,
        )?,
        coarse,
    )?;
    let cell = coarse as i64;
    let extent = params.extent_m as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let center = Normal::new(extent as f64 / 2.0, extent as f64 / 6.0).expect("positive std");

    let mut per_cell: Vec<Vec<Rect>> = vec![Vec::new(); spec.len()];
    let mut buildings = Vec::with_capacity(params.n_buildings);
    let mut volume = vec![0.0f64; spec.len()];
    let max_attempts = params.n_buildings.saturating_mul(200).max(1000);
    let mut attempts = 0;
    while buildings.len() < params.n_buildings && attempts < max_attempts {
        attempts += 1;
        let w = rng.gen_range(MIN_SIDE..=MAX_SIDE);
        let h = rng.gen_range(MIN_SIDE..=MAX_SIDE);
        let cx = center.sample(&mut rng).round() as i64;
        let cy = center.sample(&mut rng).round() as i64;
        let x0 = cx - w / 2;
        let y0 = cy - h / 2;
        let r = Rect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        };
        if r.x0 < 0 || r.y0 < 0 || r.x1 > extent || r.y1 > extent {
            continue;
        }
        let (ccol, crow_from_bottom) = (r.x0 / cell, r.y0 / cell);
        let (cx0, cy0) = (ccol * cell, crow_from_bottom * cell);
        if r.x0 < cx0 + CELL_MARGIN
            || r.x1 > cx0 + cell - CELL_MARGIN
            || r.y0 < cy0 + CELL_MARGIN
            || r.y1 > cy0 + cell - CELL_MARGIN
        {
            continue;
        }
        let row = spec.height - 1 - crow_from_bottom as usize;
        let idx = spec.index(ccol as usize, row);
        if !per_cell[idx].iter().all(|o| r.clear_of(o)) {
            continue;
        }
        per_cell[idx].push(r);

        // Taller toward the center; heights are multiples of 0.5 m.
        let d = (((cx - extent / 2).pow(2) + (cy - extent / 2).pow(2)) as f64).sqrt();
        let tall = 6.0 + 40.0 * (-(d / (extent as f64 / 4.0)).powi(2)).exp();
        let height = ((3.0 + rng.gen::<f64>() * tall) * 2.0).round() / 2.0;
        // A fifth of the roofs slope: two vertices sit lower.
        let low = if rng.gen_bool(0.2) {
            ((height * 0.6) * 2.0).round() / 2.0
        } else {
            height
        };
        let (ox, oy) = (params.origin_x, params.origin_y);
        let footprint = vec![
            [ox + r.x0 as f64, oy + r.y0 as f64],
            [ox + r.x1 as f64, oy + r.y0 as f64],
            [ox + r.x1 as f64, oy + r.y1 as f64],
            [ox + r.x0 as f64, oy + r.y1 as f64],
        ];
        buildings.push(BuildingRecord {
            id: format!("b{:05}", buildings.len()),
            footprint,
            vertex_heights: vec![low, low, height, height],
        });
        volume[idx] += (w * h) as f64 * height;
    }

    let true_volume = Grid::from_values(spec, volume).expect("sized from spec");
    let temperature = temperature_field(&true_volume, &params.temp, params.seed);
    Ok(SynthCity {
        params: *params,
        buildings,
        true_volume,
        temperature,
    })
}

/// `n` convex flat-roof buildings, one per slot of a square lattice over
/// `[origin, origin + extent]²`, so no two overlap. Each is a polygon with
/// 5 to 10 vertices on a rotated ellipse; area is at least `min_area`.
/// A slot that cannot fit `min_area` after a bounded number of draws is
/// left empty, so fewer than `n` buildings may come back.
const CONVEX_ATTEMPTS: usize = 200;

pub fn convex_buildings(seed: u64, n: usize, origin: [f64; 2], extent_m: f64, min_area: f64) -> Vec<BuildingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_side = (n as f64).sqrt().ceil().max(1.0) as usize;
    let slot = extent_m / per_side as f64;
    let r_max = 0.4 * slot;
    let r_min = 3.5f64.min(r_max);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (sx, sy) = ((k % per_side) as f64, (k / per_side) as f64);
        let cx = origin[0] + (sx + 0.5) * slot;
        let cy = origin[1] + (sy + 0.5) * slot;
        for _ in 0..CONVEX_ATTEMPTS {
            let a = rng.gen_range(r_min..=r_max);
            let b = rng.gen_range((a / 2.0).max(r_min)..=a);
            let rot = rng.gen_range(0.0..std::f64::consts::PI);
            let m = rng.gen_range(5..=10);
            // Jittered, strictly increasing angles keep the ring convex.
            let step = std::f64::consts::TAU / m as f64;
            let ring: Vec<[f64; 2]> = (0..m)
                .map(|i| {
                    let t = (i as f64 + rng.gen_range(-0.3..0.3)) * step;
                    let (ex, ey) = (a * t.cos(), b * t.sin());
                    [cx + ex * rot.cos() - ey * rot.sin(), cy + ex * rot.sin() + ey * rot.cos()]
                })
                .collect();
            let height = f64::from(rng.gen_range(6u32..=120)) / 2.0;
            let bld = BuildingRecord::flat(format!("c{k:04}"), ring, height);
            if bld.area() >= min_area {
                out.push(bld);
                break;
            }
        }
    }
    out
}

/// Applies the affine temperature model plus seeded noise to a volume grid.
pub fn temperature_field(volume: &Grid, t: &TempModel, seed: u64) -> Grid {
    let kernel = gaussian_kernel(t.sigma, t.radius).expect("valid synth kernel");
    let blurred = gaussian_blur(volume, &kernel);
    let signal: Vec<f64> = blurred.values.iter().map(|v| t.gain * v).collect();
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let std = (signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let noise_std = t.noise_frac * std;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7E3D_0000_0000_0001);
    let values = signal
        .iter()
        .map(|s| {
            let noise = if noise_std > 0.0 {
                Normal::new(0.0, noise_std).expect("positive std").sample(&mut rng)
            } else {
                0.0
            };
            t.base_c + s + noise
        })
        .collect();
    Grid {
        spec: volume.spec,
        values,
        nodata: volume.nodata,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSummary {
    pub params: SynthParams,
    pub buildings: usize,
    pub total_volume_m3: f64,
    pub temperature_variance: f64,
}

pub struct CityFiles {
    pub buildings: PathBuf,
    pub citygml: Option<PathBuf>,
    pub temperature: PathBuf,
    pub true_volume: PathBuf,
    pub summary: PathBuf,
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

impl SynthCity {
    pub fn summary(&self) -> SynthSummary {
        SynthSummary {
            params: self.params,
            buildings: self.buildings.len(),
            total_volume_m3: self.true_volume.values.iter().sum(),
            temperature_variance: population_variance(&self.temperature.values),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>, citygml: bool) -> Result<CityFiles, GridError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let files = CityFiles {
            buildings: dir.join("buildings.json"),
            citygml: citygml.then(|| dir.join("buildings.gml")),
            temperature: dir.join("temperature.asc"),
            true_volume: dir.join("true_volume.asc"),
            summary: dir.join("synth.json"),
        };
        std::fs::write(&files.buildings, write_building_list(&self.buildings))?;
        if let Some(p) = &files.citygml {
            std::fs::write(p, write_citygml_solids(&self.buildings))?;
        }
        self.temperature.write_ascii(&files.temperature)?;
        self.true_volume.write_ascii(&files.true_volume)?;
        let mut s = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        s.push('\n');
        std::fs::write(&files.summary, s)?;
        Ok(files)
    }
}
