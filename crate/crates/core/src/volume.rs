//! Coarse building-volume grids, Gaussian neighbourhood blur and Pearson
//! correlation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GridSpec;
use crate::grid::Grid;
use crate::voxel::HeightField;

pub const DEFAULT_SIGMA: f64 = 0.85;
pub const DEFAULT_RADIUS: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("fine grid {fine_w}x{fine_h} is not an integer refinement of coarse grid {coarse_w}x{coarse_h} over the same extent")]
    NotCommensurable {
        fine_w: usize,
        fine_h: usize,
        coarse_w: usize,
        coarse_h: usize,
    },
    #[error("sigma must be positive and finite (got {0})")]
    InvalidSigma(f64),
    #[error("correlation needs equal-length inputs (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 2 valid pairs (got {0})")]
    TooFewPairs(usize),
    #[error("correlation is undefined: zero variance")]
    ZeroVariance,
}

/// Sums `height * fine cell area` over each coarse cell.
pub fn aggregate_volume(field: &HeightField, coarse: &GridSpec) -> Result<Grid, VolumeError> {
    let fine = &field.spec;
    let err = || VolumeError::NotCommensurable {
        fine_w: fine.width,
        fine_h: fine.height,
        coarse_w: coarse.width,
        coarse_h: coarse.height,
    };
    if fine.width % coarse.width != 0 || fine.height % coarse.height != 0 {
        return Err(err());
    }
    let fx = fine.width / coarse.width;
    let fy = fine.height / coarse.height;
    let tol = 1e-6 * fine.cell_size_m;
    let same_extent = (fine.bbox.x_min - coarse.bbox.x_min).abs() <= tol
        && (fine.bbox.y_max - coarse.bbox.y_max).abs() <= tol
        && (fx as f64 * fine.cell_size_m - coarse.cell_size_m).abs() <= tol
        && (fy as f64 * fine.cell_size_m - coarse.cell_size_m).abs() <= tol;
    if !same_extent {
        return Err(err());
    }
    let area = fine.cell_area_m2();
    // Per coarse row: sum fine rows block by block, in a fixed order.
    let values: Vec<f64> = (0..coarse.height)
        .into_par_iter()
        .flat_map_iter(|crow| {
            let mut sums = vec![0.0f64; coarse.width];
            for frow in crow * fy..(crow + 1) * fy {
                let line = &field.values[frow * fine.width..(frow + 1) * fine.width];
                for (ccol, block) in line.chunks_exact(fx).enumerate() {
                    sums[ccol] += block.iter().map(|&h| f64::from(h)).sum::<f64>();
                }
            }
            sums.into_iter().map(move |s| s * area)
        })
        .collect();
    Ok(Grid::from_values(*coarse, values).expect("sized from coarse spec"))
}

/// Normalized, isotropic Gaussian weights on a `(2r+1) x (2r+1)` stencil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurKernel {
    pub sigma: f64,
    pub radius: usize,
    /// Row-major weights, `(2r+1)^2` entries.
    pub weights: Vec<f64>,
}

impl BlurKernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }
}

/// Weights proportional to `exp(-(dx² + dy²) / (2σ²))`, normalized to sum 1.
/// `sigma` is in coarse cells.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<BlurKernel, VolumeError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(VolumeError::InvalidSigma(sigma));
    }
    let r = radius as isize;
    let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            weights.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(BlurKernel { sigma, radius, weights })
}

/// 2D convolution with zero padding; output has the input's dimensions.
/// Nodata cells contribute zero and stay nodata in the output.
pub fn gaussian_blur(grid: &Grid, kernel: &BlurKernel) -> Grid {
    let spec = grid.spec;
    let (w, h) = (spec.width as isize, spec.height as isize);
    let r = kernel.radius as isize;
    let values: Vec<f64> = (0..spec.height)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..spec.width).map(move |col| {
                let own = grid.get(col, row);
                if !grid.is_valid(own) {
                    return grid.nodata;
                }
                let mut acc = 0.0;
                for dy in -r..=r {
                    let y = row as isize + dy;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for dx in -r..=r {
                        let x = col as isize + dx;
                        if x < 0 || x >= w {
                            continue;
                        }
                        let v = grid.get(x as usize, y as usize);
                        if grid.is_valid(v) {
                            acc += kernel.weight(dx, dy) * v;
                        }
                    }
                }
                acc
            })
        })
        .collect();
    Grid {
        spec,
        values,
        nodata: grid.nodata,
    }
}

/// Pearson correlation over pairs where both values are valid (finite and
/// not equal to the given nodata sentinel, if any).
pub fn pearson_correlation(a: &[f64], b: &[f64], nodata: Option<f64>) -> Result<f64, VolumeError> {
    if a.len() != b.len() {
        return Err(VolumeError::LengthMismatch(a.len(), b.len()));
    }
    let ok = |v: f64| v.is_finite() && Some(v) != nodata;
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| ok(**x) && ok(**y))
        .map(|(x, y)| (*x, *y))
        .collect();
    let n = pairs.len();
    if n < 2 {
        return Err(VolumeError::TooFewPairs(n));
    }
    let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let (da, db) = (x - mean_a, y - mean_b);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(VolumeError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Convenience over two grids with their nodata sentinel.
pub fn grid_correlation(a: &Grid, b: &Grid) -> Result<f64, VolumeError> {
    if a.values.len() != b.values.len() {
        return Err(VolumeError::LengthMismatch(a.values.len(), b.values.len()));
    }
    let pairs: (Vec<f64>, Vec<f64>) = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| a.is_valid(**x) && b.is_valid(**y))
        .map(|(x, y)| (*x, *y))
        .unzip();
    pearson_correlation(&pairs.0, &pairs.1, None)
}
