//! Prediction-vs-truth metrics and per-city reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError};
use crate::model::{predict_grid, Model, ModelError};
use crate::volume::{pearson_correlation, BlurKernel};

pub const SSIM_WINDOW: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("no cell is valid in both grids")]
    NoValidCells,
    #[error("grid {cols}x{rows} is smaller than the {window}x{window} window")]
    TooSmall { cols: usize, rows: usize, window: usize },
    #[error("no {0}x{0} window is free of nodata")]
    NoValidWindow(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn both_valid<'a>(a: &'a Grid, b: &'a Grid) -> impl Iterator<Item = (f64, f64)> + 'a {
    a.values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| a.is_valid(**x) && b.is_valid(**y))
        .map(|(x, y)| (*x, *y))
}

/// Mean squared difference over cells valid in both grids.
pub fn mse(pred: &Grid, truth: &Grid) -> Result<f64, EvalError> {
    pred.check_same_dims(truth)?;
    let (sum, n) = both_valid(pred, truth).fold((0.0, 0usize), |(s, n), (p, t)| (s + (p - t) * (p - t), n + 1));
    if n == 0 {
        return Err(EvalError::NoValidCells);
    }
    Ok(sum / n as f64)
}

/// `pred - truth` per cell; nodata where either input is nodata.
pub fn difference_map(pred: &Grid, truth: &Grid) -> Result<Grid, EvalError> {
    pred.check_same_dims(truth)?;
    let nodata = pred.nodata;
    let values = pred
        .values
        .iter()
        .zip(&truth.values)
        .map(|(p, t)| {
            if pred.is_valid(*p) && truth.is_valid(*t) {
                p - t
            } else {
                nodata
            }
        })
        .collect();
    Ok(Grid {
        spec: pred.spec,
        values,
        nodata,
    })
}

/// Mean local SSIM over every `window`x`window` window that lies inside
/// the grid and holds no nodata. Uniform weights, population moments.
pub fn ssim(pred: &Grid, truth: &Grid, window: usize) -> Result<f64, EvalError> {
    pred.check_same_dims(truth)?;
    let (w, h) = (pred.spec.width, pred.spec.height);
    if window == 0 || w < window || h < window {
        return Err(EvalError::TooSmall {
            cols: w,
            rows: h,
            window,
        });
    }
    let (lo, hi) = both_valid(pred, truth).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (p, t)| {
        (lo.min(p).min(t), hi.max(p).max(t))
    });
    if lo > hi {
        return Err(EvalError::NoValidCells);
    }
    let mut range = hi - lo;
    if range == 0.0 {
        if pred.values == truth.values {
            return Ok(1.0);
        }
        range = 1.0;
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    // Summed-area tables of shifted values keep the moments well conditioned.
    let shift = lo;
    let stride = w + 1;
    let mut sat = vec![[0.0f64; 6]; stride * (h + 1)];
    for r in 0..h {
        let mut row_acc = [0.0f64; 6];
        for c in 0..w {
            let (p, t) = (pred.get(c, r), truth.get(c, r));
            let cell = if pred.is_valid(p) && truth.is_valid(t) {
                let (a, b) = (p - shift, t - shift);
                [a, b, a * a, b * b, a * b, 1.0]
            } else {
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
            };
            for k in 0..6 {
                row_acc[k] += cell[k];
            }
            let above = sat[r * stride + c + 1];
            let dst = &mut sat[(r + 1) * stride + c + 1];
            for k in 0..6 {
                dst[k] = above[k] + row_acc[k];
            }
        }
    }

    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - window {
        for c in 0..=w - window {
            let at = |rr: usize, cc: usize| sat[rr * stride + cc];
            let (a, b, cc_, d) = (at(r, c), at(r, c + window), at(r + window, c), at(r + window, c + window));
            let mut s = [0.0; 6];
            for k in 0..6 {
                s[k] = d[k] - b[k] - cc_[k] + a[k];
            }
            if s[5].round() as usize != window * window {
                continue;
            }
            let ma = s[0] / n;
            let mb = s[1] / n;
            let va = s[2] / n - ma * ma;
            let vb = s[3] / n - mb * mb;
            let cov = s[4] / n - ma * mb;
            let (mua, mub) = (ma + shift, mb + shift);
            let num = (2.0 * mua * mub + c1) * (2.0 * cov + c2);
            let den = (mua * mua + mub * mub + c1) * (va + vb + c2);
            total += num / den;
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::NoValidWindow(window));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub city: String,
    pub model: String,
    pub cells: usize,
    pub mse: f64,
    /// Absent when either grid has zero variance.
    pub pearson_r: Option<f64>,
    pub ssim: f64,
    /// Supplied externally; never computed here.
    pub lpips: Option<f64>,
    pub pred_min: f64,
    pub pred_max: f64,
    pub truth_min: f64,
    pub truth_max: f64,
    pub difference_file: Option<String>,
}

pub struct CityEvaluation {
    pub report: EvalReport,
    pub prediction: Grid,
    pub difference: Grid,
}

/// Blur, predict and score one city against its truth grid.
pub fn evaluate_city(
    model: &Model,
    volume: &Grid,
    truth: &Grid,
    kernel: &BlurKernel,
    city: &str,
) -> Result<CityEvaluation, EvalError> {
    volume.check_same_dims(truth)?;
    let prediction = predict_grid(model, volume, kernel)?;
    let report = compare(&prediction, truth, city, &model.kind().to_string())?;
    let difference = difference_map(&prediction, truth)?;
    Ok(CityEvaluation {
        report,
        prediction,
        difference,
    })
}

/// Metrics and ranges for an already computed prediction.
pub fn compare(prediction: &Grid, truth: &Grid, city: &str, model: &str) -> Result<EvalReport, EvalError> {
    let mse_v = mse(prediction, truth)?;
    let window = SSIM_WINDOW.min(prediction.spec.width).min(prediction.spec.height);
    let ssim_v = ssim(prediction, truth, window)?;
    let pairs: Vec<(f64, f64)> = both_valid(prediction, truth).collect();
    let (p, t): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let pearson_r = pearson_correlation(&p, &t, None).ok();
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
    };
    let (pred_min, pred_max) = range(&p);
    let (truth_min, truth_max) = range(&t);
    Ok(EvalReport {
        city: city.to_string(),
        model: model.to_string(),
        cells: pairs.len(),
        mse: mse_v,
        pearson_r,
        ssim: ssim_v,
        lpips: None,
        pred_min,
        pred_max,
        truth_min,
        truth_max,
        difference_file: None,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Fixed-width text table, one line per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<16} {:<5} {:>6} {:>10} {:>8} {:>8} {:>8} {:>17} {:>17}\n",
        "city", "model", "cells", "mse", "r", "ssim", "lpips", "pred [min,max]", "truth [min,max]"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<16} {:<5} {:>6} {:>10.5} {:>8} {:>8.4} {:>8} {:>17} {:>17}\n",
            r.city,
            r.model,
            r.cells,
            r.mse,
            opt(r.pearson_r, 4),
            r.ssim,
            opt(r.lpips, 4),
            format!("[{:.2},{:.2}]", r.pred_min, r.pred_max),
            format!("[{:.2},{:.2}]", r.truth_min, r.truth_max),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize, values: Vec<f64>) -> Grid {
        Grid::from_values(GridSpec::from_origin(0.0, 0.0, w, h, 1000.0).unwrap(), values).unwrap()
    }

    fn random_grid(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Grid {
        grid(w, h, (0..w * h).map(|_| rng.gen_range(10.0..20.0)).collect())
    }

    /// Direct per-window evaluation, no shared code with `ssim`.
    fn ssim_reference(a: &Grid, b: &Grid, win: usize) -> f64 {
        let all: Vec<f64> = a.values.iter().chain(&b.values).copied().collect();
        let l = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - all.iter().cloned().fold(f64::INFINITY, f64::min);
        let (c1, c2) = ((0.01 * l) * (0.01 * l), (0.03 * l) * (0.03 * l));
        let (w, h) = (a.spec.width, a.spec.height);
        let mut vals = Vec::new();
        for r0 in 0..=h - win {
            for c0 in 0..=w - win {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for r in r0..r0 + win {
                    for c in c0..c0 + win {
                        xs.push(a.get(c, r));
                        ys.push(b.get(c, r));
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
                let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                let cs = (2.0 * cxy + c2) / (vx + vy + c2);
                vals.push(lum * cs);
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn mse_examples() {
        let a = grid(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let b = grid(3, 3, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &a.map(|v| v + 1.0)).unwrap(), 1.0);
        // (0+1+4+9+16+25+36+49+64)/9
        assert!((mse(&a, &b).unwrap() - 204.0 / 9.0).abs() < 1e-12);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
    }

    #[test]
    fn mse_skips_nodata_and_errors_when_empty() {
        let a = grid(2, 1, vec![1.0, -999.0]);
        let b = grid(2, 1, vec![3.0, 5.0]);
        assert_eq!(mse(&a, &b).unwrap(), 4.0);
        let e = grid(2, 1, vec![-999.0, -999.0]);
        assert!(matches!(mse(&e, &b), Err(EvalError::NoValidCells)));
    }

    #[test]
    fn difference_is_antisymmetric_and_matches_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_grid(7, 6, &mut rng);
        let b = random_grid(7, 6, &mut rng);
        let d = difference_map(&a, &b).unwrap();
        let e = difference_map(&b, &a).unwrap();
        for i in 0..d.values.len() {
            assert_eq!(d.values[i], a.values[i] - b.values[i]);
            assert_eq!(d.values[i], -e.values[i]);
        }
        let m = d.values.iter().map(|v| v * v).sum::<f64>() / d.values.len() as f64;
        assert!((m - mse(&a, &b).unwrap()).abs() < 1e-12);
        let shifted = difference_map(&a.map(|v| v + 2.0), &a).unwrap();
        assert!(shifted.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn ssim_identity_symmetry_and_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = random_grid(8, 8, &mut rng);
            let b = random_grid(8, 8, &mut rng);
            assert_eq!(ssim(&a, &a, 5).unwrap(), 1.0);
            let s = ssim(&a, &b, 5).unwrap();
            assert!((s - ssim(&b, &a, 5).unwrap()).abs() < 1e-12);
            assert!((s - ssim_reference(&a, &b, 5)).abs() < 1e-9);
            assert!(s.abs() <= 1.0);
        }
    }

    #[test]
    fn ssim_edge_cases() {
        let c = grid(5, 5, vec![3.0; 25]);
        assert_eq!(ssim(&c, &c, 5).unwrap(), 1.0);
        let small = grid(4, 4, vec![1.0; 16]);
        assert!(matches!(ssim(&small, &small, 5), Err(EvalError::TooSmall { .. })));
    }

    #[test]
    fn ssim_skips_windows_with_nodata() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_grid(6, 5, &mut rng);
        let b = random_grid(6, 5, &mut rng);
        let mut a = a.clone();
        let mut b = b.clone();
        // pin the joint range inside the surviving window
        a.values[1] = 0.0;
        b.values[1] = 30.0;
        a.values[0] = -999.0; // kills only the left window
        let right_only = |g: &Grid| {
            let vals: Vec<f64> = (0..5).flat_map(|r| (1..6).map(move |c| (c, r))).map(|(c, r)| g.get(c, r)).collect();
            grid(5, 5, vals)
        };
        let got = ssim(&a, &b, 5).unwrap();
        let want = ssim(&right_only(&a), &right_only(&b), 5).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}
