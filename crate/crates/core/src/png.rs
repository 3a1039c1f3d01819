//! Grid to PNG rendering with a small set of fixed colormaps.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgba, RgbaImage};

use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Dark purple to yellow.
    Sequential,
    /// Blue, white at zero, red. Symmetric about 0.
    Diverging,
}

impl std::str::FromStr for Colormap {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" | "seq" | "viridis" => Ok(Colormap::Sequential),
            "diverging" | "div" | "rdbu" => Ok(Colormap::Diverging),
            other => Err(format!("unknown colormap {other:?} (sequential|diverging)")),
        }
    }
}

const SEQUENTIAL: [[u8; 3]; 5] = [
    [0x44, 0x01, 0x54],
    [0x3b, 0x52, 0x8b],
    [0x21, 0x91, 0x8c],
    [0x5e, 0xc9, 0x62],
    [0xfd, 0xe7, 0x25],
];

const DIVERGING: [[u8; 3]; 5] = [
    [0x21, 0x66, 0xac],
    [0x92, 0xc5, 0xde],
    [0xf7, 0xf7, 0xf7],
    [0xf4, 0xa5, 0x82],
    [0xb2, 0x18, 0x2b],
];

fn lerp_stops(stops: &[[u8; 3]], t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let pos = t * (stops.len() - 1) as f64;
    let i = (pos.floor() as usize).min(stops.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for k in 0..3 {
        let a = f64::from(stops[i][k]);
        let b = f64::from(stops[i + 1][k]);
        out[k] = (a + (b - a) * f).round() as u8;
    }
    out
}

/// Value range used for color scaling. Diverging maps use [-m, m].
pub fn color_range(grid: &Grid, cmap: Colormap) -> (f64, f64) {
    let (lo, hi) = grid.range().unwrap_or((0.0, 0.0));
    match cmap {
        Colormap::Sequential => (lo, hi),
        Colormap::Diverging => {
            let m = lo.abs().max(hi.abs());
            (-m, m)
        }
    }
}

pub fn color_for(v: f64, lo: f64, hi: f64, cmap: Colormap) -> [u8; 3] {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    match cmap {
        Colormap::Sequential => lerp_stops(&SEQUENTIAL, t),
        Colormap::Diverging => lerp_stops(&DIVERGING, t),
    }
}

/// Renders one pixel block of `scale`x`scale` per cell; nodata is transparent.
pub fn render(grid: &Grid, cmap: Colormap, scale: u32) -> RgbaImage {
    let scale = scale.max(1);
    let (lo, hi) = color_range(grid, cmap);
    let (w, h) = (grid.spec.width as u32, grid.spec.height as u32);
    ImageBuffer::from_fn(w * scale, h * scale, |x, y| {
        let v = grid.get((x / scale) as usize, (y / scale) as usize);
        if grid.is_valid(v) {
            let [r, g, b] = color_for(v, lo, hi, cmap);
            Rgba([r, g, b, 255])
        } else {
            Rgba([0, 0, 0, 0])
        }
    })
}

/// Writes the PNG and a `<name>.legend.txt` sidecar; returns the sidecar path.
pub fn export_png(grid: &Grid, cmap: Colormap, scale: u32, out: impl AsRef<Path>) -> Result<PathBuf, image::ImageError> {
    let out = out.as_ref();
    render(grid, cmap, scale).save_with_format(out, image::ImageFormat::Png)?;
    let (lo, hi) = color_range(grid, cmap);
    let (dmin, dmax) = grid.range().unwrap_or((f64::NAN, f64::NAN));
    let name = match cmap {
        Colormap::Sequential => "sequential",
        Colormap::Diverging => "diverging",
    };
    let legend = format!(
        "colormap {name}\ncolor_min {lo}\ncolor_max {hi}\ndata_min {dmin}\ndata_max {dmax}\nnodata transparent\n"
    );
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".legend.txt");
    let sidecar = PathBuf::from(sidecar);
    std::fs::write(&sidecar, legend)?;
    Ok(sidecar)
}
