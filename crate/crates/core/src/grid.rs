//! Dense `f64` rasters with a nodata sentinel, cropping, and ESRI ASCII grid
//! I/O.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{BBox, GeoError, GridSpec};

/// Sentinel for cells without valid data.
pub const NODATA: f64 = -999.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("ASCII grid format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("grid dimensions differ: {a_cols}x{a_rows} vs {b_cols}x{b_rows}")]
    DimensionMismatch {
        a_cols: usize,
        a_rows: usize,
        b_cols: usize,
        b_rows: usize,
    },
    #[error("value count {got} does not match {expected} cells")]
    ValueCount { expected: usize, got: usize },
}

/// A georeferenced raster of `f64` values in row-major order, row 0 north.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub nodata: f64,
}

impl Grid {
    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Self {
            spec,
            values: vec![value; spec.len()],
            nodata: NODATA,
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::ValueCount {
                expected: spec.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            spec,
            values,
            nodata: NODATA,
        })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.spec.index(col, row)]
    }

    #[inline]
    pub fn is_valid(&self, v: f64) -> bool {
        v != self.nodata && v.is_finite()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| self.is_valid(*v))
    }

    /// `(min, max)` over valid cells.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    pub fn check_same_dims(&self, other: &Grid) -> Result<(), GridError> {
        if self.spec.width != other.spec.width || self.spec.height != other.spec.height {
            return Err(GridError::DimensionMismatch {
                a_cols: self.spec.width,
                a_rows: self.spec.height,
                b_cols: other.spec.width,
                b_rows: other.spec.height,
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            spec: self.spec,
            values: self
                .values
                .iter()
                .map(|&v| if self.is_valid(v) { f(v) } else { self.nodata })
                .collect(),
            nodata: self.nodata,
        }
    }

    pub fn read_ascii(path: impl AsRef<Path>) -> Result<Self, GridError> {
        read_ascii_grid(BufReader::new(File::open(path)?))
    }

    pub fn write_ascii(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_ascii_grid(&mut w, &self.spec, self.nodata, self.values.iter().copied())?;
        w.flush()?;
        Ok(())
    }
}

/// Sub-grid of all cells whose centers fall inside `bbox` (inclusive).
/// The result keeps the original cell size and is georeferenced to the
/// selected cells.
pub fn crop_coarse_grid(grid: &Grid, bbox: &BBox) -> Result<Grid, GeoError> {
    let spec = &grid.spec;
    let (c0, c1) = spec
        .cols_with_centers_in(bbox.x_min, bbox.x_max)
        .ok_or(GeoError::EmptyCrop)?;
    let (r0, r1) = spec
        .rows_with_centers_in(bbox.y_min, bbox.y_max)
        .ok_or(GeoError::EmptyCrop)?;
    let width = c1 - c0 + 1;
    let height = r1 - r0 + 1;
    let cell = spec.cell_size_m;
    let x_min = spec.bbox.x_min + c0 as f64 * cell;
    let y_max = spec.bbox.y_max - r0 as f64 * cell;
    let out_spec = if width == spec.width && height == spec.height {
        *spec
    } else {
        GridSpec::new(
            BBox::new(x_min, x_min + width as f64 * cell, y_max - height as f64 * cell, y_max)?,
            width,
            height,
            cell,
        )?
    };
    let mut values = Vec::with_capacity(width * height);
    for row in r0..=r1 {
        let start = spec.index(c0, row);
        values.extend_from_slice(&grid.values[start..start + width]);
    }
    Ok(Grid {
        spec: out_spec,
        values,
        nodata: grid.nodata,
    })
}

/// Parsed ESRI ASCII grid header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsciiHeader {
    pub spec: GridSpec,
    pub nodata: f64,
}

fn format_err(line: usize, msg: impl Into<String>) -> GridError {
    GridError::Format {
        line,
        msg: msg.into(),
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<(AsciiHeader, usize), GridError> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut center = false;
    let mut cellsize = None;
    let nodata;
    let mut line_no = 0;
    let mut buf = String::new();
    // NODATA_value terminates the header.
    loop {
        buf.clear();
        let n = r.read_line(&mut buf)?;
        if n == 0 {
            return Err(format_err(line_no + 1, "unexpected end of file in header"));
        }
        line_no += 1;
        let mut parts = buf.split_whitespace();
        let key = parts.next().unwrap_or("").to_ascii_lowercase();
        let val = parts.next();
        let parse_f = |v: Option<&str>| -> Result<f64, GridError> {
            v.and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| format_err(line_no, format!("bad value for {key}")))
        };
        match key.as_str() {
            "ncols" => ncols = Some(parse_f(val)? as usize),
            "nrows" => nrows = Some(parse_f(val)? as usize),
            "xllcorner" => xll = Some(parse_f(val)?),
            "yllcorner" => yll = Some(parse_f(val)?),
            "xllcenter" => {
                xll = Some(parse_f(val)?);
                center = true;
            }
            "yllcenter" => {
                yll = Some(parse_f(val)?);
                center = true;
            }
            "cellsize" => cellsize = Some(parse_f(val)?),
            "nodata_value" => {
                nodata = parse_f(val)?;
                break;
            }
            "" => return Err(format_err(line_no, "blank line in header")),
            _ => {
                // First data row without a NODATA_value line.
                if key.parse::<f64>().is_ok() && ncols.is_some() && cellsize.is_some() {
                    return Err(format_err(line_no, "missing NODATA_value header line"));
                }
                return Err(format_err(line_no, format!("unknown header key {key:?}")));
            }
        }
    }
    let missing = |name: &str| format_err(line_no, format!("missing {name}"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = yll.ok_or_else(|| missing("yllcorner"))?;
    if center {
        xll -= cellsize / 2.0;
        yll -= cellsize / 2.0;
    }
    let spec = GridSpec::from_origin(xll, yll, ncols, nrows, cellsize)?;
    Ok((AsciiHeader { spec, nodata }, line_no))
}

/// Reads an ESRI ASCII grid; the body must hold exactly `ncols * nrows`
/// values.
pub fn read_ascii_grid<R: BufRead>(mut r: R) -> Result<Grid, GridError> {
    let (header, header_lines) = read_header(&mut r)?;
    let expected = header.spec.len();
    let mut values = Vec::with_capacity(expected);
    let mut body = String::new();
    r.read_to_string(&mut body)?;
    for (i, line) in body.lines().enumerate() {
        let line_no = header_lines + i + 1;
        for tok in line.split_ascii_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| format_err(line_no, format!("not a number: {tok:?}")))?;
            if values.len() == expected {
                return Err(format_err(line_no, format!("more than {expected} values in body")));
            }
            values.push(v);
        }
    }
    if values.len() != expected {
        return Err(format_err(
            header_lines + body.lines().count(),
            format!("body has {} values, header declares {expected}", values.len()),
        ));
    }
    Ok(Grid {
        spec: header.spec,
        values,
        nodata: header.nodata,
    })
}

pub fn write_ascii_header<W: Write>(w: &mut W, spec: &GridSpec, nodata: f64) -> std::io::Result<()> {
    writeln!(w, "ncols {}", spec.width)?;
    writeln!(w, "nrows {}", spec.height)?;
    writeln!(w, "xllcorner {}", spec.bbox.x_min)?;
    writeln!(w, "yllcorner {}", spec.bbox.y_min)?;
    writeln!(w, "cellsize {}", spec.cell_size_m)?;
    writeln!(w, "NODATA_value {}", nodata)
}

/// Writes header and body. Values use the shortest representation that
/// round-trips, so reading the file back is lossless.
pub fn write_ascii_grid<W: Write>(
    w: &mut W,
    spec: &GridSpec,
    nodata: f64,
    values: impl IntoIterator<Item = f64>,
) -> std::io::Result<()> {
    write_ascii_header(w, spec, nodata)?;
    let mut line = String::with_capacity(spec.width * 4);
    let mut it = values.into_iter();
    for _ in 0..spec.height {
        line.clear();
        for col in 0..spec.width {
            let v = it.next().unwrap_or(nodata);
            if col > 0 {
                line.push(' ');
            }
            if v == 0.0 {
                line.push('0');
            } else {
                let _ = write!(line, "{v}");
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}
