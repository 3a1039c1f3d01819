use serde::{Deserialize, Serialize};
use voxtherm_core::{Grid, GridSpec, NODATA};

/// Wire format for grids; same meaning as the ASCII grid files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridJson {
    pub ncols: usize,
    pub nrows: usize,
    pub cellsize_m: f64,
    /// Row-major, first row is the northernmost.
    pub values: Vec<f64>,
    #[serde(default = "default_nodata")]
    pub nodata: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xllcorner: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yllcorner: Option<f64>,
}

fn default_nodata() -> f64 {
    NODATA
}

impl GridJson {
    pub fn cells(&self) -> usize {
        self.ncols.saturating_mul(self.nrows)
    }

    /// Checks shape and that every value is nodata or finite and >= 0.
    /// The message names the offending field.
    pub fn validate_volume(&self, field: &str) -> Result<(), String> {
        self.validate_shape(field)?;
        for (i, v) in self.values.iter().enumerate() {
            if *v != self.nodata && !(v.is_finite() && *v >= 0.0) {
                return Err(format!("{field}.values[{i}]: must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn validate_shape(&self, field: &str) -> Result<(), String> {
        if self.ncols == 0 || self.nrows == 0 {
            return Err(format!("{field}.ncols/nrows: must be positive"));
        }
        if !(self.cellsize_m.is_finite() && self.cellsize_m > 0.0) {
            return Err(format!("{field}.cellsize_m: must be positive"));
        }
        if self.values.len() != self.cells() {
            return Err(format!(
                "{field}.values: expected {} values ({}x{}), got {}",
                self.cells(),
                self.ncols,
                self.nrows,
                self.values.len()
            ));
        }
        Ok(())
    }

    pub fn to_grid(&self) -> Result<Grid, String> {
        let spec = GridSpec::from_origin(
            self.xllcorner.unwrap_or(0.0),
            self.yllcorner.unwrap_or(0.0),
            self.ncols,
            self.nrows,
            self.cellsize_m,
        )
        .map_err(|e| e.to_string())?;
        Ok(Grid {
            spec,
            values: self.values.clone(),
            nodata: self.nodata,
        })
    }

    pub fn from_grid(g: &Grid) -> Self {
        Self {
            ncols: g.spec.width,
            nrows: g.spec.height,
            cellsize_m: g.spec.cell_size_m,
            values: g.values.clone(),
            nodata: g.nodata,
            xllcorner: Some(g.spec.bbox.x_min),
            yllcorner: Some(g.spec.bbox.y_min),
        }
    }
}
