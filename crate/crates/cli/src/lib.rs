//! Library side of the `voxtherm` command: configuration, the staged
//! pipeline, and the standalone commands.

pub mod config;
pub mod error;
pub mod pipeline;

use std::path::{Path, PathBuf};

use voxtherm_core::eval::{compare, difference_map, format_table, EvalReport};
use voxtherm_core::grid::Grid;
use voxtherm_core::model::{predict_grid, tree_seed, Model, ModelKind};
use voxtherm_core::png::{export_png, Colormap};
use voxtherm_core::synth::{generate_city, SynthParams, TempModel};
use voxtherm_core::volume::{gaussian_kernel, DEFAULT_RADIUS, DEFAULT_SIGMA};

pub use config::{CityConfig, Overrides, PipelineConfig, Split};
pub use error::CliError;
pub use pipeline::{run, RunSummary, Stage};

use error::{data, internal};

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub seed: u64,
    pub n_buildings: usize,
    pub extent_m: f64,
    pub fine_res_m: f64,
    pub coarse_res_m: f64,
    pub cities: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub citygml: bool,
    pub n_trees: usize,
    pub model: ModelKind,
    pub out_dir: PathBuf,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            n_buildings: 200,
            extent_m: 8000.0,
            fine_res_m: 1.0,
            coarse_res_m: 1000.0,
            cities: 3,
            origin_x: 0.0,
            origin_y: 0.0,
            citygml: false,
            n_trees: 200,
            model: ModelKind::Rf,
            out_dir: PathBuf::from("synth"),
        }
    }
}

pub const SYNTH_CONFIG: &str = "pipeline.toml";

/// Writes `cities` synthetic cities under `out_dir/city_<k>` plus a
/// ready-to-run `pipeline.toml`; the last city is the test split when
/// there is more than one.
pub fn synth(opts: &SynthOptions) -> Result<PathBuf, CliError> {
    if opts.cities == 0 {
        return Err(CliError::Config("--cities must be at least 1".into()));
    }
    if !(opts.extent_m > 0.0 && opts.coarse_res_m > 0.0) {
        return Err(CliError::Config("extent and coarse resolution must be positive".into()));
    }
    let mut cities = Vec::new();
    for k in 0..opts.cities {
        let name = format!("city_{k}");
        let params = SynthParams {
            seed: tree_seed(opts.seed, k as u64),
            n_buildings: opts.n_buildings,
            extent_m: opts.extent_m,
            origin_x: opts.origin_x,
            origin_y: opts.origin_y,
            coarse_res_m: opts.coarse_res_m,
            temp: TempModel::default(),
        };
        let city = generate_city(&params).map_err(|e| CliError::Config(e.to_string()))?;
        if city.buildings.len() < opts.n_buildings {
            log::warn!("{name}: placed {} of {} buildings", city.buildings.len(), opts.n_buildings);
        }
        let files = city.write(opts.out_dir.join(&name), opts.citygml).map_err(internal)?;
        let rel = |p: &Path| PathBuf::from(&name).join(p.file_name().expect("file name"));
        cities.push(CityConfig {
            name: name.clone(),
            buildings: rel(files.citygml.as_deref().unwrap_or(&files.buildings)),
            temperature: rel(&files.temperature),
            split: if opts.cities > 1 && k == opts.cities - 1 {
                Split::Test
            } else {
                Split::Train
            },
        });
    }
    let mut cfg = PipelineConfig {
        seed: opts.seed,
        out_dir: PathBuf::from("run"),
        fine_res_m: opts.fine_res_m,
        coarse_res_m: opts.coarse_res_m,
        model: opts.model,
        cities,
        ..PipelineConfig::default()
    };
    cfg.rf.n_trees = opts.n_trees;
    cfg.gbt.n_trees = opts.n_trees;
    cfg.gbt.learning_rate = 0.1;
    let path = opts.out_dir.join(SYNTH_CONFIG);
    std::fs::write(&path, cfg.to_toml()).map_err(|e| internal(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Standalone prediction from a volume grid file. Blur parameters default
/// to the ones recorded in the model.
pub fn predict_file(
    model_path: &Path,
    volume_path: &Path,
    sigma: Option<f64>,
    radius: Option<usize>,
) -> Result<Grid, CliError> {
    let model = Model::load(model_path).map_err(|e| data(format!("{}: {e}", model_path.display())))?;
    let volume = Grid::read_ascii(volume_path).map_err(|e| data(format!("{}: {e}", volume_path.display())))?;
    let sigma = sigma.or(model.meta.blur_sigma).unwrap_or(DEFAULT_SIGMA);
    let radius = radius.or(model.meta.blur_radius).unwrap_or(DEFAULT_RADIUS);
    let kernel = gaussian_kernel(sigma, radius).map_err(|e| CliError::Config(e.to_string()))?;
    predict_grid(&model, &volume, &kernel).map_err(data)
}

/// Standalone comparison of two grid files; optionally writes the
/// difference grid.
pub fn evaluate_files(prediction: &Path, truth: &Path, difference_out: Option<&Path>) -> Result<EvalReport, CliError> {
    let p = Grid::read_ascii(prediction).map_err(|e| data(format!("{}: {e}", prediction.display())))?;
    let t = Grid::read_ascii(truth).map_err(|e| data(format!("{}: {e}", truth.display())))?;
    let name = truth
        .parent()
        .and_then(|d| d.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or("city");
    let mut report = compare(&p, &t, name, "-").map_err(data)?;
    if let Some(out) = difference_out {
        let d = difference_map(&p, &t).map_err(data)?;
        d.write_ascii(out).map_err(internal)?;
        report.difference_file = Some(out.display().to_string());
    }
    Ok(report)
}

pub fn report_text(report: &EvalReport) -> String {
    format_table(std::slice::from_ref(report))
}

pub fn export_png_file(grid: &Path, cmap: Colormap, scale: u32, out: &Path) -> Result<PathBuf, CliError> {
    let g = Grid::read_ascii(grid).map_err(|e| data(format!("{}: {e}", grid.display())))?;
    export_png(&g, cmap, scale, out).map_err(|e| internal(format!("{}: {e}", out.display())))
}
