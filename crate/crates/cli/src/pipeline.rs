//! Stage runner. Each stage reads its inputs from the previous stage's
//! in-memory result when available, otherwise from the artifact on disk, so
//! a run can start at any stage.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use voxtherm_core::eval::{compare, difference_map, format_table, EvalReport};
use voxtherm_core::geo::{compute_bbox, BBox, GeoError, GridSpec};
use voxtherm_core::grid::Grid;
use voxtherm_core::ingest::{parse_building_list, parse_citygml_buildings, temperature_from_grid, write_building_list, BuildingRecord};
use voxtherm_core::model::{
    augment, fit_gradient_boosting, fit_random_forest, predict_grid, training_rows, Ensemble, Model, ModelKind,
    ModelMeta, TrainingSet,
};
use voxtherm_core::png::{export_png, Colormap};
use voxtherm_core::raster::{rasterize_footprints, FootprintMask};
use voxtherm_core::volume::{aggregate_volume, gaussian_blur, gaussian_kernel, BlurKernel};
use voxtherm_core::voxel::{voxelize_patch_method, HeightField, MatchReport, PatchConfig};

use crate::config::{CityConfig, PipelineConfig, Split};
use crate::error::{data, internal, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Rasterize,
    Voxelize,
    Aggregate,
    Train,
    Predict,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Rasterize,
        Stage::Voxelize,
        Stage::Aggregate,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Rasterize => "rasterize",
            Stage::Voxelize => "voxelize",
            Stage::Aggregate => "aggregate",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Artifact file names inside a city directory or the output root.
pub mod files {
    pub const BUILDINGS: &str = "buildings.json";
    pub const INGEST: &str = "ingest.json";
    pub const TRUTH: &str = "truth.asc";
    pub const MASK: &str = "mask.asc";
    pub const MASK_PNG: &str = "mask.png";
    pub const RASTER: &str = "raster.json";
    pub const HEIGHT: &str = "height.asc";
    pub const MATCH: &str = "match.json";
    pub const VOLUME: &str = "volume.asc";
    pub const VOLUME_BLUR: &str = "volume_blur.asc";
    pub const PREDICTION: &str = "prediction.asc";
    pub const PREDICTION_PNG: &str = "prediction.png";
    pub const DIFFERENCE: &str = "difference.asc";
    pub const DIFFERENCE_PNG: &str = "difference.png";
    pub const TRAINING: &str = "training.csv";
    pub const MODEL: &str = "model.json";
    pub const REPORT: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const STATUS: &str = "run_status.json";
}

#[derive(Default)]
struct CityState {
    buildings: Option<Vec<BuildingRecord>>,
    truth: Option<Grid>,
    mask: Option<FootprintMask>,
    height: Option<HeightField>,
    volume: Option<Grid>,
    blurred: Option<Grid>,
    prediction: Option<Grid>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CityReport {
    pub split: Split,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub stages: Vec<Stage>,
    pub matches: Vec<(String, MatchReport)>,
    pub reports: Vec<CityReport>,
    pub training_rows: usize,
}

impl RunSummary {
    /// Mean of the per-city MSE over test cities.
    pub fn test_mse(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .reports
            .iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| r.report.mse)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(internal)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn read_grid(path: &Path) -> Result<Grid, CliError> {
    Grid::read_ascii(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_grid(g: &Grid, path: &Path) -> Result<(), CliError> {
    g.write_ascii(path).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn write_png(g: &Grid, cmap: Colormap, path: &Path) -> Result<(), CliError> {
    export_png(g, cmap, 1, path)
        .map(|_| ())
        .map_err(|e| internal(format!("{}: {e}", path.display())))
}

/// Reads a building list (JSON) or CityGML file; returns the buildings and
/// how many CityGML buildings were skipped.
pub fn load_buildings(path: &Path) -> Result<(Vec<BuildingRecord>, usize), CliError> {
    let bytes = std::fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let err = |e: voxtherm_core::ingest::IngestError| data(format!("{}: {e}", path.display()));
    match ext.as_deref() {
        Some("gml") | Some("xml") => {
            let parsed = parse_citygml_buildings(&bytes).map_err(err)?;
            Ok((parsed.buildings, parsed.skipped.len()))
        }
        _ => Ok((parse_building_list(&bytes).map_err(err)?, 0)),
    }
}

/// Building extent snapped outward onto the temperature grid's lattice.
pub fn city_extent(buildings: &[BuildingRecord], temperature: &GridSpec) -> Result<BBox, CliError> {
    let t = temperature.bbox;
    let snapped = match compute_bbox(buildings) {
        Ok(b) => b.snap_outward(t.x_min, t.y_min, temperature.cell_size_m),
        Err(GeoError::EmptyInput) => return Ok(t),
        Err(e) => return Err(data(e)),
    };
    let tol = 1e-6 * temperature.cell_size_m;
    if snapped.x_min < t.x_min - tol
        || snapped.x_max > t.x_max + tol
        || snapped.y_min < t.y_min - tol
        || snapped.y_max > t.y_max + tol
    {
        return Err(data(format!(
            "buildings span [{}, {}] x [{}, {}], beyond the temperature grid [{}, {}] x [{}, {}]",
            snapped.x_min, snapped.x_max, snapped.y_min, snapped.y_max, t.x_min, t.x_max, t.y_min, t.y_max
        )));
    }
    Ok(snapped)
}

pub struct Pipeline<'a> {
    cfg: &'a PipelineConfig,
    cities: Vec<CityState>,
    model: Option<Model>,
    summary: RunSummary,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            cities: cfg.cities.iter().map(|_| CityState::default()).collect(),
            model: None,
            summary: RunSummary::default(),
        })
    }

    fn kernel(&self) -> Result<BlurKernel, CliError> {
        gaussian_kernel(self.cfg.blur.sigma, self.cfg.blur.radius).map_err(|e| CliError::Config(e.to_string()))
    }

    fn dir(&self, city: &CityConfig) -> Result<PathBuf, CliError> {
        let d = self.cfg.city_dir(&city.name);
        std::fs::create_dir_all(&d).map_err(|e| internal(format!("{}: {e}", d.display())))?;
        Ok(d)
    }

    /// Runs stages `from..=to` in order. On failure `run_status.json` names
    /// the failing stage and marks the outputs as partial.
    pub fn run(mut self, from: Stage, to: Stage) -> Result<RunSummary, CliError> {
        std::fs::create_dir_all(&self.cfg.out_dir)
            .map_err(|e| internal(format!("{}: {e}", self.cfg.out_dir.display())))?;
        let status_path = self.cfg.out_dir.join(files::STATUS);
        let mut done: Vec<Stage> = Vec::new();
        for stage in Stage::ALL.into_iter().filter(|s| *s >= from && *s <= to) {
            let t0 = Instant::now();
            if let Err(e) = self.stage(stage) {
                let e = e.in_stage(stage.name());
                write_json(
                    &status_path,
                    &json!({ "completed": done, "failed": stage, "error": e.to_string(), "partial": true }),
                )?;
                return Err(e);
            }
            log::info!("{} done in {:.2?}", stage.name(), t0.elapsed());
            done.push(stage);
        }
        write_json(
            &status_path,
            &json!({ "completed": done, "failed": null, "partial": false }),
        )?;
        self.summary.stages = done;
        Ok(self.summary)
    }

    fn stage(&mut self, stage: Stage) -> Result<(), CliError> {
        match stage {
            Stage::Ingest => (0..self.cities.len()).try_for_each(|i| self.ingest(i)),
            Stage::Rasterize => (0..self.cities.len()).try_for_each(|i| self.rasterize(i)),
            Stage::Voxelize => (0..self.cities.len()).try_for_each(|i| self.voxelize(i)),
            Stage::Aggregate => (0..self.cities.len()).try_for_each(|i| self.aggregate(i)),
            Stage::Train => self.train(),
            Stage::Predict => (0..self.cities.len()).try_for_each(|i| self.predict(i)),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn ingest(&mut self, i: usize) -> Result<(), CliError> {
        let city = &self.cfg.cities[i];
        let dir = self.dir(city)?;
        let (buildings, skipped) = load_buildings(&city.buildings)?;
        let full = read_grid(&city.temperature)?;
        let cs = full.spec.cell_size_m;
        if (cs - self.cfg.coarse_res_m).abs() > 1e-9 * cs {
            return Err(data(format!(
                "{}: cell size {cs} m differs from coarse_res_m {}",
                city.temperature.display(),
                self.cfg.coarse_res_m
            )));
        }
        let extent = city_extent(&buildings, &full.spec)?;
        let truth = temperature_from_grid(&full, &extent).map_err(|e| data(format!("{}: {e}", city.temperature.display())))?;
        std::fs::write(dir.join(files::BUILDINGS), write_building_list(&buildings)).map_err(internal)?;
        write_grid(&truth, &dir.join(files::TRUTH))?;
        write_json(
            &dir.join(files::INGEST),
            &json!({
                "city": city.name,
                "buildings": buildings.len(),
                "citygml_skipped": skipped,
                "extent": extent,
                "coarse_cols": truth.spec.width,
                "coarse_rows": truth.spec.height,
            }),
        )?;
        log::info!("{}: {} buildings, {}x{} coarse cells", city.name, buildings.len(), truth.spec.width, truth.spec.height);
        let st = &mut self.cities[i];
        st.buildings = Some(buildings);
        st.truth = Some(truth);
        Ok(())
    }

    fn buildings(&mut self, i: usize) -> Result<&Vec<BuildingRecord>, CliError> {
        if self.cities[i].buildings.is_none() {
            let p = self.cfg.city_dir(&self.cfg.cities[i].name).join(files::BUILDINGS);
            self.cities[i].buildings = Some(load_buildings(&p)?.0);
        }
        Ok(self.cities[i].buildings.as_ref().expect("just set"))
    }

    fn truth(&mut self, i: usize) -> Result<&Grid, CliError> {
        if self.cities[i].truth.is_none() {
            let p = self.cfg.city_dir(&self.cfg.cities[i].name).join(files::TRUTH);
            self.cities[i].truth = Some(read_grid(&p)?);
        }
        Ok(self.cities[i].truth.as_ref().expect("just set"))
    }

    fn fine_spec(&mut self, i: usize) -> Result<GridSpec, CliError> {
        let fine = self.cfg.fine_res_m;
        let bbox = self.truth(i)?.spec.bbox;
        GridSpec::from_bbox(bbox, fine).map_err(data)
    }

    fn rasterize(&mut self, i: usize) -> Result<(), CliError> {
        let spec = self.fine_spec(i)?;
        let dir = self.dir(&self.cfg.cities[i])?;
        let (mask, report) = rasterize_footprints(self.buildings(i)?, &spec);
        mask.write_ascii(dir.join(files::MASK)).map_err(internal)?;
        mask.write_png(dir.join(files::MASK_PNG)).map_err(internal)?;
        write_json(
            &dir.join(files::RASTER),
            &json!({
                "fine_cols": spec.width,
                "fine_rows": spec.height,
                "cell_size_m": spec.cell_size_m,
                "rasterized": report.rasterized,
                "burned_cells": mask.count(),
                "skipped": report.skipped.iter().map(|s| json!({"id": s.id, "reason": s.reason})).collect::<Vec<_>>(),
            }),
        )?;
        for s in &report.skipped {
            log::warn!("{}: skipped {}: {}", self.cfg.cities[i].name, s.id, s.reason);
        }
        self.cities[i].mask = Some(mask);
        Ok(())
    }

    fn voxelize(&mut self, i: usize) -> Result<(), CliError> {
        let spec = self.fine_spec(i)?;
        let dir = self.dir(&self.cfg.cities[i])?;
        let mask = match self.cities[i].mask.take() {
            Some(m) => m,
            None => FootprintMask::read_ascii(dir.join(files::MASK)).map_err(data)?,
        };
        let cfg = PatchConfig {
            patch_radius: self.cfg.patch_radius,
        };
        let (field, report) = voxelize_patch_method(self.buildings(i)?, &mask, &spec, cfg).map_err(data)?;
        field.write_ascii(dir.join(files::HEIGHT)).map_err(internal)?;
        write_json(
            &dir.join(files::MATCH),
            &json!({
                "total_buildings": report.total_buildings,
                "matched": report.matched,
                "match_rate": report.match_rate(),
                "unmatched_ids": report.unmatched_ids,
            }),
        )?;
        log::info!("{}: {}", self.cfg.cities[i].name, voxtherm_core::voxel::describe(&report));
        self.summary.matches.push((self.cfg.cities[i].name.clone(), report));
        self.cities[i].height = Some(field);
        Ok(())
    }

    fn aggregate(&mut self, i: usize) -> Result<(), CliError> {
        let dir = self.dir(&self.cfg.cities[i])?;
        let field = match self.cities[i].height.take() {
            Some(f) => f,
            None => HeightField::read_ascii(dir.join(files::HEIGHT)).map_err(data)?,
        };
        let coarse = self.truth(i)?.spec;
        let volume = aggregate_volume(&field, &coarse).map_err(data)?;
        let blurred = gaussian_blur(&volume, &self.kernel()?);
        write_grid(&volume, &dir.join(files::VOLUME))?;
        write_grid(&blurred, &dir.join(files::VOLUME_BLUR))?;
        self.cities[i].volume = Some(volume);
        self.cities[i].blurred = Some(blurred);
        Ok(())
    }

    fn volume(&mut self, i: usize) -> Result<&Grid, CliError> {
        if self.cities[i].volume.is_none() {
            let p = self.cfg.city_dir(&self.cfg.cities[i].name).join(files::VOLUME);
            self.cities[i].volume = Some(read_grid(&p)?);
        }
        Ok(self.cities[i].volume.as_ref().expect("just set"))
    }

    fn blurred(&mut self, i: usize) -> Result<&Grid, CliError> {
        if self.cities[i].blurred.is_none() {
            let p = self.cfg.city_dir(&self.cfg.cities[i].name).join(files::VOLUME_BLUR);
            self.cities[i].blurred = Some(read_grid(&p)?);
        }
        Ok(self.cities[i].blurred.as_ref().expect("just set"))
    }

    fn train(&mut self) -> Result<(), CliError> {
        let mut ts = TrainingSet::new();
        let mut train_names = Vec::new();
        for i in 0..self.cities.len() {
            let city = &self.cfg.cities[i];
            if city.split != Split::Train {
                continue;
            }
            let name = city.name.clone();
            let truth = self.truth(i)?.clone();
            let rows = training_rows(self.blurred(i)?, &truth, &name).map_err(data)?;
            ts.extend(rows).map_err(data)?;
            train_names.push(name);
        }
        if self.cfg.augment.n_samples > 0 {
            ts = augment(&ts, self.cfg.augment.n_samples, self.cfg.augment.noise_level, self.cfg.seed).map_err(data)?;
        }
        // Provenance check: the trainer must never see a test city.
        if let Some(bad) = ts.rows.iter().find(|r| !train_names.contains(&r.city)) {
            return Err(internal(format!("training set contains a row from non-training city {}", bad.city)));
        }
        if ts.is_empty() {
            return Err(data("no valid training cells in the training cities"));
        }
        let csv_path = self.cfg.out_dir.join(files::TRAINING);
        let f = std::fs::File::create(&csv_path).map_err(internal)?;
        ts.write_csv(std::io::BufWriter::new(f)).map_err(internal)?;
        self.summary.training_rows = ts.len();

        let ensemble = match self.cfg.model {
            ModelKind::Rf => Ensemble::Forest(fit_random_forest(&ts, &self.cfg.rf_params()).map_err(data)?),
            ModelKind::Gbt => Ensemble::Boosted(fit_gradient_boosting(&ts, &self.cfg.gb_params()).map_err(data)?),
        };
        let model = Model::new(
            ensemble,
            ModelMeta {
                training_cities: train_names,
                coarse_cell_size_m: Some(self.cfg.coarse_res_m),
                blur_sigma: Some(self.cfg.blur.sigma),
                blur_radius: Some(self.cfg.blur.radius),
            },
        );
        model.save(self.cfg.out_dir.join(files::MODEL)).map_err(internal)?;
        log::info!("trained {} with {} trees on {} rows", model.kind(), model.n_trees(), ts.len());
        self.model = Some(model);
        Ok(())
    }

    fn model(&mut self) -> Result<&Model, CliError> {
        if self.model.is_none() {
            let p = self.cfg.out_dir.join(files::MODEL);
            self.model = Some(Model::load(&p).map_err(|e| data(format!("{}: {e}", p.display())))?);
        }
        Ok(self.model.as_ref().expect("just set"))
    }

    fn predict(&mut self, i: usize) -> Result<(), CliError> {
        let dir = self.dir(&self.cfg.cities[i])?;
        let kernel = self.kernel()?;
        let volume = self.volume(i)?.clone();
        let pred = predict_grid(self.model()?, &volume, &kernel).map_err(data)?;
        write_grid(&pred, &dir.join(files::PREDICTION))?;
        write_png(&pred, Colormap::Sequential, &dir.join(files::PREDICTION_PNG))?;
        self.cities[i].prediction = Some(pred);
        Ok(())
    }

    fn evaluate(&mut self) -> Result<(), CliError> {
        let kind = self.model()?.kind().to_string();
        let mut reports = Vec::new();
        for i in 0..self.cities.len() {
            let city = self.cfg.cities[i].clone();
            let dir = self.dir(&city)?;
            let pred = match self.cities[i].prediction.take() {
                Some(p) => p,
                None => read_grid(&dir.join(files::PREDICTION))?,
            };
            let truth = self.truth(i)?;
            let mut report = compare(&pred, truth, &city.name, &kind).map_err(data)?;
            let diff = difference_map(&pred, truth).map_err(data)?;
            write_grid(&diff, &dir.join(files::DIFFERENCE))?;
            write_png(&diff, Colormap::Diverging, &dir.join(files::DIFFERENCE_PNG))?;
            report.difference_file = Some(format!("{}/{}", city.name, files::DIFFERENCE));
            reports.push(CityReport {
                split: city.split,
                report,
            });
        }
        write_json(&self.cfg.out_dir.join(files::REPORT), &json!({ "model": kind, "cities": reports }))?;
        let mut text = String::new();
        for split in [Split::Train, Split::Test] {
            let rs: Vec<EvalReport> = reports.iter().filter(|r| r.split == split).map(|r| r.report.clone()).collect();
            if !rs.is_empty() {
                text.push_str(if split == Split::Train { "[train]\n" } else { "[test]\n" });
                text.push_str(&format_table(&rs));
            }
        }
        std::fs::write(self.cfg.out_dir.join(files::REPORT_TXT), text).map_err(internal)?;
        self.summary.reports = reports;
        Ok(())
    }
}

/// Runs stages `from..=to` for `cfg`.
pub fn run(cfg: &PipelineConfig, from: Stage, to: Stage) -> Result<RunSummary, CliError> {
    Pipeline::new(cfg)?.run(from, to)
}
