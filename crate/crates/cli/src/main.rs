use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voxtherm_cli::{
    evaluate_files, export_png_file, predict_file, report_text, run, synth, CliError, Overrides, PipelineConfig,
    Stage, SynthOptions,
};
use voxtherm_core::model::ModelKind;
use voxtherm_core::png::Colormap;
use voxtherm_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "voxtherm", version, about = "Building volume to urban air temperature pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by the pipeline commands; they override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fine (voxel) cell size in meters.
    #[arg(long)]
    fine_res: Option<f64>,
    /// Coarse (temperature) cell size in meters.
    #[arg(long)]
    coarse_res: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long, value_parser = parse_kind)]
    model: Option<ModelKind>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

fn parse_cmap(s: &str) -> Result<Colormap, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate seeded synthetic cities and a pipeline.toml.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        n_buildings: usize,
        /// Side length of each square city, meters.
        #[arg(long, default_value_t = 8000.0)]
        extent: f64,
        #[arg(long, default_value_t = 1.0)]
        fine_res: f64,
        #[arg(long, default_value_t = 1000.0)]
        coarse_res: f64,
        #[arg(long, default_value_t = 3)]
        cities: usize,
        #[arg(long, default_value_t = 0.0)]
        origin_x: f64,
        #[arg(long, default_value_t = 0.0)]
        origin_y: f64,
        /// Also write CityGML and point the config at it.
        #[arg(long)]
        citygml: bool,
        /// Tree count written into the generated config.
        #[arg(long, default_value_t = 200)]
        n_trees: usize,
        #[arg(long, value_parser = parse_kind, default_value = "rf")]
        model: ModelKind,
        #[arg(long, default_value = "synth")]
        out_dir: PathBuf,
    },
    /// Run the whole pipeline, or a contiguous range of stages.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "ingest")]
        from: Stage,
        #[arg(long, value_enum, default_value = "evaluate")]
        to: Stage,
    },
    /// Read buildings and temperature grids, crop to the building extent.
    Ingest(Common),
    /// Burn footprints into the fine mask.
    Rasterize(Common),
    /// Build the height field from the mask with the patch method.
    Voxelize(Common),
    /// Sum heights into coarse volumes and blur them.
    Aggregate(Common),
    /// Fit the configured model on the training cities.
    Train(Common),
    /// Predict temperatures. With --model-file and --volume, works on
    /// single files instead of the configured cities.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(long, requires = "model_file")]
        volume: Option<PathBuf>,
        #[arg(long, requires = "volume")]
        out: Option<PathBuf>,
    },
    /// Score predictions. With --prediction and --truth, compares two files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "truth")]
        prediction: Option<PathBuf>,
        #[arg(long, requires = "prediction")]
        truth: Option<PathBuf>,
        #[arg(long)]
        difference: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Render an ASCII grid to PNG with a legend sidecar.
    ExportPng {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, value_parser = parse_cmap, default_value = "sequential")]
        colormap: Colormap,
        #[arg(long, default_value_t = 1)]
        scale: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP prediction service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        model_path: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 250_000)]
        max_grid_cells: usize,
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig, CliError> {
    let path = c.config.clone().unwrap_or_else(|| PathBuf::from("pipeline.toml"));
    let mut cfg = PipelineConfig::load(&path)?;
    cfg.apply(&Overrides {
        seed: c.seed,
        out_dir: c.out_dir.clone(),
        fine_res_m: c.fine_res,
        coarse_res_m: c.coarse_res,
        sigma: c.sigma,
        radius: c.radius,
        model: c.model,
    });
    Ok(cfg)
}

fn stage(c: &Common, s: Stage) -> Result<(), CliError> {
    let cfg = load_config(c)?;
    run(&cfg, s, s).map(|_| ())
}

fn execute(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Synth {
            seed,
            n_buildings,
            extent,
            fine_res,
            coarse_res,
            cities,
            origin_x,
            origin_y,
            citygml,
            n_trees,
            model,
            out_dir,
        } => {
            let path = synth(&SynthOptions {
                seed,
                n_buildings,
                extent_m: extent,
                fine_res_m: fine_res,
                coarse_res_m: coarse_res,
                cities,
                origin_x,
                origin_y,
                citygml,
                n_trees,
                model,
                out_dir,
            })?;
            println!("{}", path.display());
            Ok(())
        }
        Cmd::Run { common, from, to } => {
            if from > to {
                return Err(CliError::Config(format!("--from {} comes after --to {}", from.name(), to.name())));
            }
            let cfg = load_config(&common)?;
            let summary = run(&cfg, from, to)?;
            for (city, m) in &summary.matches {
                println!("{city}: {}", voxtherm_core::voxel::describe(m));
            }
            if let Some(mse) = summary.test_mse() {
                println!("test mse {mse:.6}");
            }
            Ok(())
        }
        Cmd::Ingest(c) => stage(&c, Stage::Ingest),
        Cmd::Rasterize(c) => stage(&c, Stage::Rasterize),
        Cmd::Voxelize(c) => stage(&c, Stage::Voxelize),
        Cmd::Aggregate(c) => stage(&c, Stage::Aggregate),
        Cmd::Train(c) => stage(&c, Stage::Train),
        Cmd::Predict {
            common,
            model_file,
            volume,
            out,
        } => match (model_file, volume) {
            (Some(m), Some(v)) => {
                let pred = predict_file(&m, &v, common.sigma, common.radius)?;
                match out {
                    Some(o) => pred.write_ascii(&o).map_err(|e| CliError::Internal(format!("{}: {e}", o.display()))),
                    None => {
                        let mut stdout = std::io::stdout().lock();
                        voxtherm_core::grid::write_ascii_grid(&mut stdout, &pred.spec, pred.nodata, pred.values.iter().copied())
                            .map_err(|e| CliError::Internal(e.to_string()))
                    }
                }
            }
            (None, None) => stage(&common, Stage::Predict),
            _ => Err(CliError::Config("--model-file and --volume go together".into())),
        },
        Cmd::Evaluate {
            common,
            prediction,
            truth,
            difference,
            json,
        } => match (prediction, truth) {
            (Some(p), Some(t)) => {
                let report = evaluate_files(&p, &t, difference.as_deref())?;
                if json {
                    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?);
                } else {
                    print!("{}", report_text(&report));
                }
                Ok(())
            }
            _ => stage(&common, Stage::Evaluate),
        },
        Cmd::ExportPng {
            grid,
            colormap,
            scale,
            out,
        } => {
            let legend = export_png_file(&grid, colormap, scale, &out)?;
            println!("{}\n{}", out.display(), legend.display());
            Ok(())
        }
        Cmd::Serve {
            port,
            host,
            model_path,
            data_dir,
            max_grid_cells,
            cors_origin,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::Config(format!("--host/--port: {e}")))?;
            let cfg = ServiceConfig {
                model_path,
                data_dir,
                max_grid_cells,
                cors_origin,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            rt.block_on(voxtherm_service::serve(cfg, addr)).map_err(CliError::Config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("voxtherm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
