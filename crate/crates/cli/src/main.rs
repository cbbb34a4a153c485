//! `magfield` — dataset synthesis, training, evaluation, sweeps and slice
//! rendering for magnitude-only sound field estimation.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 numerical abort,
//! 3 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use magfield::baselines::NnInterpolator;
use magfield::checkpoint::load_model;
use magfield::dataset::FieldDataset;
use magfield::eval::{residual_stats, test_lsd, Metrics, Plane, SliceGrid, SlicePlane};
use magfield::experiment::{
    ensure_dataset, execute_run_seeded, ordering_verdicts, render_cell, sweep, write_json, Cell, ExperimentConfig,
    Method, Run,
};
use magfield::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "magfield", version, about = "Magnitude-only sound field estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize ground-truth datasets for every (frequency, M, seed) cell.
    Simulate(Common),
    /// Train one method on a dataset; writes model.json and train_log.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV written by `simulate`.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Compute test-split log-spectral distance for one method.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Trained model (required for prb_pinn and nf).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the full grid, resuming completed cells; writes metrics.csv.
    Sweep(Common),
    /// Render magnitude slices (PGM + CSV) for side-by-side comparison.
    Render {
        #[command(flatten)]
        common: Common,
        /// Render ground truth and nearest neighbour from this dataset
        /// instead of a sweep cell.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Extra trained models to render with --dataset; each is labelled
        /// by its parent directory name.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_parser = parse_plane)]
        plane: Option<Plane>,
        /// Offset of the slice along the normal axis, region-local metres.
        #[arg(long)]
        offset: Option<f64>,
        /// Pixels per side.
        #[arg(long)]
        resolution: Option<usize>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (JSON). Defaults to the full-size grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// prb_pinn, nf or nearest.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Reduced lattice, iteration budget and network.
    #[arg(long)]
    desk_scale: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_plane(s: &str) -> Result<Plane, String> {
    match s {
        "xy" => Ok(Plane::Xy),
        "xz" => Ok(Plane::Xz),
        "yz" => Ok(Plane::Yz),
        _ => Err(format!("unknown plane {s:?} (expected xy, xz or yz)")),
    }
}

impl Common {
    fn config(&self) -> magfield::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.desk_scale => ExperimentConfig::desk_scale(),
            None => ExperimentConfig::default(),
        };
        if self.desk_scale {
            cfg.apply_desk_scale();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(m) = self.method {
            cfg.methods = vec![m];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else if e.is_io() {
        EXIT_IO
    } else {
        EXIT_USAGE
    }
}

fn simulate(common: &Common) -> magfield::Result<u8> {
    let cfg = common.config()?;
    for cell in cfg.cells() {
        let ds = ensure_dataset(&cfg, &cell)?;
        println!(
            "{}: {} measurements, {} test points",
            cell.dir(&cfg.output_dir).join("dataset.csv").display(),
            ds.measurement.len(),
            ds.test.len()
        );
    }
    Ok(0)
}

fn train(common: &Common, dataset: &Path) -> magfield::Result<u8> {
    let cfg = common.config()?;
    let ds = FieldDataset::load(dataset)?;
    let run = Run::plain(common.method.unwrap_or(Method::PrbPinn));
    let seed = common.seed.unwrap_or(ds.seed);
    let out = &cfg.output_dir;
    let result = execute_run_seeded(&cfg, &ds, &run, seed, Some(out))?;
    write_json(&out.join("metrics.json"), &result.metrics)?;
    if let Some(last) = result.log.as_ref().and_then(|l| l.last()) {
        println!(
            "{}: iteration {} data {:.4} dB pde {:.4e}",
            run.label(),
            last.iteration,
            last.data_db,
            last.pde
        );
    }
    println!("{}", Metrics::CSV_HEADER);
    println!("{}", result.metrics.csv_row());
    Ok(0)
}

fn evaluate(common: &Common, dataset: &Path, checkpoint: Option<&Path>) -> magfield::Result<u8> {
    let cfg = common.config()?;
    let ds = FieldDataset::load(dataset)?;
    let method = common.method.unwrap_or(Method::PrbPinn);
    let metrics = match method {
        Method::Nearest => test_lsd(&NnInterpolator::from_dataset(&ds)?, &ds, method.name())?,
        Method::PrbPinn | Method::Nf => {
            let path = checkpoint.ok_or_else(|| Error::Config(format!("--checkpoint is required for {method}")))?;
            let model = load_model(path)?;
            let mut m = test_lsd(&model, &ds, method.name())?;
            let seed = common.seed.unwrap_or(ds.seed);
            m.pde_rms = Some(residual_stats(&model, ds.wavenumber, cfg.residual_probes, seed)?);
            m
        }
    };
    if let Some(out) = &common.out {
        write_json(&out.join("metrics.json"), &metrics)?;
        let table = out.join("metrics.csv");
        std::fs::write(&table, Metrics::table(std::slice::from_ref(&metrics))).map_err(|e| Error::io(&table, e))?;
    }
    println!("{}", Metrics::CSV_HEADER);
    println!("{}", metrics.csv_row());
    Ok(0)
}

fn run_sweep(common: &Common) -> magfield::Result<u8> {
    let cfg = common.config()?;
    let report = sweep(&cfg, |line| eprintln!("{line}"))?;
    println!("{}", cfg.output_dir.join("metrics.csv").display());
    for verdict in ordering_verdicts(&report.rows) {
        println!("{verdict}");
    }
    if report.failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("{} run(s) failed; see failures.csv", report.failures.len());
        Ok(EXIT_NUMERICAL)
    }
}

fn render(
    common: &Common,
    dataset: Option<&Path>,
    checkpoints: &[PathBuf],
    plane: Option<Plane>,
    offset: Option<f64>,
    resolution: Option<usize>,
) -> magfield::Result<u8> {
    // --out names the image directory here, not the sweep directory.
    let mut cfg = Common { out: None, ..common.clone() }.config()?;
    if let Some(p) = plane {
        cfg.render.plane = p;
    }
    if let Some(o) = offset {
        cfg.render.offset = o;
    }
    if let Some(r) = resolution {
        cfg.render.resolution = (r, r);
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.join("render"));
    let written: Vec<(String, SliceGrid)> = match dataset {
        Some(path) => {
            let ds = FieldDataset::load(path)?;
            let slice = SlicePlane {
                plane: cfg.render.plane,
                offset: cfg.render.offset,
            };
            let res = cfg.render.resolution;
            let mut grids = vec![
                ("ground_truth".to_string(), SliceGrid::evaluate(&ds.synthesizer()?, slice, res, None)?),
                (
                    "nearest".to_string(),
                    SliceGrid::evaluate(&NnInterpolator::from_dataset(&ds)?, slice, res, None)?,
                ),
            ];
            for ckpt in checkpoints {
                let label = ckpt
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into());
                grids.push((label, SliceGrid::evaluate(&load_model(ckpt)?, slice, res, None)?));
            }
            for (label, grid) in &grids {
                grid.write(&out.join(label), "slice", label)?;
            }
            grids
        }
        None => {
            let cell = Cell {
                frequency_hz: cfg.frequencies_hz[0],
                num_measurements: cfg.num_measurements[0],
                seed: cfg.seeds[0],
            };
            render_cell(&cfg, &cell, &out)?
        }
    };
    for (label, grid) in &written {
        println!(
            "{}: {:.2}..{:.2} dB",
            out.join(label).join("slice.pgm").display(),
            grid.range.0,
            grid.range.1
        );
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Train { common, dataset } => train(common, dataset),
        Command::Evaluate {
            common,
            dataset,
            checkpoint,
        } => evaluate(common, dataset, checkpoint.as_deref()),
        Command::Sweep(c) => run_sweep(c),
        Command::Render {
            common,
            dataset,
            checkpoint,
            plane,
            offset,
            resolution,
        } => render(common, dataset.as_deref(), checkpoint, *plane, *offset, *resolution),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
