//! Experiment configuration and sweep orchestration.
//!
//! Output layout: `out/<freq>Hz/M<count>/seed<k>/` holds `dataset.csv` and
//! its sidecar; each method writes into a subdirectory named by its label
//! (`metrics.json`, plus `model.json` and `train_log.csv` for networks, or
//! `nearest.json`). A cell whose `metrics.json` exists is not recomputed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{nf_baseline_config, NnInterpolator};
use crate::checkpoint::{load_model, save_model};
use crate::dataset::{make_dataset, FieldDataset};
use crate::error::{Error, Result};
use crate::eval::{residual_stats, test_lsd, Metrics, Plane, SliceGrid, SlicePlane};
use crate::model::{NetworkShape, PrbModel};
use crate::room::{RoomSpec, SourceSpec, DEFAULT_MAX_ORDER};
use crate::train::{train_with_checkpoints, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PrbPinn,
    Nf,
    Nearest,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::PrbPinn, Method::Nf, Method::Nearest];

    pub fn name(self) -> &'static str {
        match self {
            Method::PrbPinn => "prb_pinn",
            Method::Nf => "nf",
            Method::Nearest => "nearest",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected prb_pinn, nf or nearest)")))
    }
}

/// One trainable or evaluable configuration within a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Run {
    pub method: Method,
    /// PDE weight override for the λ sweep.
    pub lambda_pde: Option<f64>,
}

impl Run {
    pub fn plain(method: Method) -> Self {
        Run {
            method,
            lambda_pde: None,
        }
    }

    pub fn label(&self) -> String {
        match self.lambda_pde {
            None => self.method.name().to_string(),
            Some(l) => format!("{}[lambda_pde={l:e}]", self.method.name()),
        }
    }

    fn dir_name(&self) -> String {
        match self.lambda_pde {
            None => self.method.name().to_string(),
            Some(l) => format!("{}_lambda{l:e}", self.method.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub plane: Plane,
    pub offset: f64,
    pub resolution: (usize, usize),
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            plane: Plane::Xz,
            offset: 0.0,
            resolution: (65, 65),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub room: RoomSpec,
    pub max_order: u32,
    /// Minimum source distance from walls and from the target region.
    pub source_clearance: f64,
    /// One source placement and measurement draw per seed.
    pub seeds: Vec<u64>,
    pub frequencies_hz: Vec<f64>,
    pub num_measurements: Vec<usize>,
    pub methods: Vec<Method>,
    pub network: NetworkShape,
    pub train: TrainConfig,
    pub lattice_n: usize,
    pub output_dir: PathBuf,
    /// Extra physics-informed runs per cell, one per PDE weight.
    #[serde(default)]
    pub lambda_pde_sweep: Vec<f64>,
    pub residual_probes: usize,
    #[serde(default)]
    pub render: RenderConfig,
}

impl Default for ExperimentConfig {
    /// Full-size grid: 33³ lattice, 200/400/600 Hz, 5/10/20/50
    /// measurements, seeds 32..64 (0..32 are reserved for tuning).
    fn default() -> Self {
        ExperimentConfig {
            room: RoomSpec::default(),
            max_order: DEFAULT_MAX_ORDER,
            source_clearance: 0.1,
            seeds: (32..64).collect(),
            frequencies_hz: vec![200.0, 400.0, 600.0],
            num_measurements: vec![5, 10, 20, 50],
            methods: Method::ALL.to_vec(),
            network: NetworkShape::default(),
            train: TrainConfig::full_length(),
            lattice_n: 33,
            output_dir: PathBuf::from("out"),
            lambda_pde_sweep: Vec::new(),
            residual_probes: 1024,
            render: RenderConfig::default(),
        }
    }
}

/// Reduced network used by the desk-scale preset.
pub const DESK_NETWORK: NetworkShape = NetworkShape {
    rff_rows: 128,
    hidden_layers: 4,
    width: 32,
};
pub const DESK_COLLOCATION: usize = 32;

impl ExperimentConfig {
    /// Desk-scale grid: 17³ lattice, 200 Hz, 20 measurements, three
    /// seeds, 2×10⁴ iterations with a narrower network.
    pub fn desk_scale() -> Self {
        let mut cfg = ExperimentConfig {
            seeds: vec![32, 33, 34],
            frequencies_hz: vec![200.0],
            num_measurements: vec![20],
            ..ExperimentConfig::default()
        };
        cfg.apply_desk_scale();
        cfg
    }

    /// Shrinks lattice, iteration budget and network in place; grid axes
    /// are left alone.
    pub fn apply_desk_scale(&mut self) {
        self.lattice_n = 17;
        self.train.iterations = 20_000;
        self.train.collocation_count = DESK_COLLOCATION;
        self.network = DESK_NETWORK;
        self.residual_probes = 256;
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.train.validate()?;
        if self.train.iterations == 0 {
            return Err(Error::Config("train.iterations must be positive".into()));
        }
        if self.frequencies_hz.is_empty() || self.frequencies_hz.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config("frequencies must be non-empty and positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.seeds.is_empty() || self.num_measurements.is_empty() {
            return Err(Error::Config("seed and measurement-count lists must be non-empty".into()));
        }
        if self.lattice_n < 2 {
            return Err(Error::Config("lattice_n must be at least 2".into()));
        }
        if self.lambda_pde_sweep.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("lambda_pde_sweep entries must be non-negative".into()));
        }
        if self.residual_probes == 0 {
            return Err(Error::Config("residual_probes must be positive".into()));
        }
        if self.network.rff_rows == 0 || self.network.width == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every run of a cell: the configured methods, then one
    /// physics-informed run per swept PDE weight.
    pub fn runs(&self) -> Vec<Run> {
        let mut runs: Vec<Run> = self.methods.iter().map(|m| Run::plain(*m)).collect();
        runs.extend(self.lambda_pde_sweep.iter().map(|l| Run {
            method: Method::PrbPinn,
            lambda_pde: Some(*l),
        }));
        runs
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &frequency_hz in &self.frequencies_hz {
            for &num_measurements in &self.num_measurements {
                for &seed in &self.seeds {
                    cells.push(Cell {
                        frequency_hz,
                        num_measurements,
                        seed,
                    });
                }
            }
        }
        cells
    }
}

/// One dataset instance of the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub frequency_hz: f64,
    pub num_measurements: usize,
    pub seed: u64,
}

impl Cell {
    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(format!("{}Hz", self.frequency_hz))
            .join(format!("M{}", self.num_measurements))
            .join(format!("seed{}", self.seed))
    }

    pub fn run_dir(&self, out: &Path, run: &Run) -> PathBuf {
        self.dir(out).join(run.dir_name())
    }
}

/// Source placement for a seed: uniform in the room outside the target
/// region, unit magnitude, uniform phase.
pub fn source_for_seed(room: &RoomSpec, seed: u64, clearance: f64) -> Result<SourceSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    SourceSpec::random(room, clearance, &mut rng)
}

pub fn cell_dataset(cfg: &ExperimentConfig, cell: &Cell) -> Result<FieldDataset> {
    let source = source_for_seed(&cfg.room, cell.seed, cfg.source_clearance)?;
    make_dataset(
        &cfg.room,
        &[source],
        cell.frequency_hz,
        cfg.lattice_n,
        cell.num_measurements,
        cfg.max_order,
        cell.seed,
    )
}

/// Loads the cell dataset from disk if present, otherwise synthesizes and
/// writes it.
pub fn ensure_dataset(cfg: &ExperimentConfig, cell: &Cell) -> Result<FieldDataset> {
    let path = cell.dir(&cfg.output_dir).join("dataset.csv");
    if path.exists() {
        return FieldDataset::load(&path);
    }
    let ds = cell_dataset(cfg, cell)?;
    ds.save(&path)?;
    Ok(ds)
}

/// Training configuration for a run; model initialization and collocation
/// streams are keyed by the dataset seed.
pub fn run_train_config(cfg: &ExperimentConfig, run: &Run, seed: u64) -> TrainConfig {
    let mut train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    if let Some(l) = run.lambda_pde {
        train.lambda_pde = l;
    }
    match run.method {
        Method::Nf => nf_baseline_config(&train),
        _ => train,
    }
}

/// Outcome of one run.
pub struct RunOutput {
    pub metrics: Metrics,
    pub model: Option<PrbModel>,
    pub log: Option<crate::train::TrainLog>,
}

/// Trains (if needed) and evaluates one run on a dataset. With `out_dir`,
/// artifacts and checkpoints are written there.
pub fn execute_run(
    cfg: &ExperimentConfig,
    dataset: &FieldDataset,
    run: &Run,
    out_dir: Option<&Path>,
) -> Result<RunOutput> {
    execute_run_seeded(cfg, dataset, run, dataset.seed, out_dir)
}

/// As [`execute_run`], with an explicit seed for network initialization,
/// collocation and residual probes.
pub fn execute_run_seeded(
    cfg: &ExperimentConfig,
    dataset: &FieldDataset,
    run: &Run,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunOutput> {
    let label = run.label();
    match run.method {
        Method::Nearest => {
            let nn = NnInterpolator::from_dataset(dataset)?;
            let metrics = test_lsd(&nn, dataset, &label)?;
            if let Some(dir) = out_dir {
                write_json(&dir.join("nearest.json"), &nn)?;
            }
            Ok(RunOutput {
                metrics,
                model: None,
                log: None,
            })
        }
        Method::PrbPinn | Method::Nf => {
            let train_cfg = run_train_config(cfg, run, seed);
            let init = PrbModel::new(&cfg.network, seed);
            let (model, log) = train_with_checkpoints(init, dataset, &train_cfg, out_dir)?;
            let mut metrics = test_lsd(&model, dataset, &label)?;
            metrics.pde_rms = Some(residual_stats(&model, dataset.wavenumber, cfg.residual_probes, seed)?);
            if let Some(dir) = out_dir {
                save_model(&model, &dir.join("model.json"))?;
                log.save(&dir.join("train_log.csv"))?;
            }
            Ok(RunOutput {
                metrics,
                model: Some(model),
                log: Some(log),
            })
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub rows: Vec<Metrics>,
    /// `(cell/run description, error message)`.
    pub failures: Vec<(String, String)>,
}

/// Runs every cell of the grid, reusing completed runs found on disk.
/// Failing runs are recorded and the sweep continues. Writes
/// `metrics.csv` (and `failures.csv` when needed) into the output
/// directory.
pub fn sweep(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<SweepReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    let mut report = SweepReport::default();
    for cell in cfg.cells() {
        let dataset = match ensure_dataset(cfg, &cell) {
            Ok(ds) => ds,
            Err(e) if e.is_io() => return Err(e),
            Err(e) => {
                report.failures.push((format!("{cell:?}"), e.to_string()));
                continue;
            }
        };
        for run in cfg.runs() {
            let dir = cell.run_dir(out, &run);
            let metrics_path = dir.join("metrics.json");
            let desc = format!("{}Hz/M{}/seed{}/{}", cell.frequency_hz, cell.num_measurements, cell.seed, run.label());
            if metrics_path.exists() {
                report.rows.push(read_metrics(&metrics_path)?);
                progress(&format!("{desc}: cached"));
                continue;
            }
            match execute_run(cfg, &dataset, &run, Some(&dir)) {
                Ok(result) => {
                    write_json(&metrics_path, &result.metrics)?;
                    progress(&format!(
                        "{desc}: median {:.3} dB, mean {:.3} dB",
                        result.metrics.median_lsd_db, result.metrics.mean_lsd_db
                    ));
                    report.rows.push(result.metrics);
                }
                Err(e) => {
                    progress(&format!("{desc}: FAILED {e}"));
                    report.failures.push((desc, e.to_string()));
                }
            }
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = out.join("metrics.csv");
    fs::write(&table, Metrics::table(&report.rows)).map_err(|e| Error::io(&table, e))?;
    if !report.failures.is_empty() {
        let mut text = String::from("run,error\n");
        for (d, e) in &report.failures {
            text.push_str(&format!("{d},\"{}\"\n", e.replace('"', "'")));
        }
        let path = out.join("failures.csv");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

/// Per-group method ordering check: does PRB-PINN < NF < nearest hold on
/// the median test LSD?
#[derive(Clone, Debug, PartialEq)]
pub struct OrderingVerdict {
    pub frequency_hz: f64,
    pub num_measurements: usize,
    pub seeds_total: usize,
    pub seeds_ordered: usize,
    /// Mean over seeds of the median LSD per method, `[prb, nf, nearest]`.
    pub mean_medians: [f64; 3],
}

impl OrderingVerdict {
    pub fn mean_ordered(&self) -> bool {
        let [p, n, b] = self.mean_medians;
        p < n && n < b
    }
}

impl fmt::Display for OrderingVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [p, n, b] = self.mean_medians;
        write!(
            f,
            "{} Hz, M = {}: ordered in {}/{} seeds; mean medians prb_pinn {:.3} dB, nf {:.3} dB, nearest {:.3} dB ({})",
            self.frequency_hz,
            self.num_measurements,
            self.seeds_ordered,
            self.seeds_total,
            p,
            n,
            b,
            if self.mean_ordered() { "ordered" } else { "NOT ordered" }
        )
    }
}

pub fn ordering_verdicts(rows: &[Metrics]) -> Vec<OrderingVerdict> {
    type Key = (u64, usize);
    let mut groups: BTreeMap<Key, BTreeMap<u64, [Option<f64>; 3]>> = BTreeMap::new();
    for r in rows {
        let slot = match r.method.as_str() {
            "prb_pinn" => 0,
            "nf" => 1,
            "nearest" => 2,
            _ => continue,
        };
        groups
            .entry((r.frequency_hz.to_bits(), r.num_measurements))
            .or_default()
            .entry(r.seed)
            .or_default()[slot] = Some(r.median_lsd_db);
    }
    groups
        .into_iter()
        .filter_map(|((f, m), seeds)| {
            let complete: Vec<[f64; 3]> = seeds
                .values()
                .filter_map(|v| Some([v[0]?, v[1]?, v[2]?]))
                .collect();
            if complete.is_empty() {
                return None;
            }
            let n = complete.len() as f64;
            let mut mean = [0.0; 3];
            for c in &complete {
                for i in 0..3 {
                    mean[i] += c[i] / n;
                }
            }
            Some(OrderingVerdict {
                frequency_hz: f64::from_bits(f),
                num_measurements: m,
                seeds_total: complete.len(),
                seeds_ordered: complete.iter().filter(|c| c[0] < c[1] && c[1] < c[2]).count(),
                mean_medians: mean,
            })
        })
        .collect()
}

/// Renders ground truth and every available method of a cell onto one
/// slice; each goes into `out/<label>/slice.{pgm,csv,meta.json}`.
pub fn render_cell(cfg: &ExperimentConfig, cell: &Cell, out: &Path) -> Result<Vec<(String, SliceGrid)>> {
    let dataset = ensure_dataset(cfg, cell)?;
    let plane = SlicePlane {
        plane: cfg.render.plane,
        offset: cfg.render.offset,
    };
    let res = cfg.render.resolution;
    let mut grids = Vec::new();
    let truth = dataset.synthesizer()?;
    let grid = SliceGrid::evaluate(&truth, plane, res, None)?;
    grid.write(&out.join("ground_truth"), "slice", "ground_truth")?;
    grids.push(("ground_truth".to_string(), grid));
    for run in cfg.runs() {
        let label = run.label();
        let grid = match run.method {
            Method::Nearest => SliceGrid::evaluate(&NnInterpolator::from_dataset(&dataset)?, plane, res, None)?,
            Method::PrbPinn | Method::Nf => {
                let path = cell.run_dir(&cfg.output_dir, &run).join("model.json");
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "missing checkpoint {} (train this cell first)",
                        path.display()
                    )));
                }
                SliceGrid::evaluate(&load_model(&path)?, plane, res, None)?
            }
        };
        grid.write(&out.join(run.dir_name()), "slice", &label)?;
        grids.push((label, grid));
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.lattice_n, 33);
        assert_eq!(cfg.cells().len(), 3 * 4 * 32);
        assert_eq!(cfg.runs().len(), 3);
        assert_eq!(cfg.train.iterations, 500_000);
    }

    #[test]
    fn lambda_sweep_adds_runs() {
        let cfg = ExperimentConfig {
            lambda_pde_sweep: vec![1e-4, 1e-3, 1e-2],
            ..ExperimentConfig::desk_scale()
        };
        let runs = cfg.runs();
        assert_eq!(runs.len(), 6);
        assert_eq!(runs[3].label(), "prb_pinn[lambda_pde=1e-4]");
        assert_eq!(run_train_config(&cfg, &runs[5], 0).lambda_pde, 1e-2);
    }

    #[test]
    fn method_train_configs() {
        let cfg = ExperimentConfig::desk_scale();
        let nf = run_train_config(&cfg, &Run::plain(Method::Nf), 3);
        assert_eq!(nf.lambda_pde, 0.0);
        let prb = run_train_config(&cfg, &Run::plain(Method::PrbPinn), 3);
        assert_eq!((prb.lambda_data, prb.lambda_pde), (0.1, 0.001));
        assert_eq!(prb.seed, 3);
    }

    #[test]
    fn config_round_trip_and_strictness() {
        let cfg = ExperimentConfig::desk_scale();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let mut value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        value["lattice_nn"] = 3.into();
        assert!(ExperimentConfig::from_json(&value.to_string()).is_err());
        let mut bad = cfg.clone();
        bad.methods.clear();
        assert!(ExperimentConfig::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("nf".parse::<Method>().unwrap(), Method::Nf);
        assert!("knn".parse::<Method>().is_err());
    }

    #[test]
    fn ordering_summary() {
        let row = |method: &str, seed: u64, median: f64| Metrics {
            method: method.into(),
            frequency_hz: 200.0,
            num_measurements: 20,
            seed,
            mean_lsd_db: median,
            median_lsd_db: median,
            per_point_lsd: vec![],
            pde_rms: None,
        };
        let rows = vec![
            row("prb_pinn", 0, 1.0),
            row("nf", 0, 2.0),
            row("nearest", 0, 3.0),
            row("prb_pinn", 1, 2.5),
            row("nf", 1, 2.0),
            row("nearest", 1, 3.0),
            row("prb_pinn[lambda_pde=1e0]", 1, 0.1),
        ];
        let v = ordering_verdicts(&rows);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].seeds_ordered, 1);
        assert_eq!(v[0].seeds_total, 2);
        assert_eq!(v[0].mean_medians, [1.75, 2.0, 3.0]);
        assert!(v[0].mean_ordered());
    }
}
