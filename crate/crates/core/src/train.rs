//! Training loop: per-iteration collocation resampling, full-batch data
//! loss, AdamW with step-decayed learning rate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_model;
use crate::dataset::{FieldDataset, Measurement};
use crate::error::{Error, Result};
use crate::geometry::{Point3, Region};
use crate::model::{LossBreakdown, LossWeights, PrbModel};
use crate::optim::{adamw_step, AdamWConfig, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub lambda_data: f64,
    pub lambda_pde: f64,
    pub collocation_count: usize,
    pub adamw: AdamWConfig,
    pub seed: u64,
    /// Write `ckpt_{iteration}.json` every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            lr0: 1e-3,
            lr_decay_factor: 0.9,
            lr_decay_every: 10_000,
            lambda_data: 1e-1,
            lambda_pde: 1e-3,
            collocation_count: 256,
            adamw: AdamWConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule of 5×10⁵ iterations.
    pub fn full_length() -> Self {
        TrainConfig {
            iterations: 500_000,
            ..TrainConfig::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            data: self.lambda_data,
            pde: self.lambda_pde,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must lie in (0, 1]".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be positive".into()));
        }
        if self.collocation_count == 0 {
            return Err(Error::Config("collocation_count must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        self.weights().validate()?;
        self.adamw.validate()
    }
}

/// `lr0 · factor^⌊iteration / decay_every⌋`.
pub fn lr_at(config: &TrainConfig, iteration: usize) -> f64 {
    let decays = (iteration / config.lr_decay_every) as i32;
    // Dividing by the reciprocal keeps 1e-3 · 0.9 at exactly 9e-4.
    config.lr0 / config.lr_decay_factor.recip().powi(decays)
}

/// `count` points i.i.d. uniform in `region`.
pub fn sample_collocation<R: Rng + ?Sized>(rng: &mut R, region: &Region, count: usize) -> Vec<Point3> {
    let lo = region.lower();
    let hi = region.upper();
    (0..count)
        .map(|_| {
            Point3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            )
        })
        .collect()
}

/// Random stream for the collocation batch of one iteration.
pub fn collocation_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_6c6c_6f63_6174);
    rng.set_stream(iteration as u64);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub data_db: f64,
    pub pde: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,data_db,pde,total,lr";

    fn push(&mut self, iteration: usize, loss: &LossBreakdown, lr: f64) {
        self.entries.push(LogEntry {
            iteration,
            data_db: loss.data,
            pde: loss.pde,
            total: loss.total,
            lr,
        });
    }

    pub fn last(&self) -> Option<&LogEntry> {
        self.entries.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{}", e.iteration, e.data_db, e.pde, e.total, e.lr);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn at_iteration(err: Error, it: usize) -> Error {
    match err {
        Error::NonFinite { term, .. } => Error::NonFinite {
            term,
            iteration: Some(it),
        },
        other => other,
    }
}

pub fn train(model: PrbModel, dataset: &FieldDataset, config: &TrainConfig) -> Result<(PrbModel, TrainLog)> {
    train_with_checkpoints(model, dataset, config, None)
}

/// Step-at-a-time training state. With `lambda_pde = 0` the phase network
/// receives no gradient and is left untouched (no weight decay either); the
/// collocation batch is then only drawn on logging iterations to report the
/// residual.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: PrbModel,
    config: TrainConfig,
    measurement: Vec<Measurement>,
    wavenumber: f64,
    state: OptimizerState,
    iteration: usize,
    log: TrainLog,
}

impl Trainer {
    pub fn new(model: PrbModel, dataset: &FieldDataset, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let trainable = if config.lambda_pde > 0.0 {
            model.param_count()
        } else {
            model.mag_net.param_count()
        };
        Ok(Trainer {
            model,
            config: config.clone(),
            measurement: dataset.measurement.clone(),
            wavenumber: dataset.wavenumber,
            state: OptimizerState::new(trainable),
            iteration: 0,
            log: TrainLog::default(),
        })
    }

    pub fn model(&self) -> &PrbModel {
        &self.model
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Number of completed steps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    pub fn into_parts(self) -> (PrbModel, TrainLog) {
        (self.model, self.log)
    }

    /// One AdamW step. On error the model is left at its last good state.
    pub fn step(&mut self) -> Result<()> {
        let it = self.iteration;
        let config = &self.config;
        let physics = config.lambda_pde > 0.0;
        let lr = lr_at(config, it);
        let log_now = it.is_multiple_of(config.log_every) || it + 1 == config.iterations;
        let collocation = if physics || log_now {
            sample_collocation(&mut collocation_rng(config.seed, it), &Region::UNIT, config.collocation_count)
        } else {
            Vec::new()
        };
        let (loss, grad) = self
            .model
            .loss_and_gradient(&self.measurement, &collocation, self.wavenumber, config.weights())
            .and_then(|(loss, grad)| {
                if !loss.total.is_finite() {
                    return Err(Error::NonFinite {
                        term: crate::error::LossTerm::Data,
                        iteration: None,
                    });
                }
                Ok((loss, grad))
            })
            .map_err(|e| at_iteration(e, it))?;
        if physics {
            let grads = grad.tensors();
            adamw_step(&mut self.model.tensors_mut(), &grads, &mut self.state, lr, &config.adamw)
        } else {
            let grads = grad.mag.tensors();
            adamw_step(&mut self.model.mag_net.tensors_mut(), &grads, &mut self.state, lr, &config.adamw)
        }
        .map_err(|e| at_iteration(e, it))?;
        if log_now {
            self.log.push(it, &loss, lr);
        }
        self.iteration += 1;
        Ok(())
    }
}

/// Runs `config.iterations` AdamW steps. With `checkpoint_dir`, periodic
/// checkpoints are written there, and on a numerical abort the last good
/// parameters are persisted before the error is returned.
pub fn train_with_checkpoints(
    model: PrbModel,
    dataset: &FieldDataset,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(PrbModel, TrainLog)> {
    let mut trainer = Trainer::new(model, dataset, config)?;
    while !trainer.is_finished() {
        let it = trainer.iteration();
        if let Err(e) = trainer.step() {
            if let Some(dir) = checkpoint_dir {
                save_model(trainer.model(), &dir.join(format!("ckpt_{it}.json")))?;
            }
            return Err(e);
        }
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
                save_model(trainer.model(), &dir.join(format!("ckpt_{}.json", it + 1)))?;
            }
        }
    }
    Ok(trainer.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Measurement;
    use crate::model::NetworkShape;
    use crate::room::RoomSpec;

    fn tiny_shape() -> NetworkShape {
        NetworkShape {
            rff_rows: 8,
            hidden_layers: 2,
            width: 8,
        }
    }

    fn single_point_dataset() -> FieldDataset {
        FieldDataset {
            frequency_hz: 200.0,
            wavenumber: RoomSpec::default().wavenumber(200.0),
            measurement: vec![Measurement {
                position: Point3::new(0.1, -0.2, 0.3),
                magnitude: 0.05,
            }],
            test: vec![],
            lattice_shape: [2; 3],
            seed: 0,
            room: RoomSpec::default(),
            sources: vec![],
            max_order: 0,
        }
    }

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0), 1e-3);
        assert_eq!(lr_at(&c, 9_999), 1e-3);
        assert_eq!(lr_at(&c, 10_000), 9e-4);
        assert_eq!(lr_at(&c, 25_000), 8.1e-4);
        let mut prev = f64::INFINITY;
        for it in (0..500_000).step_by(3_333) {
            let lr = lr_at(&c, it);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn collocation_inside_and_reproducible() {
        let a = sample_collocation(&mut collocation_rng(4, 17), &Region::UNIT, 500);
        let b = sample_collocation(&mut collocation_rng(4, 17), &Region::UNIT, 500);
        let c = sample_collocation(&mut collocation_rng(4, 18), &Region::UNIT, 500);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|p| Region::UNIT.contains(*p)));
    }

    #[test]
    fn collocation_mean_is_centre() {
        let pts = sample_collocation(&mut collocation_rng(1, 0), &Region::UNIT, 100_000);
        let n = pts.len() as f64;
        let mean = pts.iter().fold(Point3::ORIGIN, |acc, p| acc + *p) * (1.0 / n);
        // Standard error per axis is 0.289 / sqrt(1e5) ≈ 9e-4.
        for c in mean.to_array() {
            assert!(c.abs() < 0.01);
        }
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let model = PrbModel::new(&tiny_shape(), 3);
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let (trained, log) = train(model.clone(), &single_point_dataset(), &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(log.entries.is_empty());
    }

    #[test]
    fn single_point_fit_converges() {
        let model = PrbModel::new(&tiny_shape(), 1);
        let cfg = TrainConfig {
            iterations: 500,
            lambda_pde: 0.0,
            log_every: 50,
            ..TrainConfig::default()
        };
        let (trained, log) = train(model.clone(), &single_point_dataset(), &cfg).unwrap();
        let first = log.entries.first().unwrap().data_db;
        let last = trained.data_loss(&single_point_dataset().measurement).unwrap();
        assert!(last < 0.1, "final data loss {last} dB (start {first})");
        assert!(first > last);
        assert_eq!(trained.phase_net, model.phase_net);
    }

    #[test]
    fn log_csv_layout() {
        let model = PrbModel::new(&tiny_shape(), 1);
        let cfg = TrainConfig {
            iterations: 5,
            log_every: 2,
            collocation_count: 4,
            ..TrainConfig::default()
        };
        let (_, log) = train(model, &single_point_dataset(), &cfg).unwrap();
        let iters: Vec<usize> = log.entries.iter().map(|e| e.iteration).collect();
        assert_eq!(iters, vec![0, 2, 4]);
        let csv = log.to_csv();
        assert!(csv.starts_with("iteration,data_db,pde,total,lr\n0,"));
    }

    #[test]
    fn divergence_aborts_and_persists_checkpoint() {
        let mut model = PrbModel::new(&tiny_shape(), 1);
        model.mag_net.layers[2].bias[0] = 1e4;
        let cfg = TrainConfig {
            iterations: 3,
            collocation_count: 4,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let err = train_with_checkpoints(model, &single_point_dataset(), &cfg, Some(dir.path())).unwrap_err();
        assert!(err.is_numerical(), "{err}");
        assert!(dir.path().join("ckpt_0.json").exists());
    }

    #[test]
    fn periodic_checkpoints() {
        let model = PrbModel::new(&tiny_shape(), 1);
        let cfg = TrainConfig {
            iterations: 4,
            checkpoint_every: 2,
            collocation_count: 4,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (trained, _) = train_with_checkpoints(model, &single_point_dataset(), &cfg, Some(dir.path())).unwrap();
        assert!(dir.path().join("ckpt_2.json").exists());
        let last = crate::checkpoint::load_model(&dir.path().join("ckpt_4.json")).unwrap();
        assert_eq!(last, trained);
    }
}
