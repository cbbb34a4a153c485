//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: a ground-truth magnitude slice for an adjustable room
//! and source, a training session that steps PRB-PINN and the physics-free
//! NF side by side, and slices of either network or the nearest-neighbour
//! baseline on the ground truth's dB scale.

use magfield::baselines::{nf_baseline_config, NnInterpolator};
use magfield::dataset::{make_dataset, FieldDataset};
use magfield::eval::{test_lsd, MagnitudePredictor, Plane, SliceGrid, SlicePlane};
use magfield::model::{NetworkShape, PrbModel};
use magfield::room::{RoomSpec, SourceSpec};
use magfield::train::{TrainConfig, Trainer};
use magfield::{Complex64, Point3};
use std::cell::RefCell;
use wasm_bindgen::prelude::*;

/// Image-source order used in the browser; higher orders change the
/// field little at T60 ≤ 0.3 s and cost seconds per slice.
pub const DEMO_MAX_ORDER: u32 = 8;
const DEMO_LATTICE: usize = 9;
const DEMO_NETWORK: NetworkShape = NetworkShape {
    rff_rows: 64,
    hidden_layers: 2,
    width: 16,
};

fn js(e: magfield::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn parse_plane(name: &str) -> magfield::Result<Plane> {
    match name {
        "xy" => Ok(Plane::Xy),
        "xz" => Ok(Plane::Xz),
        "yz" => Ok(Plane::Yz),
        _ => Err(magfield::Error::Config(format!("unknown plane {name:?}"))),
    }
}

/// Gray-level image with its dB range.
#[wasm_bindgen]
pub struct SliceImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    min_db: f64,
    max_db: f64,
}

#[wasm_bindgen]
impl SliceImage {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }
    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }
    /// Row-major gray levels, top row first.
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn min_db(&self) -> f64 {
        self.min_db
    }
    #[wasm_bindgen(getter)]
    pub fn max_db(&self) -> f64 {
        self.max_db
    }
}

impl From<SliceGrid> for SliceImage {
    fn from(grid: SliceGrid) -> Self {
        SliceImage {
            width: grid.resolution.0,
            height: grid.resolution.1,
            pixels: grid.gray_levels(),
            min_db: grid.range.0,
            max_db: grid.range.1,
        }
    }
}

fn room(t60: f64) -> RoomSpec {
    RoomSpec {
        t60,
        ..RoomSpec::default()
    }
}

/// Magnitude slice of the simulated field. The source is given in room
/// coordinates (the 3×4×6 m room, target region centred at (1.5, 2, 3)).
pub fn truth_grid(
    frequency_hz: f64,
    t60: f64,
    source: Point3,
    plane: SlicePlane,
    resolution: usize,
) -> magfield::Result<SliceGrid> {
    let room = room(t60);
    let src = SourceSpec {
        position: source,
        amplitude: Complex64::new(1.0, 0.0),
    };
    let synth = magfield::room::FieldSynthesizer::new(&room, &[src], frequency_hz, DEMO_MAX_ORDER)?;
    SliceGrid::evaluate(&synth, plane, (resolution, resolution), None)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn ground_truth_slice(
    frequency_hz: f64,
    t60: f64,
    source_x: f64,
    source_y: f64,
    source_z: f64,
    plane: &str,
    offset: f64,
    resolution: usize,
) -> Result<SliceImage, JsError> {
    let plane = SlicePlane {
        plane: parse_plane(plane).map_err(js)?,
        offset,
    };
    truth_grid(frequency_hz, t60, Point3::new(source_x, source_y, source_z), plane, resolution)
        .map(SliceImage::from)
        .map_err(js)
}

/// PRB-PINN and NF trained in lockstep on one small dataset.
#[wasm_bindgen]
pub struct TrainingSession {
    dataset: FieldDataset,
    prb: Trainer,
    nf: Trainer,
    nearest: NnInterpolator,
    /// Last ground-truth slice; synthesis dominates the cost of a frame.
    truth: RefCell<Option<SliceGrid>>,
}

impl TrainingSession {
    pub fn create(frequency_hz: f64, t60: f64, num_measurements: usize, seed: u64) -> magfield::Result<Self> {
        let room = room(t60);
        let source = magfield::experiment::source_for_seed(&room, seed, 0.1)?;
        let dataset = make_dataset(
            &room,
            &[source],
            frequency_hz,
            DEMO_LATTICE,
            num_measurements,
            DEMO_MAX_ORDER,
            seed,
        )?;
        let config = TrainConfig {
            iterations: usize::MAX,
            collocation_count: 16,
            log_every: 50,
            seed,
            ..TrainConfig::default()
        };
        let init = PrbModel::new(&DEMO_NETWORK, seed);
        Ok(TrainingSession {
            prb: Trainer::new(init.clone(), &dataset, &config)?,
            nf: Trainer::new(init, &dataset, &nf_baseline_config(&config))?,
            nearest: NnInterpolator::from_dataset(&dataset)?,
            dataset,
            truth: RefCell::new(None),
        })
    }

    pub fn advance(&mut self, steps: usize) -> magfield::Result<()> {
        for _ in 0..steps {
            self.prb.step()?;
            self.nf.step()?;
        }
        Ok(())
    }

    fn predictor(&self, method: &str) -> magfield::Result<&dyn MagnitudePredictor> {
        match method {
            "prb_pinn" => Ok(self.prb.model()),
            "nf" => Ok(self.nf.model()),
            "nearest" => Ok(&self.nearest),
            _ => Err(magfield::Error::Config(format!("unknown method {method:?}"))),
        }
    }

    /// Slice of one method, normalized to the ground truth's dB range on
    /// the same plane.
    pub fn grid(&self, method: &str, plane: SlicePlane, resolution: usize) -> magfield::Result<SliceGrid> {
        let res = (resolution, resolution);
        let cached = self
            .truth
            .borrow()
            .as_ref()
            .filter(|g| g.plane == plane && g.resolution == res)
            .cloned();
        let truth = match cached {
            Some(g) => g,
            None => {
                let g = SliceGrid::evaluate(&self.dataset.synthesizer()?, plane, res, None)?;
                *self.truth.borrow_mut() = Some(g.clone());
                g
            }
        };
        if method == "ground_truth" {
            return Ok(truth);
        }
        SliceGrid::evaluate(self.predictor(method)?, plane, res, Some(truth.range))
    }

    /// Median test LSD in dB for `[prb_pinn, nf, nearest]`.
    pub fn median_lsd(&self) -> magfield::Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for (slot, method) in out.iter_mut().zip(["prb_pinn", "nf", "nearest"]) {
            *slot = test_lsd(self.predictor(method)?, &self.dataset, method)?.median_lsd_db;
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl TrainingSession {
    #[wasm_bindgen(constructor)]
    pub fn new(frequency_hz: f64, t60: f64, num_measurements: usize, seed: u32) -> Result<TrainingSession, JsError> {
        Self::create(frequency_hz, t60, num_measurements, seed as u64).map_err(js)
    }

    /// Runs `steps` iterations of both trainers.
    pub fn step(&mut self, steps: usize) -> Result<(), JsError> {
        self.advance(steps).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn iteration(&self) -> usize {
        self.prb.iteration()
    }

    /// `method` is one of ground_truth, prb_pinn, nf, nearest.
    pub fn slice(&self, method: &str, plane: &str, offset: f64, resolution: usize) -> Result<SliceImage, JsError> {
        let plane = SlicePlane {
            plane: parse_plane(plane).map_err(js)?,
            offset,
        };
        self.grid(method, plane, resolution).map(SliceImage::from).map_err(js)
    }

    pub fn median_lsd_db(&self) -> Result<Vec<f64>, JsError> {
        self.median_lsd().map(|v| v.to_vec()).map_err(js)
    }

    /// Latest logged data loss in dB for `[prb_pinn, nf]`.
    pub fn data_loss_db(&self) -> Vec<f64> {
        [&self.prb, &self.nf]
            .iter()
            .map(|t| t.log().last().map_or(f64::NAN, |e| e.data_db))
            .collect()
    }

    /// Measurement positions flattened as `x, y, z, …` (region-local).
    pub fn measurement_positions(&self) -> Vec<f64> {
        self.dataset
            .measurement
            .iter()
            .flat_map(|m| m.position.to_array())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const XZ: SlicePlane = SlicePlane {
        plane: Plane::Xz,
        offset: 0.0,
    };

    #[test]
    fn truth_slice_is_finite_and_spans_range() {
        let grid = truth_grid(200.0, 0.2, Point3::new(0.5, 0.5, 0.5), XZ, 17).unwrap();
        assert_eq!(grid.values.len(), 17 * 17);
        let px = SliceImage::from(grid).pixels();
        assert_eq!(px.iter().min(), Some(&0));
        assert_eq!(px.iter().max(), Some(&255));
    }

    #[test]
    fn source_inside_region_is_rejected() {
        assert!(truth_grid(200.0, 0.2, Point3::new(1.5, 2.0, 3.0), XZ, 9).is_err());
        assert!(parse_plane("xw").is_err());
    }

    #[test]
    fn session_trains_both_networks() {
        let mut s = TrainingSession::create(200.0, 0.2, 10, 3).unwrap();
        let before = s.median_lsd().unwrap();
        s.advance(200).unwrap();
        assert_eq!(s.prb.iteration(), 200);
        let after = s.median_lsd().unwrap();
        assert!(after[0] < before[0] && after[1] < before[1], "{before:?} -> {after:?}");
        assert_eq!(after[2], before[2]);
        let nf_phase_before = PrbModel::new(&DEMO_NETWORK, 3).phase_net;
        assert_eq!(s.nf.model().phase_net, nf_phase_before);
    }

    #[test]
    fn method_slices_share_truth_range() {
        let s = TrainingSession::create(300.0, 0.2, 5, 1).unwrap();
        let truth = s.grid("ground_truth", XZ, 9).unwrap();
        for m in ["prb_pinn", "nf", "nearest"] {
            assert_eq!(s.grid(m, XZ, 9).unwrap().range, truth.range);
        }
        assert!(s.grid("linear", XZ, 9).is_err());
        let moved = SlicePlane { offset: 0.25, ..XZ };
        assert_ne!(s.grid("ground_truth", moved, 9).unwrap().values, truth.values);
        assert_eq!(s.grid("ground_truth", XZ, 9).unwrap(), truth);
        assert_eq!(s.measurement_positions().len(), 15);
    }
}
