//! Reference interpolators.

use serde::{Deserialize, Serialize};

use crate::dataset::{FieldDataset, Measurement};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::train::TrainConfig;

/// Nearest-neighbour magnitude interpolation. Ties go to the lowest
/// measurement index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnInterpolator {
    points: Vec<Point3>,
    magnitudes: Vec<f64>,
}

impl NnInterpolator {
    pub fn new(measurements: &[Measurement]) -> Result<Self> {
        if measurements.is_empty() {
            return Err(Error::InvalidDataset("nearest-neighbour interpolation needs a measurement".into()));
        }
        Ok(NnInterpolator {
            points: measurements.iter().map(|m| m.position).collect(),
            magnitudes: measurements.iter().map(|m| m.magnitude).collect(),
        })
    }

    pub fn from_dataset(dataset: &FieldDataset) -> Result<Self> {
        Self::new(&dataset.measurement)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest_index(&self, x: Point3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (*p - x).dot(*p - x);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn predict(&self, x: Point3) -> f64 {
        self.magnitudes[self.nearest_index(x)]
    }
}

/// The physics-free neural field: identical configuration with the PDE
/// weight removed.
pub fn nf_baseline_config(base: &TrainConfig) -> TrainConfig {
    TrainConfig {
        lambda_pde: 0.0,
        ..base.clone()
    }
}
