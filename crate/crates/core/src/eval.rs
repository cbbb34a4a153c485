//! Test-set metrics, residual statistics and magnitude slice rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::NnInterpolator;
use crate::dataset::FieldDataset;
use crate::error::{Error, Result};
use crate::geometry::{Point3, Region};
use crate::model::PrbModel;
use crate::room::FieldSynthesizer;
use crate::train::sample_collocation;

/// Anything that predicts `|u|` at target-region-local points.
pub trait MagnitudePredictor {
    fn predict_magnitudes(&self, pts: &[Point3]) -> Result<Vec<f64>>;
}

impl MagnitudePredictor for PrbModel {
    fn predict_magnitudes(&self, pts: &[Point3]) -> Result<Vec<f64>> {
        self.magnitudes(pts)
    }
}

impl MagnitudePredictor for NnInterpolator {
    fn predict_magnitudes(&self, pts: &[Point3]) -> Result<Vec<f64>> {
        Ok(pts.iter().map(|p| self.predict(*p)).collect())
    }
}

/// Ground truth.
impl MagnitudePredictor for FieldSynthesizer {
    fn predict_magnitudes(&self, pts: &[Point3]) -> Result<Vec<f64>> {
        pts.iter().map(|p| self.pressure(*p).map(|u| u.norm())).collect()
    }
}

/// Adapter for closures.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(Point3) -> f64> MagnitudePredictor for FnPredictor<F> {
    fn predict_magnitudes(&self, pts: &[Point3]) -> Result<Vec<f64>> {
        Ok(pts.iter().map(|p| (self.0)(*p)).collect())
    }
}

/// `|20 log10(reference / estimate)|`.
pub fn lsd_db(reference: f64, estimate: f64) -> f64 {
    (20.0 * (reference / estimate).log10()).abs()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub method: String,
    pub frequency_hz: f64,
    pub num_measurements: usize,
    pub seed: u64,
    pub mean_lsd_db: f64,
    pub median_lsd_db: f64,
    pub per_point_lsd: Vec<f64>,
    /// RMS Helmholtz residual, for network methods.
    pub pde_rms: Option<f64>,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "method,frequency_hz,num_measurements,seed,mean_lsd_db,median_lsd_db,pde_rms";

    pub fn csv_row(&self) -> String {
        let pde = self.pde_rms.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.method, self.frequency_hz, self.num_measurements, self.seed, self.mean_lsd_db, self.median_lsd_db, pde
        )
    }

    pub fn table(rows: &[Metrics]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Per-test-point log-spectral distance against the ground truth, with
/// mean and median.
pub fn test_lsd(predictor: &dyn MagnitudePredictor, dataset: &FieldDataset, method: &str) -> Result<Metrics> {
    if dataset.test.is_empty() {
        return Err(Error::InvalidDataset("test set is empty".into()));
    }
    let pts: Vec<Point3> = dataset.test.iter().map(|t| t.position).collect();
    let predicted = predictor.predict_magnitudes(&pts)?;
    let mut per_point = Vec::with_capacity(pts.len());
    for (t, p) in dataset.test.iter().zip(predicted) {
        if !(p > 0.0) {
            return Err(Error::NonpositivePrediction(p));
        }
        per_point.push(lsd_db(t.pressure.norm(), p));
    }
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(Metrics {
        method: method.to_string(),
        frequency_hz: dataset.frequency_hz,
        num_measurements: dataset.measurement.len(),
        seed: dataset.seed,
        mean_lsd_db: mean,
        median_lsd_db: median(&per_point),
        per_point_lsd: per_point,
        pde_rms: None,
    })
}

/// RMS of `|(Δ + k²)u|` over `probe_count` seeded uniform points in the
/// target region.
pub fn residual_stats(model: &PrbModel, k: f64, probe_count: usize, seed: u64) -> Result<f64> {
    if probe_count == 0 {
        return Err(Error::Config("probe_count must be at least 1".into()));
    }
    let probes = sample_collocation(&mut ChaCha8Rng::seed_from_u64(seed), &Region::UNIT, probe_count);
    Ok(model.pde_loss(&probes, k)?.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

/// Axis-aligned plane through the target region, e.g. x–z at fixed y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicePlane {
    pub plane: Plane,
    /// Coordinate along the plane normal.
    pub offset: f64,
}

impl SlicePlane {
    pub fn point(&self, u: f64, v: f64) -> Point3 {
        match self.plane {
            Plane::Xy => Point3::new(u, v, self.offset),
            Plane::Xz => Point3::new(u, self.offset, v),
            Plane::Yz => Point3::new(self.offset, u, v),
        }
    }

    /// Grid points in image order: top row (largest `v`) first.
    pub fn grid(&self, nu: usize, nv: usize) -> Vec<Point3> {
        let coord = |i: usize, n: usize| if n == 1 { 0.0 } else { -0.5 + i as f64 / (n - 1) as f64 };
        let mut pts = Vec::with_capacity(nu * nv);
        for row in 0..nv {
            let v = coord(nv - 1 - row, nv);
            for col in 0..nu {
                pts.push(self.point(coord(col, nu), v));
            }
        }
        pts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub plane: SlicePlane,
    pub resolution: (usize, usize),
    /// Level in dB (`20 log10 |u|`), row-major from the top row.
    pub values: Vec<f64>,
    /// `(min, max)` in dB used for gray-level normalization.
    pub range: (f64, f64),
}

#[derive(Serialize)]
struct SliceMeta<'a> {
    method: &'a str,
    plane: SlicePlane,
    resolution: (usize, usize),
    unit: &'static str,
    range_db: (f64, f64),
}

impl SliceGrid {
    pub fn evaluate(
        predictor: &dyn MagnitudePredictor,
        plane: SlicePlane,
        resolution: (usize, usize),
        range: Option<(f64, f64)>,
    ) -> Result<Self> {
        if !Region::UNIT.contains(plane.point(0.0, 0.0)) {
            return Err(Error::Config(format!("slice offset {} misses the target region", plane.offset)));
        }
        let (nu, nv) = resolution;
        if nu == 0 || nv == 0 {
            return Err(Error::Config("slice resolution must be positive".into()));
        }
        let mags = predictor.predict_magnitudes(&plane.grid(nu, nv))?;
        let values: Vec<f64> = mags.iter().map(|m| 20.0 * m.log10()).collect();
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonpositivePrediction(*bad));
        }
        let range = range.unwrap_or_else(|| {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        });
        Ok(SliceGrid {
            plane,
            resolution,
            values,
            range,
        })
    }

    /// Gray levels `0..=255`, clamped to the range.
    pub fn gray_levels(&self) -> Vec<u8> {
        let (lo, hi) = self.range;
        let span = hi - lo;
        self.values
            .iter()
            .map(|v| {
                if span <= 0.0 {
                    0
                } else {
                    (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
                }
            })
            .collect()
    }

    pub fn to_pgm(&self) -> String {
        let (nu, nv) = self.resolution;
        let mut out = format!("P2\n{nu} {nv}\n255\n");
        for row in self.gray_levels().chunks(nu) {
            let line: Vec<String> = row.iter().map(|g| g.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.resolution.0) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    /// Writes `<stem>.pgm`, `<stem>.csv` and `<stem>.meta.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, method: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = SliceMeta {
            method,
            plane: self.plane,
            resolution: self.resolution,
            unit: "dB",
            range_db: self.range,
        };
        let files = [
            (dir.join(format!("{stem}.pgm")), self.to_pgm()),
            (dir.join(format!("{stem}.csv")), self.to_csv()),
            (
                dir.join(format!("{stem}.meta.json")),
                serde_json::to_string_pretty(&meta).expect("slice meta serializes"),
            ),
        ];
        let mut written = Vec::new();
        for (path, text) in files {
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Evaluates a slice and writes `slice.pgm`, `slice.csv` and
/// `slice.meta.json` into `out_dir`.
pub fn render_slice(
    predictor: &dyn MagnitudePredictor,
    plane: SlicePlane,
    resolution: (usize, usize),
    out_dir: &Path,
    method: &str,
) -> Result<SliceGrid> {
    let grid = SliceGrid::evaluate(predictor, plane, resolution, None)?;
    grid.write(out_dir, "slice", method)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_dataset;
    use crate::model::fixtures;
    use crate::room::{RoomSpec, SourceSpec};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn dataset() -> FieldDataset {
        let src = SourceSpec {
            position: Point3::new(0.5, 0.8, 1.0),
            amplitude: Complex64::new(1.0, 0.0),
        };
        make_dataset(&RoomSpec::default(), &[src], 200.0, 9, 20, 4, 3).unwrap()
    }

    #[test]
    fn ground_truth_scores_zero() {
        let ds = dataset();
        let synth = ds.synthesizer().unwrap();
        let m = test_lsd(&synth, &ds, "truth").unwrap();
        assert!(m.mean_lsd_db < 1e-12);
        assert_eq!(m.per_point_lsd.len(), 729 - 20);
    }

    #[test]
    fn doubled_prediction_is_six_db() {
        let ds = dataset();
        let synth = ds.synthesizer().unwrap();
        let doubled = FnPredictor(|p: Point3| 2.0 * synth.pressure(p).unwrap().norm());
        let m = test_lsd(&doubled, &ds, "x2").unwrap();
        for v in &m.per_point_lsd {
            assert!((v - 6.0206).abs() < 1e-4);
        }
    }

    #[test]
    fn nearest_neighbour_recomputation() {
        let ds = dataset();
        let nn = NnInterpolator::from_dataset(&ds).unwrap();
        let m = test_lsd(&nn, &ds, "nearest").unwrap();
        // Scripted recomputation with an explicit nearest scan.
        let mut sum = 0.0;
        for t in &ds.test {
            let mut best = (f64::INFINITY, 0.0);
            for meas in &ds.measurement {
                let d = meas.position.distance(t.position);
                if d < best.0 {
                    best = (d, meas.magnitude);
                }
            }
            sum += (20.0 * (t.pressure.norm() / best.1).log10()).abs();
        }
        assert!((m.mean_lsd_db - sum / ds.test.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn nonpositive_prediction_rejected() {
        let ds = dataset();
        assert!(matches!(
            test_lsd(&FnPredictor(|_| 0.0), &ds, "zero"),
            Err(Error::NonpositivePrediction(_))
        ));
    }

    #[test]
    fn residual_stats_fixtures() {
        let k = 3.66;
        let plane = fixtures::plane_wave([k, 0.0, 0.0]);
        assert!(residual_stats(&plane, k, 64, 0).unwrap() < 1e-9);
        let unit = fixtures::constant(0.0);
        assert!((residual_stats(&unit, k, 64, 0).unwrap() - k * k).abs() < 1e-12 * k * k);
        assert!(residual_stats(&unit, k, 0, 0).is_err());
    }

    #[test]
    fn constant_field_renders_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let plane = SlicePlane {
            plane: Plane::Xz,
            offset: 0.0,
        };
        let grid = render_slice(&FnPredictor(|_| 0.3), plane, (5, 4), dir.path(), "const").unwrap();
        let levels = grid.gray_levels();
        assert!(levels.iter().all(|g| *g == levels[0]));
        let pgm = fs::read_to_string(dir.path().join("slice.pgm")).unwrap();
        assert!(pgm.starts_with("P2\n5 4\n255\n"));
        assert!(dir.path().join("slice.csv").exists());
        assert!(dir.path().join("slice.meta.json").exists());
    }

    #[test]
    fn monopole_slice_matches_closed_form() {
        let src = Point3::new(0.0, 0.0, 0.9);
        let predictor = FnPredictor(move |p: Point3| 1.0 / (4.0 * PI * p.distance(src)));
        let plane = SlicePlane {
            plane: Plane::Xz,
            offset: 0.0,
        };
        let grid = SliceGrid::evaluate(&predictor, plane, (9, 9), None).unwrap();
        let pts = plane.grid(9, 9);
        for (p, v) in pts.iter().zip(&grid.values) {
            let expected = 20.0 * (1.0 / (4.0 * PI * p.distance(src))).log10();
            assert!((v - expected).abs() < 1e-12);
        }
        // Top row is closest to the source (z = +0.5); column centre decays downwards.
        let centre_col: Vec<f64> = (0..9).map(|r| grid.values[r * 9 + 4]).collect();
        assert!(centre_col.windows(2).all(|w| w[0] > w[1]));
        // Gray levels rank like the raw values.
        let g = grid.gray_levels();
        for i in 0..g.len() {
            for j in 0..g.len() {
                if grid.values[i] < grid.values[j] {
                    assert!(g[i] <= g[j]);
                }
            }
        }
    }

    #[test]
    fn slice_must_hit_region() {
        let plane = SlicePlane {
            plane: Plane::Xy,
            offset: 0.8,
        };
        assert!(SliceGrid::evaluate(&FnPredictor(|_| 1.0), plane, (3, 3), None).is_err());
    }
}
