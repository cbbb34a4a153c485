//! Magnitude-only datasets on a cubic lattice filling the target region.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Region};
use crate::room::{FieldSynthesizer, RoomSpec, SourceSpec};

pub const CSV_HEADER: &str = "x,y,z,magnitude,re,im,split";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub position: Point3,
    pub magnitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestPoint {
    pub position: Point3,
    pub pressure: Complex64,
}

/// Measurements keep only `|u|`; test points retain the complex ground truth
/// for evaluation. Positions are target-region-local (unit cube at origin).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDataset {
    pub frequency_hz: f64,
    pub wavenumber: f64,
    pub measurement: Vec<Measurement>,
    pub test: Vec<TestPoint>,
    pub lattice_shape: [usize; 3],
    pub seed: u64,
    pub room: RoomSpec,
    pub sources: Vec<SourceSpec>,
    pub max_order: u32,
}

/// JSON sidecar written next to the dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub room_dims: [f64; 3],
    pub t60: f64,
    pub speed_of_sound: f64,
    pub region_center: Point3,
    pub frequency_hz: f64,
    pub wavenumber: f64,
    pub lattice_n: usize,
    pub num_measurements: usize,
    pub seed: u64,
    pub sources: Vec<SourceSpec>,
    pub max_order: u32,
}

/// `n³` points spanning `[-0.5, 0.5]³` inclusive, x-major order.
pub fn lattice_points(n: usize) -> Vec<Point3> {
    assert!(n >= 2, "lattice needs at least two points per axis");
    let coord = |i: usize| -0.5 + i as f64 / (n - 1) as f64;
    let mut pts = Vec::with_capacity(n * n * n);
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                pts.push(Point3::new(coord(ix), coord(iy), coord(iz)));
            }
        }
    }
    pts
}

fn check_geometry(room: &RoomSpec, sources: &[SourceSpec]) -> Result<()> {
    room.validate()?;
    let region = room.target_region();
    let (lo, hi) = (region.lower(), region.upper());
    if lo.to_array().iter().any(|c| *c <= 0.0)
        || hi.to_array().iter().zip(room.dims).any(|(c, d)| *c >= d)
    {
        return Err(Error::InvalidDataset(format!(
            "lattice extends outside the room (region centre {:?}, dims {:?})",
            room.region_center, room.dims
        )));
    }
    if sources.is_empty() {
        return Err(Error::InvalidDataset("at least one source is required".into()));
    }
    for s in sources {
        if region.contains(s.position) {
            return Err(Error::InvalidDataset(format!(
                "source at {:?} lies inside the target region",
                s.position
            )));
        }
    }
    Ok(())
}

/// Synthesizes the field on a `lattice_n³` lattice and picks
/// `num_measurements` lattice points (seeded, uniformly without
/// replacement) as magnitude-only measurements. The remaining points form
/// the test set.
pub fn make_dataset(
    room: &RoomSpec,
    sources: &[SourceSpec],
    frequency_hz: f64,
    lattice_n: usize,
    num_measurements: usize,
    max_order: u32,
    seed: u64,
) -> Result<FieldDataset> {
    if lattice_n < 2 {
        return Err(Error::InvalidDataset("lattice_n must be at least 2".into()));
    }
    let total = lattice_n.pow(3);
    if num_measurements == 0 || num_measurements >= total {
        return Err(Error::InvalidDataset(format!(
            "num_measurements must be in 1..{total}, got {num_measurements}"
        )));
    }
    check_geometry(room, sources)?;
    let synth = FieldSynthesizer::new(room, sources, frequency_hz, max_order)?;

    let points = lattice_points(lattice_n);
    let field = points.iter().map(|p| synth.pressure(*p)).collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = vec![false; total];
    for i in rand::seq::index::sample(&mut rng, total, num_measurements) {
        selected[i] = true;
    }

    let mut measurement = Vec::with_capacity(num_measurements);
    let mut test = Vec::with_capacity(total - num_measurements);
    for ((p, u), is_meas) in points.into_iter().zip(field).zip(selected) {
        if is_meas {
            measurement.push(Measurement {
                position: p,
                magnitude: u.norm(),
            });
        } else {
            test.push(TestPoint { position: p, pressure: u });
        }
    }

    Ok(FieldDataset {
        frequency_hz,
        wavenumber: synth.wavenumber(),
        measurement,
        test,
        lattice_shape: [lattice_n; 3],
        seed,
        room: room.clone(),
        sources: sources.to_vec(),
        max_order,
    })
}

/// Path of the JSON sidecar for a dataset CSV: `name.csv` → `name.meta.json`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

impl FieldDataset {
    pub fn region(&self) -> Region {
        Region::UNIT
    }

    pub fn synthesizer(&self) -> Result<FieldSynthesizer> {
        FieldSynthesizer::new(&self.room, &self.sources, self.frequency_hz, self.max_order)
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            room_dims: self.room.dims,
            t60: self.room.t60,
            speed_of_sound: self.room.speed_of_sound,
            region_center: self.room.region_center,
            frequency_hz: self.frequency_hz,
            wavenumber: self.wavenumber,
            lattice_n: self.lattice_shape[0],
            num_measurements: self.measurement.len(),
            seed: self.seed,
            sources: self.sources.clone(),
            max_order: self.max_order,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.measurement.len() + self.test.len()));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for m in &self.measurement {
            let p = m.position;
            let _ = writeln!(out, "{},{},{},{},,,meas", p.x, p.y, p.z, m.magnitude);
        }
        for t in &self.test {
            let p = t.position;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},test",
                p.x,
                p.y,
                p.z,
                t.pressure.norm(),
                t.pressure.re,
                t.pressure.im
            );
        }
        out
    }

    /// Writes `path` (CSV) and its `.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let meta = meta_path(path);
        let json = serde_json::to_string_pretty(&self.meta()).expect("dataset meta serializes");
        fs::write(&meta, json).map_err(|e| Error::io(&meta, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_file = meta_path(path);
        let meta_text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&meta_text).map_err(|e| Error::format(&meta_file, e))?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (measurement, test) = parse_csv(&text).map_err(|reason| Error::format(path, reason))?;
        if measurement.len() != meta.num_measurements {
            return Err(Error::format(path, "measurement count disagrees with sidecar"));
        }
        if measurement.len() + test.len() != meta.lattice_n.pow(3) {
            return Err(Error::format(path, "row count disagrees with lattice size"));
        }
        Ok(FieldDataset {
            frequency_hz: meta.frequency_hz,
            wavenumber: meta.wavenumber,
            measurement,
            test,
            lattice_shape: [meta.lattice_n; 3],
            seed: meta.seed,
            room: RoomSpec {
                dims: meta.room_dims,
                t60: meta.t60,
                speed_of_sound: meta.speed_of_sound,
                region_center: meta.region_center,
            },
            sources: meta.sources,
            max_order: meta.max_order,
        })
    }
}

fn parse_csv(text: &str) -> std::result::Result<(Vec<Measurement>, Vec<TestPoint>), String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(format!("expected header {CSV_HEADER:?}, found {other:?}")),
    }
    let mut measurement = Vec::new();
    let mut test = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(format!("line {}: expected 7 fields", lineno + 2));
        }
        let num = |i: usize| {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("line {}: field {}: {e}", lineno + 2, i + 1))
        };
        let position = Point3::new(num(0)?, num(1)?, num(2)?);
        if !Region::UNIT.contains(position) {
            return Err(format!("line {}: point outside the target region", lineno + 2));
        }
        match fields[6].trim() {
            "meas" => measurement.push(Measurement {
                position,
                magnitude: num(3)?,
            }),
            "test" => test.push(TestPoint {
                position,
                pressure: Complex64::new(num(4)?, num(5)?),
            }),
            other => return Err(format!("line {}: unknown split {other:?}", lineno + 2)),
        }
    }
    Ok((measurement, test))
}
