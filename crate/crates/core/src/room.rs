//! Shoebox room acoustics by the image source method.
//!
//! The room occupies `[0, Lx] × [0, Ly] × [0, Lz]`. Walls share one
//! frequency-independent amplitude reflection coefficient derived from the
//! reverberation time with Sabine's formula.

use std::f64::consts::{LN_10, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Region};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_MAX_ORDER: u32 = 30;

/// Distance below which a Green's function evaluation is rejected.
pub const MIN_SOURCE_DISTANCE: f64 = 1e-9;

fn default_speed_of_sound() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// Room extent `(Lx, Ly, Lz)` in meters.
    pub dims: [f64; 3],
    /// Reverberation time in seconds.
    pub t60: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    /// Centre of the unit-cube target region, in room coordinates.
    pub region_center: Point3,
}

impl Default for RoomSpec {
    /// 3 m × 4 m × 6 m, T60 = 200 ms, target region at the room centre.
    fn default() -> Self {
        RoomSpec {
            dims: [3.0, 4.0, 6.0],
            t60: 0.2,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            region_center: Point3::new(1.5, 2.0, 3.0),
        }
    }
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidRoom(format!(
                "dimensions must be positive, got {:?}",
                self.dims
            )));
        }
        if !(self.t60.is_finite() && self.t60 > 0.0) {
            return Err(Error::InvalidRoom(format!("t60 must be positive, got {}", self.t60)));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(Error::InvalidRoom(format!(
                "speed of sound must be positive, got {}",
                self.speed_of_sound
            )));
        }
        if !self.region_center.is_finite() {
            return Err(Error::InvalidRoom("region centre is not finite".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface_area(&self) -> f64 {
        let [a, b, c] = self.dims;
        2.0 * (a * b + a * c + b * c)
    }

    pub fn wavenumber(&self, frequency_hz: f64) -> f64 {
        2.0 * PI * frequency_hz / self.speed_of_sound
    }

    /// Strict interior test in room coordinates.
    pub fn contains(&self, p: Point3) -> bool {
        p.to_array()
            .iter()
            .zip(self.dims)
            .all(|(c, d)| *c > 0.0 && *c < d)
    }

    /// The target region in room coordinates.
    pub fn target_region(&self) -> Region {
        Region {
            center: self.region_center,
            half_width: 0.5,
        }
    }

    /// Maps a target-region-local point (origin at the region centre) into
    /// room coordinates.
    pub fn to_room(&self, local: Point3) -> Point3 {
        local + self.region_center
    }
}

/// Uniform wall amplitude reflection coefficient `β = √(1 − α)` from the
/// Sabine absorption `α = 24 ln10 · V / (c · S · T60)`.
pub fn reflection_coeff_from_t60(room: &RoomSpec) -> Result<f64> {
    room.validate()?;
    let alpha = 24.0 * LN_10 * room.volume() / (room.speed_of_sound * room.surface_area() * room.t60);
    if alpha >= 1.0 {
        return Err(Error::TooAbsorbent { alpha });
    }
    Ok((1.0 - alpha).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Room coordinates.
    pub position: Point3,
    /// Complex source strength, serialized as `[re, im]`.
    pub amplitude: Complex64,
}

impl SourceSpec {
    /// Unit-magnitude source with uniformly random phase, placed uniformly
    /// in the room at least `clearance` meters from every wall and from the
    /// target region.
    pub fn random<R: Rng + ?Sized>(room: &RoomSpec, clearance: f64, rng: &mut R) -> Result<Self> {
        room.validate()?;
        let region = room.target_region();
        let keep_out = Region {
            center: region.center,
            half_width: region.half_width + clearance,
        };
        if room.dims.iter().any(|d| *d <= 2.0 * clearance) {
            return Err(Error::InvalidRoom("room too small for source clearance".into()));
        }
        for _ in 0..100_000 {
            let p = Point3::new(
                rng.random_range(clearance..room.dims[0] - clearance),
                rng.random_range(clearance..room.dims[1] - clearance),
                rng.random_range(clearance..room.dims[2] - clearance),
            );
            if !keep_out.contains(p) {
                let phase = rng.random_range(0.0..2.0 * PI);
                return Ok(SourceSpec {
                    position: p,
                    amplitude: Complex64::from_polar(1.0, phase),
                });
            }
        }
        Err(Error::InvalidRoom("no admissible source position outside the target region".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSource {
    pub position: Point3,
    /// Product of wall reflection coefficients along the path.
    pub gain: f64,
    /// Total number of wall reflections.
    pub order: u32,
}

/// Mirror coordinate for integer image index `n` along an axis of length `len`.
fn mirror(n: i32, len: f64, s: f64) -> f64 {
    if n.rem_euclid(2) == 0 {
        f64::from(n) * len + s
    } else {
        f64::from(n + 1) * len - s
    }
}

/// All image sources with `|nx| + |ny| + |nz| <= max_order`.
pub fn enumerate_images(room: &RoomSpec, src: &SourceSpec, max_order: u32) -> Result<Vec<ImageSource>> {
    let beta = reflection_coeff_from_t60(room)?;
    if !room.contains(src.position) {
        return Err(Error::InvalidRoom(format!(
            "source {:?} is not strictly inside the room",
            src.position
        )));
    }
    let n = max_order as i32;
    let [lx, ly, lz] = room.dims;
    let s = src.position;
    let mut images = Vec::new();
    for nx in -n..=n {
        let rest_x = n - nx.abs();
        for ny in -rest_x..=rest_x {
            let rest_y = rest_x - ny.abs();
            for nz in -rest_y..=rest_y {
                let order = (nx.abs() + ny.abs() + nz.abs()) as u32;
                images.push(ImageSource {
                    position: Point3::new(mirror(nx, lx, s.x), mirror(ny, ly, s.y), mirror(nz, lz, s.z)),
                    gain: beta.powi(order as i32),
                    order,
                });
            }
        }
    }
    // Direct path first.
    images.sort_by_key(|im| im.order);
    Ok(images)
}

/// `Σ gain · exp(−i k r) / (4π r)` over an image set.
pub fn greens_sum(x: Point3, images: &[ImageSource], k: f64) -> Result<Complex64> {
    let mut re = 0.0;
    let mut im = 0.0;
    for image in images {
        let r = x.distance(image.position);
        if r < MIN_SOURCE_DISTANCE {
            return Err(Error::CoincidentSource { distance: r });
        }
        let a = image.gain / (4.0 * PI * r);
        let (s, c) = (k * r).sin_cos();
        re += a * c;
        im -= a * s;
    }
    Ok(Complex64::new(re, im))
}

/// Ground-truth field of a set of sources in a room, evaluated in
/// target-region-local coordinates.
#[derive(Clone, Debug)]
pub struct FieldSynthesizer {
    region_center: Point3,
    wavenumber: f64,
    sources: Vec<(Complex64, Vec<ImageSource>)>,
}

impl FieldSynthesizer {
    pub fn new(room: &RoomSpec, sources: &[SourceSpec], frequency_hz: f64, max_order: u32) -> Result<Self> {
        room.validate()?;
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::InvalidDataset(format!("frequency must be positive, got {frequency_hz}")));
        }
        let sources = sources
            .iter()
            .map(|s| Ok((s.amplitude, enumerate_images(room, s, max_order)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldSynthesizer {
            region_center: room.region_center,
            wavenumber: room.wavenumber(frequency_hz),
            sources,
        })
    }

    pub fn wavenumber(&self) -> f64 {
        self.wavenumber
    }

    /// Complex pressure at a room-coordinate point.
    pub fn pressure_room(&self, p: Point3) -> Result<Complex64> {
        let mut total = Complex64::new(0.0, 0.0);
        for (amplitude, images) in &self.sources {
            total += amplitude * greens_sum(p, images, self.wavenumber)?;
        }
        Ok(total)
    }

    /// Complex pressure at a target-region-local point.
    pub fn pressure(&self, local: Point3) -> Result<Complex64> {
        self.pressure_room(local + self.region_center)
    }
}
