//! Two-network complex field model `u(x) = exp(g(x) + iφ(x))`.
//!
//! `g` is the natural-log magnitude and `φ` the (unwrapped) phase. With
//! `h = g + iφ`, the Laplacian composes as `Δu = u·(Δh + ∇h·∇h)` where
//! `∇h·∇h = |∇g|² − |∇φ|² + 2i ∇g·∇φ`, so the Helmholtz residual is
//! `u·(Δh + ∇h·∇h + k²)` and its squared modulus is
//! `e^{2g}·|Δh + ∇h·∇h + k²|²`, independent of the absolute phase.

use std::f64::consts::LN_10;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Measurement;
use crate::error::{Error, LossTerm, Result};
use crate::geometry::Point3;
use crate::jet::Jet;
use crate::mlp::{Embedding, MlpParams, MlpShape, Order, RffMatrix};

/// dB per neper of amplitude: `20 / ln 10`.
pub const DB_PER_NEPER: f64 = 20.0 / LN_10;

/// Log-magnitudes above this overflow `exp`.
pub const MAX_LOG_MAGNITUDE: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkShape {
    /// Rows of the Fourier matrix; the embedding has twice as many features.
    pub rff_rows: usize,
    pub hidden_layers: usize,
    pub width: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape {
            rff_rows: 128,
            hidden_layers: 4,
            width: 256,
        }
    }
}

impl NetworkShape {
    pub fn mlp(&self) -> MlpShape {
        MlpShape {
            hidden_layers: self.hidden_layers,
            width: self.width,
        }
    }
}

/// Complex value as a pair of real jets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexJet {
    pub re: Jet,
    pub im: Jet,
}

impl ComplexJet {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value, self.im.value)
    }

    pub fn laplacian(&self) -> Complex64 {
        Complex64::new(self.re.lap, self.im.lap)
    }

    pub fn gradient(&self) -> [Complex64; 3] {
        [0, 1, 2].map(|k| Complex64::new(self.re.grad[k], self.im.grad[k]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub data: f64,
    pub pde: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { data: 1e-1, pde: 1e-3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.data.is_finite() && self.data > 0.0) {
            return Err(Error::Config(format!("lambda_data must be positive, got {}", self.data)));
        }
        if !(self.pde.is_finite() && self.pde >= 0.0) {
            return Err(Error::Config(format!("lambda_pde must be non-negative, got {}", self.pde)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Mean absolute log-spectral error in dB.
    pub data: f64,
    /// Mean squared Helmholtz residual.
    pub pde: f64,
    pub total: f64,
    pub lambda_data: f64,
    pub lambda_pde: f64,
}

impl LossBreakdown {
    pub fn new(data: f64, pde: f64, weights: LossWeights) -> Self {
        LossBreakdown {
            data,
            pde,
            total: weights.data * data + weights.pde * pde,
            lambda_data: weights.data,
            lambda_pde: weights.pde,
        }
    }
}

/// `∂loss/∂θ` for both networks, laid out like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    pub mag: MlpParams,
    pub phase: MlpParams,
}

impl ParamGradient {
    /// Canonical flat order: magnitude net tensors, then phase net tensors.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.mag.flatten();
        v.extend(self.phase.flatten());
        v
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mag.tensors();
        t.extend(self.phase.tensors());
        t
    }

    pub fn is_finite(&self) -> bool {
        self.mag.is_finite() && self.phase.is_finite()
    }
}

/// Helmholtz residual `(Δ + k²)u` of `u = exp(g + iφ)` from the jets of
/// `g` and `φ`.
pub fn log_field_residual(g: &Jet, phi: &Jet, k: f64) -> Result<Complex64> {
    if g.value > MAX_LOG_MAGNITUDE {
        return Err(Error::MagnitudeDiverged(g.value));
    }
    let q = Complex64::new(
        g.lap + g.grad_norm_sq() - phi.grad_norm_sq() + k * k,
        phi.lap + 2.0 * g.grad_dot(phi),
    );
    Ok(Complex64::from_polar(g.value.exp(), phi.value) * q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrbModel {
    /// Shared by both networks.
    pub embedding: Embedding,
    /// Outputs the natural-log magnitude `g(x)`.
    pub mag_net: MlpParams,
    /// Outputs the phase `φ(x)` in radians.
    pub phase_net: MlpParams,
}

impl PrbModel {
    /// Seeded initialization: `B ~ N(0, 1)` and Glorot-uniform weights.
    /// Both the physics-informed model and the data-only baseline start from
    /// this state for a given seed.
    pub fn new(shape: &NetworkShape, seed: u64) -> Self {
        let rff = RffMatrix::sample(shape.rff_rows, seed);
        let dims = shape.mlp().dims(rff.features(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mag_net = MlpParams::glorot(&dims, &mut rng);
        rng.set_stream(2);
        let phase_net = MlpParams::glorot(&dims, &mut rng);
        PrbModel {
            embedding: Embedding::Fourier(rff),
            mag_net,
            phase_net,
        }
    }

    pub fn from_parts(embedding: Embedding, mag_net: MlpParams, phase_net: MlpParams) -> Result<Self> {
        for net in [&mag_net, &phase_net] {
            net.validate()?;
            if net.input_width() != embedding.width() {
                return Err(Error::DimensionMismatch {
                    expected: embedding.width(),
                    got: net.input_width(),
                });
            }
            if net.output_width() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: net.output_width(),
                });
            }
        }
        Ok(PrbModel {
            embedding,
            mag_net,
            phase_net,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mag_net.param_count() + self.phase_net.param_count()
    }

    pub fn zero_gradient(&self) -> ParamGradient {
        ParamGradient {
            mag: self.mag_net.zeros_like(),
            phase: self.phase_net.zeros_like(),
        }
    }

    /// Jets of `g` and `φ` at one point.
    pub fn log_jets(&self, x: Point3) -> Result<(Jet, Jet)> {
        let features = self.embedding.embed(x);
        Ok((self.mag_net.forward_jet(&features)?, self.phase_net.forward_jet(&features)?))
    }

    /// `u(x)` with exact gradient and Laplacian of its real and imaginary parts.
    pub fn reconstruct(&self, x: Point3) -> Result<ComplexJet> {
        let (g, phi) = self.log_jets(x)?;
        if g.value > MAX_LOG_MAGNITUDE {
            return Err(Error::MagnitudeDiverged(g.value));
        }
        let m = g.exp();
        Ok(ComplexJet {
            re: m * phi.cos(),
            im: m * phi.sin(),
        })
    }

    pub fn helmholtz_residual(&self, x: Point3, k: f64) -> Result<Complex64> {
        let (g, phi) = self.log_jets(x)?;
        log_field_residual(&g, &phi, k)
    }

    pub fn log_magnitudes(&self, pts: &[Point3]) -> Result<Vec<f64>> {
        let emb = self.embedding.embed_batch(pts, Order::Value);
        let out = self.mag_net.forward_values(emb.values())?;
        Ok(out.column(0).to_vec())
    }

    /// `|u|` at each point.
    pub fn magnitudes(&self, pts: &[Point3]) -> Result<Vec<f64>> {
        self.log_magnitudes(pts)?
            .into_iter()
            .map(|g| {
                if g > MAX_LOG_MAGNITUDE {
                    Err(Error::MagnitudeDiverged(g))
                } else {
                    Ok(g.exp())
                }
            })
            .collect()
    }

    /// `(1/M) Σ |20 log10(a_m / |u(x_m)|)|` in dB.
    pub fn data_loss(&self, measurements: &[Measurement]) -> Result<f64> {
        self.data_term(measurements, 1.0, None)
    }

    /// `(1/P) Σ |(Δ + k²)u(x_p)|²`.
    pub fn pde_loss(&self, collocation: &[Point3], k: f64) -> Result<f64> {
        self.pde_term(collocation, k, 1.0, None)
    }

    pub fn total_loss(
        &self,
        measurements: &[Measurement],
        collocation: &[Point3],
        k: f64,
        weights: LossWeights,
    ) -> Result<LossBreakdown> {
        weights.validate()?;
        let data = self.data_loss(measurements)?;
        let pde = self.pde_loss(collocation, k)?;
        Ok(LossBreakdown::new(data, pde, weights))
    }

    /// Weighted loss and its parameter gradient. An empty collocation batch
    /// skips the physics term (reported as zero).
    pub fn loss_and_gradient(
        &self,
        measurements: &[Measurement],
        collocation: &[Point3],
        k: f64,
        weights: LossWeights,
    ) -> Result<(LossBreakdown, ParamGradient)> {
        weights.validate()?;
        let mut grad = self.zero_gradient();
        let data = self.data_term(measurements, weights.data, Some(&mut grad.mag))?;
        let pde = if collocation.is_empty() {
            0.0
        } else {
            self.pde_term(collocation, k, weights.pde, Some(&mut grad))?
        };
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                term: LossTerm::Gradient,
                iteration: None,
            });
        }
        Ok((LossBreakdown::new(data, pde, weights), grad))
    }

    fn data_term(&self, measurements: &[Measurement], weight: f64, grad: Option<&mut MlpParams>) -> Result<f64> {
        if measurements.is_empty() {
            return Err(Error::InvalidDataset("data loss needs at least one measurement".into()));
        }
        if let Some(bad) = measurements.iter().find(|m| !(m.magnitude > 0.0)) {
            return Err(Error::NonpositiveMagnitude(bad.magnitude));
        }
        let pts: Vec<Point3> = measurements.iter().map(|m| m.position).collect();
        let emb = self.embedding.embed_batch(&pts, Order::Value);
        let (out, tape) = self.mag_net.forward_batch(emb)?;
        let m = measurements.len();
        let scale = DB_PER_NEPER / m as f64;
        let mut sum = 0.0;
        let mut adjoint = Array2::zeros((m, 1));
        for (i, meas) in measurements.iter().enumerate() {
            let diff = meas.magnitude.ln() - out.data[[i, 0]];
            sum += diff.abs();
            // d|ln a - g|/dg = -sign(ln a - g); zero at an exact fit.
            adjoint[[i, 0]] = -weight * scale * sign(diff);
        }
        let loss = scale * sum;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                term: LossTerm::Data,
                iteration: None,
            });
        }
        if let Some(g) = grad {
            self.mag_net.backward(&tape, adjoint, g);
        }
        Ok(loss)
    }

    fn pde_term(&self, collocation: &[Point3], k: f64, weight: f64, grad: Option<&mut ParamGradient>) -> Result<f64> {
        if collocation.is_empty() {
            return Err(Error::Config("collocation batch is empty".into()));
        }
        let p = collocation.len();
        let emb = self.embedding.embed_batch(collocation, Order::Laplacian);
        let (g_out, g_tape) = self.mag_net.forward_batch(emb.clone())?;
        let (f_out, f_tape) = self.phase_net.forward_batch(emb)?;
        let k2 = k * k;
        let scale = weight / p as f64;
        let mut g_adj = Array2::zeros((5 * p, 1));
        let mut f_adj = Array2::zeros((5 * p, 1));
        let mut sum = 0.0;
        for i in 0..p {
            let g = g_out.jet(i, 0);
            let f = f_out.jet(i, 0);
            if g.value > MAX_LOG_MAGNITUDE {
                return Err(Error::MagnitudeDiverged(g.value));
            }
            let e2 = (2.0 * g.value).exp();
            let qr = g.lap + g.grad_norm_sq() - f.grad_norm_sq() + k2;
            let qi = f.lap + 2.0 * g.grad_dot(&f);
            let term = e2 * (qr * qr + qi * qi);
            sum += term;

            let c = scale * e2;
            g_adj[[i, 0]] = scale * 2.0 * term;
            g_adj[[4 * p + i, 0]] = c * 2.0 * qr;
            f_adj[[4 * p + i, 0]] = c * 2.0 * qi;
            for d in 0..3 {
                g_adj[[(d + 1) * p + i, 0]] = c * 4.0 * (qr * g.grad[d] + qi * f.grad[d]);
                f_adj[[(d + 1) * p + i, 0]] = c * 4.0 * (qi * g.grad[d] - qr * f.grad[d]);
            }
        }
        let loss = sum / p as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                term: LossTerm::Pde,
                iteration: None,
            });
        }
        if let Some(grad) = grad {
            if weight != 0.0 {
                self.mag_net.backward(&g_tape, g_adj, &mut grad.mag);
                self.phase_net.backward(&f_tape, f_adj, &mut grad.phase);
            }
        }
        Ok(loss)
    }

    /// Parameter tensors in canonical order: magnitude net, then phase net.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.mag_net.tensors_mut();
        t.extend(self.phase_net.tensors_mut());
        t
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mag_net.tensors();
        t.extend(self.phase_net.tensors());
        t
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
