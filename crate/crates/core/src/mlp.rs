//! Random-Fourier-feature MLPs evaluated on second-order jets.
//!
//! A batch of `n` points is carried as one matrix with `comps · n` rows:
//! rows `[0, n)` hold values, and for [`Order::Laplacian`] rows
//! `[n, 2n)`, `[2n, 3n)`, `[3n, 4n)` hold the x/y/z partials and
//! `[4n, 5n)` the Laplacians. An affine layer then maps every component with
//! a single matrix product (the bias only touches value rows), and `tanh`
//! mixes components through
//!
//! ```text
//! v' = σ(z),  ∇' = σ'(z)·∇z,  Δ' = σ''(z)·|∇z|² + σ'(z)·Δz
//! ```
//!
//! Parameter gradients are obtained by reverse accumulation over this
//! extended forward computation; [`MlpParams::backward`] is the adjoint of
//! [`MlpParams::forward_batch`].

use std::f64::consts::PI;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::jet::Jet;

const TWO_PI: f64 = 2.0 * PI;

/// Which derivatives a batch carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Values only.
    Value,
    /// Value, gradient and Laplacian.
    Laplacian,
}

impl Order {
    pub const fn components(self) -> usize {
        match self {
            Order::Value => 1,
            Order::Laplacian => 5,
        }
    }
}

/// Jets for `points` inputs stacked component-major, see module docs.
#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    pub points: usize,
    pub order: Order,
    pub data: Array2<f64>,
}

impl JetBatch {
    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.data.slice(s![0..self.points, ..])
    }

    /// Jet of column `col` at point `i`. Missing derivatives read as zero.
    pub fn jet(&self, i: usize, col: usize) -> Jet {
        let n = self.points;
        let d = &self.data;
        match self.order {
            Order::Value => Jet::constant(d[[i, col]]),
            Order::Laplacian => Jet::new(
                d[[i, col]],
                [d[[n + i, col]], d[[2 * n + i, col]], d[[3 * n + i, col]]],
                d[[4 * n + i, col]],
            ),
        }
    }

    pub fn from_jets(rows: &[Vec<Jet>]) -> Result<Self> {
        let n = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Array2::zeros((5 * n, width));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            for (j, jet) in row.iter().enumerate() {
                data[[i, j]] = jet.value;
                for k in 0..3 {
                    data[[(k + 1) * n + i, j]] = jet.grad[k];
                }
                data[[4 * n + i, j]] = jet.lap;
            }
        }
        Ok(JetBatch {
            points: n,
            order: Order::Laplacian,
            data,
        })
    }
}

/// Fixed Gaussian frequency matrix `B` for the embedding
/// `γ(x) = [sin(2πBx); cos(2πBx)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffMatrix {
    b: Array2<f64>,
    seed: u64,
}

impl RffMatrix {
    /// Draws a `rows × 3` matrix with i.i.d. standard normal entries.
    pub fn sample(rows: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Array2::from_shape_simple_fn((rows, 3), || StandardNormal.sample(&mut rng));
        RffMatrix { b, seed }
    }

    pub fn from_matrix(b: Array2<f64>, seed: u64) -> Result<Self> {
        if b.ncols() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: b.ncols(),
            });
        }
        Ok(RffMatrix { b, seed })
    }

    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.b
    }

    /// Number of embedding features (sines then cosines).
    pub fn features(&self) -> usize {
        2 * self.rows()
    }

    /// Feature jets at a single point.
    pub fn embed(&self, x: Point3) -> Vec<Jet> {
        let r = self.rows();
        let mut out = vec![Jet::default(); 2 * r];
        for (i, row) in self.b.outer_iter().enumerate() {
            let w = [TWO_PI * row[0], TWO_PI * row[1], TWO_PI * row[2]];
            let theta = w[0] * x.x + w[1] * x.y + w[2] * x.z;
            let w2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
            let (s, c) = theta.sin_cos();
            out[i] = Jet::new(s, w.map(|wk| wk * c), -w2 * s);
            out[r + i] = Jet::new(c, w.map(|wk| -wk * s), -w2 * c);
        }
        out
    }

    fn embed_into(&self, pts: &[Point3], order: Order, data: &mut Array2<f64>) {
        let n = pts.len();
        let r = self.rows();
        for (j, row) in self.b.outer_iter().enumerate() {
            let w = [TWO_PI * row[0], TWO_PI * row[1], TWO_PI * row[2]];
            let w2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
            for (i, x) in pts.iter().enumerate() {
                let (s, c) = (w[0] * x.x + w[1] * x.y + w[2] * x.z).sin_cos();
                data[[i, j]] = s;
                data[[i, r + j]] = c;
                if order == Order::Laplacian {
                    for k in 0..3 {
                        data[[(k + 1) * n + i, j]] = w[k] * c;
                        data[[(k + 1) * n + i, r + j]] = -w[k] * s;
                    }
                    data[[4 * n + i, j]] = -w2 * s;
                    data[[4 * n + i, r + j]] = -w2 * c;
                }
            }
        }
    }
}

/// Input map from coordinates to network features.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedding {
    Fourier(RffMatrix),
    /// Raw coordinates; used for analytic fixtures.
    Identity,
}

impl Embedding {
    pub fn width(&self) -> usize {
        match self {
            Embedding::Fourier(b) => b.features(),
            Embedding::Identity => 3,
        }
    }

    pub fn embed(&self, x: Point3) -> Vec<Jet> {
        match self {
            Embedding::Fourier(b) => b.embed(x),
            Embedding::Identity => (0..3).map(|k| Jet::coordinate(k, x.to_array()[k])).collect(),
        }
    }

    pub fn embed_batch(&self, pts: &[Point3], order: Order) -> JetBatch {
        let n = pts.len();
        let mut data = Array2::zeros((order.components() * n, self.width()));
        match self {
            Embedding::Fourier(b) => b.embed_into(pts, order, &mut data),
            Embedding::Identity => {
                for (i, p) in pts.iter().enumerate() {
                    for (k, c) in p.to_array().into_iter().enumerate() {
                        data[[i, k]] = c;
                        if order == Order::Laplacian {
                            data[[(k + 1) * n + i, k]] = 1.0;
                        }
                    }
                }
            }
        }
        JetBatch {
            points: n,
            order,
            data,
        }
    }
}

/// Affine layer `z = W a + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// MLP with `tanh` on hidden layers and identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Hidden-layer layout of one network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpShape {
    pub hidden_layers: usize,
    pub width: usize,
}

impl MlpShape {
    pub fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        dims.push(output);
        dims
    }
}

/// Intermediate values recorded by [`MlpParams::forward_batch`].
#[derive(Clone, Debug)]
pub struct Tape {
    points: usize,
    order: Order,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    sig: Vec<Array2<f64>>,
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases for layer widths `dims`.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite Glorot limit");
                Layer {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams::zeros(&self.dims())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.iter().map(|l| l.weight.ncols()).collect();
        if let Some(last) = self.layers.last() {
            dims.push(last.weight.nrows());
        }
        dims
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.ncols())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[1].weight.ncols() != pair[0].weight.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].weight.nrows(),
                    got: pair[1].weight.ncols(),
                });
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: l.weight.nrows(),
                    got: l.bias.len(),
                });
            }
        }
        Ok(())
    }

    /// Tensors in canonical order: every weight matrix (row-major), then
    /// every bias vector.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let weights = self.layers.iter().map(|l| l.weight.as_slice().expect("standard layout"));
        let biases = self.layers.iter().map(|l| l.bias.as_slice().expect("standard layout"));
        weights.chain(biases).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &mut self.layers {
            weights.push(l.weight.as_slice_mut().expect("standard layout"));
            biases.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        weights.extend(biases);
        weights
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Value, gradient and Laplacian of a single-output network at one point.
    pub fn forward_jet(&self, input: &[Jet]) -> Result<Jet> {
        if self.output_width() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.output_width(),
            });
        }
        let batch = JetBatch::from_jets(&[input.to_vec()])?;
        let (out, _) = self.forward_batch(batch)?;
        Ok(out.jet(0, 0))
    }

    /// Plain forward pass on an `n × input_width` matrix.
    pub fn forward_values(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut a = input.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if l != last {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        Ok(a)
    }

    fn check_input(&self, width: usize) -> Result<()> {
        self.validate()?;
        if width != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: width,
            });
        }
        Ok(())
    }

    /// Jet-valued forward pass, recording what [`MlpParams::backward`] needs.
    pub fn forward_batch(&self, input: JetBatch) -> Result<(JetBatch, Tape)> {
        self.check_input(input.width())?;
        let JetBatch { points: n, order, data } = input;
        let mut tape = Tape {
            points: n,
            order,
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::new(),
            sig: Vec::new(),
        };
        let last = self.layers.len() - 1;
        let mut a = data;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            {
                let mut values = z.slice_mut(s![0..n, ..]);
                values += &layer.bias;
            }
            tape.inputs.push(a);
            if l == last {
                return Ok((JetBatch { points: n, order, data: z }, tape));
            }
            let (act, sig) = tanh_forward(&z, n, order);
            tape.pre.push(z);
            tape.sig.push(sig);
            a = act;
        }
        unreachable!("validated network has at least one layer")
    }

    /// Accumulates `∂loss/∂θ` into `grad` given the adjoint of the output
    /// batch (same layout as the forward output).
    pub fn backward(&self, tape: &Tape, out_adjoint: Array2<f64>, grad: &mut MlpParams) {
        let n = tape.points;
        let mut zbar = out_adjoint;
        for l in (0..self.layers.len()).rev() {
            let g = &mut grad.layers[l];
            general_mat_mul(1.0, &zbar.t(), &tape.inputs[l], 1.0, &mut g.weight);
            g.bias += &zbar.slice(s![0..n, ..]).sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let abar = zbar.dot(&self.layers[l].weight);
            zbar = tanh_backward(&abar, &tape.pre[l - 1], &tape.sig[l - 1], n, tape.order);
        }
    }
}

/// Returns the activated batch and `σ = tanh(z)` of the value rows.
fn tanh_forward(z: &Array2<f64>, n: usize, order: Order) -> (Array2<f64>, Array2<f64>) {
    let w = z.ncols();
    let zs = z.as_slice().expect("standard layout");
    let sig: Vec<f64> = zs[..n * w].iter().map(|v| v.tanh()).collect();
    let mut out = vec![0.0; zs.len()];
    out[..n * w].copy_from_slice(&sig);
    if order == Order::Laplacian {
        let block = n * w;
        for idx in 0..block {
            let t = sig[idx];
            let s1 = 1.0 - t * t;
            let s2 = -2.0 * t * s1;
            let (gx, gy, gz) = (zs[block + idx], zs[2 * block + idx], zs[3 * block + idx]);
            out[block + idx] = s1 * gx;
            out[2 * block + idx] = s1 * gy;
            out[3 * block + idx] = s1 * gz;
            out[4 * block + idx] = s2 * (gx * gx + gy * gy + gz * gz) + s1 * zs[4 * block + idx];
        }
    }
    (
        Array2::from_shape_vec(z.raw_dim(), out).expect("shape preserved"),
        Array2::from_shape_vec((n, w), sig).expect("shape preserved"),
    )
}

/// Adjoint of [`tanh_forward`].
fn tanh_backward(obar: &Array2<f64>, z: &Array2<f64>, sig: &Array2<f64>, n: usize, order: Order) -> Array2<f64> {
    let w = z.ncols();
    let block = n * w;
    let ob = obar.as_slice().expect("standard layout");
    let zs = z.as_slice().expect("standard layout");
    let sg = sig.as_slice().expect("standard layout");
    let mut zbar = vec![0.0; ob.len()];
    match order {
        Order::Value => {
            for idx in 0..block {
                let t = sg[idx];
                zbar[idx] = ob[idx] * (1.0 - t * t);
            }
        }
        Order::Laplacian => {
            for idx in 0..block {
                let t = sg[idx];
                let s1 = 1.0 - t * t;
                let s2 = -2.0 * t * s1;
                let s3 = -2.0 * s1 * s1 + 4.0 * t * t * s1;
                let g = [zs[block + idx], zs[2 * block + idx], zs[3 * block + idx]];
                let og = [ob[block + idx], ob[2 * block + idx], ob[3 * block + idx]];
                let ol = ob[4 * block + idx];
                let gg = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                let og_dot_g = og[0] * g[0] + og[1] * g[1] + og[2] * g[2];
                zbar[idx] = ob[idx] * s1 + s2 * (og_dot_g + ol * zs[4 * block + idx]) + ol * gg * s3;
                for k in 0..3 {
                    zbar[(k + 1) * block + idx] = og[k] * s1 + 2.0 * ol * s2 * g[k];
                }
                zbar[4 * block + idx] = ol * s1;
            }
        }
    }
    Array2::from_shape_vec(obar.raw_dim(), zbar).expect("shape preserved")
}
