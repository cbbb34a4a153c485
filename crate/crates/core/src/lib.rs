//! Magnitude-only sound field estimation.
//!
//! A monochromatic pressure field `u(x)` is represented as `exp(g(x) + iφ(x))`
//! where `g` (log-magnitude) and `φ` (phase) are two random-Fourier-feature
//! MLPs. Only `|u|` is observed at sensor positions; the phase network is
//! recovered implicitly by penalising the Helmholtz residual `(Δ + k²)u`
//! at collocation points.
//!
//! Crate layout:
//!
//! - [`room`] and [`dataset`]: shoebox image-source simulator producing
//!   ground-truth fields and magnitude-only datasets.
//! - [`jet`] and [`mlp`]: value/gradient/Laplacian propagation through the
//!   networks, with reverse accumulation for parameter gradients.
//! - [`model`]: the two-network field model and its losses.
//! - [`optim`] and [`train`]: AdamW, step-decay schedule, training loop.
//! - [`baselines`]: nearest-neighbour interpolation and the physics-free
//!   neural field configuration.
//! - [`eval`]: log-spectral distance metrics, residual statistics and
//!   slice heatmaps.
//! - [`experiment`]: configuration documents and sweep orchestration used by
//!   the command line tool.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod jet;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod room;
pub mod train;

pub use error::{Error, LossTerm, Result};
pub use geometry::{Point3, Region};
pub use num_complex::Complex64;
