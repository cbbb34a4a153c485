//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, LossTerm, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("AdamW betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("AdamW eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moments aligned with the flattened trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update:
///
/// ```text
/// m ← β1 m + (1-β1) g,   v ← β2 v + (1-β2) g²
/// θ ← θ - lr · ( m̂ / (√v̂ + ε) + wd · θ )
/// ```
///
/// Fails without touching parameters or state if any gradient entry is
/// non-finite.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    lr: f64,
    config: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    let mut total = 0;
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                got: g.len(),
            });
        }
        total += p.len();
    }
    if total != state.first_moment.len() {
        return Err(Error::DimensionMismatch {
            expected: state.first_moment.len(),
            got: total,
        });
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            term: LossTerm::Gradient,
            iteration: Some(state.step as usize),
        });
    }

    state.step += 1;
    let t = state.step as i32;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = *config;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let mut offset = 0;
    for (p, g) in params.iter_mut().zip(grads) {
        let m = &mut state.first_moment[offset..offset + p.len()];
        let v = &mut state.second_moment[offset..offset + p.len()];
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * p[i]);
        }
        offset += p.len();
    }
    Ok(())
}
