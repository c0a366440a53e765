use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam descent step on `params` along `grads`.
pub fn adam_step(params: &mut ParameterSet, grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of {}[{}] (tensor {}) = {}",
            params.name(),
            i,
            params.name_of_index(i),
            grads[i]
        )));
    }
    state.t += 1;
    let b1t = 1.0 - cfg.beta1.powi(state.t as i32);
    let b2t = 1.0 - cfg.beta2.powi(state.t as i32);
    let values = params.values_mut();
    for i in 0..values.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / b1t;
        let v_hat = state.v[i] / b2t;
        values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Soft update `target <- mix * source + (1 - mix) * target`.
pub fn copy_to_target(source: &ParameterSet, target: &mut ParameterSet, mix: f64) -> Result<()> {
    if !(mix > 0.0 && mix <= 1.0) {
        return Err(invalid(format!("target mix {mix} must lie in (0, 1]")));
    }
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: source.len(),
        });
    }
    let src = source.values();
    if mix == 1.0 {
        target.values_mut().copy_from_slice(src);
        return Ok(());
    }
    for (t, s) in target.values_mut().iter_mut().zip(src) {
        *t = mix * s + (1.0 - mix) * *t;
    }
    Ok(())
}
