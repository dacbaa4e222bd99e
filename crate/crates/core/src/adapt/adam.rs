use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `values` in place. `step` counts from 1.
pub fn adam_step(values: &mut [f32], grads: &[f32], state: &mut AdamState, cfg: &AdamConfig, step: u64) -> Result<()> {
    if step == 0 {
        return Err(Error::Contract("adam step index starts at 1".into()));
    }
    if values.len() != grads.len() || state.m.len() != values.len() {
        return Err(Error::Shape {
            op: "adam_step",
            lhs: vec![values.len(), state.m.len()],
            rhs: vec![grads.len()],
        });
    }
    let t = i32::try_from(step).unwrap_or(i32::MAX);
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..values.len() {
        let g = f64::from(grads[i]);
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let update = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        values[i] = (f64::from(values[i]) - update) as f32;
    }
    Ok(())
}
