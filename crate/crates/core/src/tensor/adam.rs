//! Bias-corrected Adam and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Adam hyperparameters. The defaults are the standard ones.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(numel: usize, cfg: AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            t: 0,
            cfg,
        }
    }
}

/// One bias-corrected Adam update, applied in place. Increments `state.t`.
pub fn adam_step(param: &mut [f32], grad: &[f32], state: &mut AdamState) -> Result<()> {
    if grad.len() != param.len() {
        return Err(Error::AdamShape {
            param: param.len(),
            what: "gradient",
            other: grad.len(),
        });
    }
    if state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::AdamShape {
            param: param.len(),
            what: "moment buffer",
            other: state.m.len(),
        });
    }
    state.t += 1;
    let cfg = state.cfg;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. The norm is accumulated in f64 in map order so
/// the result is deterministic.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f32>>, max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for &v in g {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}
