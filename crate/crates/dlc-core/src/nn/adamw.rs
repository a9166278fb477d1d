//! AdamW with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::nn::ParamLayout;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: step counter plus first/second moments aligned with the
/// flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamWState {
    pub fn new(param_count: usize, cfg: AdamWConfig) -> Self {
        AdamWState {
            cfg,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update in place. `layout` is used to name the offending array
/// if a non-finite gradient shows up.
pub fn adamw_step(
    state: &mut AdamWState,
    params: &mut [f32],
    grads: &[f32],
    layout: &ParamLayout,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CoreError::ShapeMismatch {
            expected: alloc::format!("{} params/grads/moments", state.m.len()),
            got: alloc::format!("{} params, {} grads", params.len(), grads.len()),
        });
    }
    for (i, &g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(CoreError::NonFinite(alloc::format!(
                "gradient of {}",
                layout.name_of_index(i)
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c = state.cfg;
    let bc1 = 1.0 - libm::pow(c.beta1 as f64, t);
    let bc2 = 1.0 - libm::pow(c.beta2 as f64, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / bc1 as f32;
        let v_hat = state.v[i] / bc2 as f32;
        params[i] -= c.lr * (m_hat / (libm::sqrtf(v_hat) + c.eps) + c.weight_decay * params[i]);
    }
    for (i, &p) in params.iter().enumerate() {
        if !p.is_finite() {
            return Err(CoreError::NonFinite(alloc::format!(
                "parameter {} after update",
                layout.name_of_index(i)
            )));
        }
    }
    Ok(())
}
