use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, one pair per parameter block (non-trainable blocks keep empty moments).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    fn ensure(&mut self, params: &[&mut Param]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; if p.trainable { p.len() } else { 0 }]).collect();
            self.v = self.m.clone();
        }
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, config: &AdamConfig) {
    state.ensure(params);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.value[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
}
