//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::vae::backward::VaeGrads;
use crate::vae::params::{VaeDims, VaeParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: VaeParams,
    v: VaeParams,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dims: VaeDims) -> Self {
        AdamState {
            m: VaeParams::zeros(dims),
            v: VaeParams::zeros(dims),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One update. Weight decay is decoupled from the moment estimates and
    /// only touches weight matrices, never biases.
    pub fn step(
        &mut self,
        params: &mut VaeParams,
        grads: &VaeGrads,
        learning_rate: f64,
        weight_decay: f64,
    ) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        let g_all = grads.tensors();
        let mut m_all = self.m.tensors_mut();
        let mut v_all = self.v.tensors_mut();
        for (t_idx, (p, decays)) in params.tensors_mut().into_iter().enumerate() {
            let g = g_all[t_idx];
            let m = &mut m_all[t_idx].0;
            let v = &mut v_all[t_idx].0;
            let decay = if decays { learning_rate * weight_decay } else { 0.0 };
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / b1c;
                let vhat = v[i] / b2c;
                p[i] -= learning_rate * mhat / (vhat.sqrt() + self.epsilon) + decay * p[i];
            }
        }
    }
}
