use serde::{Deserialize, Serialize};

use crate::error::{HdrmError, Result};

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Applies one update. Returns `Ok(false)` and leaves everything
    /// untouched when a gradient entry is not finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<bool> {
        HdrmError::check_len(self.m.len(), params.len())?;
        HdrmError::check_len(self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            log::warn!("skipping optimizer step {}: non-finite gradient", self.step + 1);
            return Ok(false);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[k]);
        }
        Ok(true)
    }
}
