//! Adam optimizer over flat parameter tensors.

use crate::error::{Error, Result};
use crate::model::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for a set of tensors plus the step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update over all tensors. Moments are allocated lazily on the
    /// first step; shapes must stay fixed afterwards.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &Gradients,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if params.len() != grads.tensors.len() {
            return Err(Error::Contract(format!(
                "adam: {} parameter tensors but {} gradient tensors",
                params.len(),
                grads.tensors.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        for (ix, p) in params.iter_mut().enumerate() {
            let g = &grads.tensors[ix];
            if p.len() != g.len() {
                return Err(Error::Contract(format!(
                    "adam: tensor {ix} length mismatch ({} vs {})",
                    p.len(),
                    g.len()
                )));
            }
            adam_step(
                p,
                g,
                &mut self.m[ix],
                &mut self.v[ix],
                self.t,
                cfg,
            );
        }
        Ok(())
    }
}

/// Standard Adam update with bias correction for one tensor:
/// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2) g²`,
/// `θ ← θ - lr * m̂ / (sqrt(v̂) + ε)`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..params.len() {
        let g = grads[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}
