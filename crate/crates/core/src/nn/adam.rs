//! Adam optimizer with bias correction and decoupled L2 shrinkage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamTensors, Tensor};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay: applied as `θ ← θ − lr·l2·θ` after the Adam
    /// update rather than folded into the gradient.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, l2: 1e-6 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("adam epsilon must be > 0"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::config("l2 must be >= 0"));
        }
        Ok(())
    }
}

/// First/second moment estimates per parameter tensor, in the enumeration
/// order fixed by [`ParamTensors`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<Moment>,
}

#[derive(Debug, Clone)]
struct Moment {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn for_model<M: ParamTensors>(model: &M, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let moments = model
            .tensors()
            .iter()
            .map(|(_, t)| Moment { m: vec![0.0; t.data().len()], v: vec![0.0; t.data().len()] })
            .collect();
        Ok(Adam { cfg, step: 0, moments })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over all parameter tensors. `grads` must enumerate the same
    /// tensors (same order, same shapes) as `params`.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[(String, &Tensor)]) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(Error::shape(format!(
                "adam: {} parameter tensors, {} gradient tensors, {} moment slots",
                params.len(),
                grads.len(),
                self.moments.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);
        let lr = self.cfg.learning_rate;
        let decay = lr * self.cfg.l2;

        for (((name, param), (gname, grad)), moment) in
            params.iter_mut().zip(grads).zip(&mut self.moments)
        {
            if !param.same_shape(grad) {
                return Err(Error::shape(format!(
                    "adam: shape mismatch between param '{name}' and grad '{gname}'"
                )));
            }
            let p = param.data_mut();
            let g = grad.data();
            for i in 0..p.len() {
                // Biased first/second moment estimates, then bias-corrected step.
                moment.m[i] = self.cfg.beta1 * moment.m[i] + (1.0 - self.cfg.beta1) * g[i];
                moment.v[i] = self.cfg.beta2 * moment.v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = moment.m[i] / bias1;
                let v_hat = moment.v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
                // Decoupled shrinkage, independent of the gradient.
                p[i] -= decay * p[i];
            }
        }
        Ok(())
    }
}
