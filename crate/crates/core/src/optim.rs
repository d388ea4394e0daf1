//! AdamW with bias correction, and the cosine-annealing schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGrads};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            base_lr: 3e-4,
            min_lr: 3e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr >= 0.0
            && self.min_lr >= 0.0
            && self.min_lr <= self.base_lr
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// Moment accumulators, one vector per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(config: AdamWConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: AdamWConfig, params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(config, &shapes)
    }

    /// Clears the moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.fill(0.0);
        }
    }

    /// One update over raw tensors. Rejects non-finite gradients without
    /// touching the parameters or the state.
    ///
    /// ```text
    /// w <- w - lr * wd * w
    /// m <- b1 m + (1 - b1) g,   v <- b2 v + (1 - b2) g^2
    /// w <- w - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    /// ```
    pub fn step_tensors(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::dim(format!(
                "{} parameter tensors, {} gradient tensors, {} moment tensors",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[i].len() {
                return Err(Error::dim(format!("tensor {i}: shape mismatch")));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric("non-finite gradient; step rejected"));
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - lr * c.weight_decay;
        for (ti, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[ti];
            let v = &mut self.second_moment[ti];
            for k in 0..p.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] = p[k] * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
        let mut p = params.tensors_mut();
        self.step_tensors(&mut p, &grads.tensors(), lr)
    }
}

/// `min_lr + (base_lr - min_lr) * (1 + cos(pi * epoch / total)) / 2`
pub fn cosine_lr(epoch: f64, total_epochs: f64, base_lr: f64, min_lr: f64) -> Result<f64> {
    if !(total_epochs > 0.0) || !(0.0..=total_epochs).contains(&epoch) {
        return Err(Error::config(format!(
            "epoch {epoch} outside schedule [0, {total_epochs}]"
        )));
    }
    Ok(min_lr + 0.5 * (base_lr - min_lr) * (1.0 + (PI * epoch / total_epochs).cos()))
}
