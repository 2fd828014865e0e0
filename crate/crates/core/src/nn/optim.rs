//! Adam with linear warmup followed by inverse square-root decay.

use serde::{Deserialize, Serialize};

use super::graph::ParamStore;
use super::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup: 100,
            clip: 1.0,
        }
    }
}

pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: usize,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Learning rate at 1-based step `t`.
    pub fn rate(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        let w = self.config.warmup.max(1) as f64;
        self.config.lr * (t / w).min((w / t).sqrt())
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Matrix]) {
        self.step += 1;
        let c = self.config;
        let norm = grads
            .iter()
            .flat_map(|g| g.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let clip = if c.clip > 0.0 && norm > c.clip { c.clip / norm } else { 1.0 };
        let lr = self.rate(self.step);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .values
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i] * clip;
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}
