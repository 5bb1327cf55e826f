//! AdamW with decoupled weight decay and linear per-epoch schedules.

use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Linear interpolation from `start` (first epoch) to `end` (last epoch).
pub fn linear_decay(start: f64, end: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return start;
    }
    let f = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
    start + (end - start) * f
}

#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter with its accumulated gradient. The
    /// weight decay is applied to the weights directly, scaled by the
    /// learning rate, and is not mixed into the moment estimates.
    pub fn step<S: Scalar>(&mut self, params: &mut [&mut Param<S>], lr: f64, weight_decay: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(
            self.m.len(),
            params.len(),
            "optimizer bound to another model"
        );
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i].f64();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = p.value[i].f64();
                let w = w - lr * weight_decay * w - lr * mhat / (vhat.sqrt() + c.eps);
                p.value[i] = S::lit(w);
            }
        }
    }
}
