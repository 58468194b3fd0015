use serde::{Deserialize, Serialize};

use super::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; zero gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-5, weight_decay: 0.0 }
    }
}

/// Adam with optional decoupled weight decay, over any [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.tensors();
        let n: usize = grads.iter().map(|(_, g)| g.len()).sum();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
            self.t = 0;
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = c.lr / bc1;
        let mut k = 0;
        for (p, (_, g)) in params.tensors_mut().into_iter().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g) {
                if c.weight_decay != 0.0 {
                    *pi -= c.lr * c.weight_decay * *pi;
                }
                self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * gi;
                self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * gi * gi;
                *pi -= step * self.m[k] / ((self.v[k] / bc2).sqrt() + c.eps);
                k += 1;
            }
        }
    }
}
