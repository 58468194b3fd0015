use std::collections::HashMap;

use super::params::{CriticHead, ModelParams};
use super::transformer::{Mode, Sequence};
use crate::error::{Error, Result};
use crate::linalg::{dot, matmul_acc};

/// Intermediate values of one critic-head evaluation.
#[derive(Debug, Clone)]
pub struct CriticActs {
    pub input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub value: f64,
}

impl CriticHead {
    pub fn input_dim(&self) -> usize {
        self.w1.len() / self.b1.len()
    }

    pub fn forward(&self, x: &[f64]) -> CriticActs {
        let (n1, n2) = self.hidden();
        let mut h1 = self.b1.clone();
        matmul_acc(x, &self.w1, &mut h1, 1, x.len(), n1);
        h1.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut h2 = self.b2.clone();
        matmul_acc(&h1, &self.w2, &mut h2, 1, n1, n2);
        h2.iter_mut().for_each(|v| *v = v.max(0.0));
        let value = dot(&h2, &self.w3) + self.b3[0];
        CriticActs { input: x.to_vec(), h1, h2, value }
    }

    /// Accumulates `dv · ∂value/∂θ` into `grads`.
    pub fn backward(&self, acts: &CriticActs, dv: f64, grads: &mut CriticHead) {
        let (n1, n2) = self.hidden();
        let d = acts.input.len();
        grads.b3[0] += dv;
        let mut dh2 = vec![0.0; n2];
        for j in 0..n2 {
            grads.w3[j] += dv * acts.h2[j];
            if acts.h2[j] > 0.0 {
                dh2[j] = dv * self.w3[j];
            }
        }
        let mut dh1 = vec![0.0; n1];
        for i in 0..n1 {
            let h = acts.h1[i];
            let row = &self.w2[i * n2..(i + 1) * n2];
            let grow = &mut grads.w2[i * n2..(i + 1) * n2];
            let mut acc = 0.0;
            for j in 0..n2 {
                grow[j] += h * dh2[j];
                acc += row[j] * dh2[j];
            }
            if h > 0.0 {
                dh1[i] = acc;
            }
        }
        for j in 0..n2 {
            grads.b2[j] += dh2[j];
        }
        for (k, &x) in acts.input.iter().enumerate().take(d) {
            if x == 0.0 {
                continue;
            }
            for (g, dh) in grads.w1[k * n1..(k + 1) * n1].iter_mut().zip(&dh1) {
                *g += x * dh;
            }
        }
        for i in 0..n1 {
            grads.b1[i] += dh1[i];
        }
    }
}

impl ModelParams {
    /// Base-model final hidden state at the last token of `prefix`. This is
    /// the critic's input and never depends on the adapters.
    pub fn critic_features(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::InvalidInput("critic needs a non-empty observation".into()));
        }
        let acts = self.run(&Sequence::causal(prefix), Mode::Base)?;
        Ok(acts.hidden_row(prefix.len() - 1).to_vec())
    }

    pub fn critic_value(&self, prefix: &[u32]) -> Result<f64> {
        Ok(self.critic.forward(&self.critic_features(prefix)?).value)
    }
}

/// Memo of critic input features keyed by the observation tokens.
///
/// Features come from the frozen backbone only, so entries stay valid for
/// the whole finetuning run. Call [`CriticCache::clear`] if the base weights
/// ever change.
#[derive(Debug, Default, Clone)]
pub struct CriticCache {
    map: HashMap<Vec<u32>, Vec<f64>>,
}

impl CriticCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn features(&mut self, params: &ModelParams, prefix: &[u32]) -> Result<Vec<f64>> {
        if let Some(f) = self.map.get(prefix) {
            return Ok(f.clone());
        }
        let f = params.critic_features(prefix)?;
        self.map.insert(prefix.to_vec(), f.clone());
        Ok(f)
    }

    pub fn get(&self, prefix: &[u32]) -> Option<&Vec<f64>> {
        self.map.get(prefix)
    }

    pub fn insert(&mut self, prefix: Vec<u32>, features: Vec<f64>) {
        self.map.insert(prefix, features);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }
}
