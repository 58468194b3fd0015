//! Feature-vector actor-critic baseline.
//!
//! Two separate tanh networks (64-64) read the environment's symbolic
//! feature vector. Invalid actions are masked out of the softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::env::TaskEnv;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::linalg::log_sum_exp;
use crate::lm::{clip_grad_norm, Adam, AdamConfig, ParamSet};
use crate::policy::log_softmax_backward;
use crate::ppo::ActorCritic;

pub const HIDDEN: usize = 64;

/// Fully connected tanh network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

struct MlpActs {
    /// Layer inputs, then the output.
    layers: Vec<Vec<f64>>,
}

impl Mlp {
    /// Uniform fan-in init; the output layer is scaled by `out_gain`.
    pub fn init(sizes: &[usize], out_gain: f64, rng: &mut impl Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let gain = if l + 2 == sizes.len() { out_gain } else { 1.0 };
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            weights.push((0..w[0] * w[1]).map(|_| gain * u.sample(rng)).collect());
            biases.push(vec![0.0; w[1]]);
        }
        Self { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn forward(&self, x: &[f64]) -> MlpActs {
        let mut layers = vec![x.to_vec()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let inp = &layers[l];
            let mut out = b.clone();
            for i in 0..n_in {
                let xi = inp[i];
                if xi != 0.0 {
                    for (o, wv) in out.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                        *o += xi * wv;
                    }
                }
            }
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(out);
        }
        MlpActs { layers }
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).layers.pop().expect("output layer")
    }

    /// Accumulates parameter gradients of `d_out` into `grads`.
    fn backward(&self, acts: &MlpActs, d_out: &[f64], grads: &mut Mlp) {
        let last = self.weights.len() - 1;
        let mut d = d_out.to_vec();
        for l in (0..=last).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l < last {
                for (dv, y) in d.iter_mut().zip(&acts.layers[l + 1]) {
                    *dv *= 1.0 - y * y;
                }
            }
            let inp = &acts.layers[l];
            for (gb, dv) in grads.biases[l].iter_mut().zip(&d) {
                *gb += dv;
            }
            let mut d_in = vec![0.0; n_in];
            for i in 0..n_in {
                let row = i * n_out..(i + 1) * n_out;
                for ((gw, wv), dv) in grads.weights[l][row.clone()].iter_mut().zip(&self.weights[l][row]).zip(&d) {
                    *gw += inp[i] * dv;
                    d_in[i] += wv * dv;
                }
            }
            d = d_in;
        }
    }
}

impl ParamSet for Mlp {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("layer{l}.w"), w.as_slice()));
            out.push((format!("layer{l}.b"), b.as_slice()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }
}

/// Log-softmax over the unmasked logits; masked entries get `-inf`.
pub fn masked_distribution(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::InvalidInput("mask and logits differ in length".into()));
    }
    let live: Vec<f64> = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&l, _)| l).collect();
    if live.is_empty() {
        return Err(Error::InvalidInput("every action is masked".into()));
    }
    let z = log_sum_exp(&live);
    Ok(logits.iter().zip(mask).map(|(&l, &m)| if m { l - z } else { f64::NEG_INFINITY }).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpInput {
    pub features: Vec<f64>,
    pub valid: Vec<usize>,
    pub n_actions: usize,
}

impl MlpInput {
    fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_actions];
        for &a in &self.valid {
            m[a] = true;
        }
        m
    }

    /// Log-probabilities over `valid`.
    fn policy(&self, actor: &Mlp) -> Result<Vec<f64>> {
        let full = masked_distribution(&actor.output(&self.features), &self.mask())?;
        Ok(self.valid.iter().map(|&a| full[a]).collect())
    }
}

/// Saved form of an MLP agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub actor: Mlp,
    pub critic: Mlp,
}

pub struct MlpAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    actor_grads: Mlp,
    critic_grads: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl MlpAgent {
    pub fn new(feature_dim: usize, n_actions: usize, actor_lr: f64, critic_lr: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::init(&[feature_dim, HIDDEN, HIDDEN, n_actions], 0.01, &mut rng);
        let critic = Mlp::init(&[feature_dim, HIDDEN, HIDDEN, 1], 1.0, &mut rng);
        Self::from_weights(MlpWeights { actor, critic }, actor_lr, critic_lr)
    }

    pub fn for_env(env: &TaskEnv, actor_lr: f64, critic_lr: f64, seed: u64) -> Self {
        Self::new(env.feature_dim(), env.action_count(), actor_lr, critic_lr, seed)
    }

    pub fn from_weights(w: MlpWeights, actor_lr: f64, critic_lr: f64) -> Self {
        let adam = |lr| Adam::new(AdamConfig { lr, eps: 1e-5, ..AdamConfig::default() });
        Self {
            actor_grads: w.actor.zeros_like(),
            critic_grads: w.critic.zeros_like(),
            actor: w.actor,
            critic: w.critic,
            actor_opt: adam(actor_lr),
            critic_opt: adam(critic_lr),
        }
    }

    pub fn weights(&self) -> MlpWeights {
        MlpWeights { actor: self.actor.clone(), critic: self.critic.clone() }
    }
}

impl ActorCritic for MlpAgent {
    type Input = MlpInput;

    fn encode(&mut self, env: &TaskEnv) -> Result<MlpInput> {
        let features = env.features();
        if features.len() != self.actor.sizes[0] || env.action_count() != *self.actor.sizes.last().unwrap_or(&0) {
            return Err(Error::Mismatch(format!("network shape does not fit task {}", env.task)));
        }
        Ok(MlpInput { features, valid: env.valid_actions(), n_actions: env.action_count() })
    }

    fn actions<'a>(&self, input: &'a MlpInput) -> &'a [usize] {
        &input.valid
    }

    fn policy(&mut self, inputs: &[MlpInput], _exec: ExecMode) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|i| i.policy(&self.actor)).collect()
    }

    fn value(&mut self, inputs: &[MlpInput], _exec: ExecMode) -> Result<Vec<f64>> {
        Ok(inputs.iter().map(|i| self.critic.output(&i.features)[0]).collect())
    }

    fn trainable(&self) -> bool {
        true
    }

    fn policy_grad(
        &mut self,
        inputs: &[&MlpInput],
        dloss: &(dyn Fn(usize, &[f64]) -> Vec<f64> + Sync),
        _exec: ExecMode,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for (j, inp) in inputs.iter().enumerate() {
            let acts = self.actor.forward(&inp.features);
            let logits = acts.layers.last().expect("output layer");
            let live: Vec<f64> = inp.valid.iter().map(|&a| logits[a]).collect();
            if live.is_empty() {
                return Err(Error::InvalidInput("every action is masked".into()));
            }
            let z = log_sum_exp(&live);
            let lp: Vec<f64> = live.iter().map(|l| l - z).collect();
            let ds = log_softmax_backward(&lp, &dloss(j, &lp));
            let mut d_out = vec![0.0; inp.n_actions];
            for (&a, g) in inp.valid.iter().zip(ds) {
                d_out[a] = g;
            }
            self.actor.backward(&acts, &d_out, &mut self.actor_grads);
            out.push(lp);
        }
        Ok(out)
    }

    fn policy_step(&mut self, max_grad_norm: f64) -> Result<()> {
        clip_grad_norm(&mut self.actor_grads, max_grad_norm);
        self.actor_opt.step(&mut self.actor, &self.actor_grads);
        self.actor_grads.fill_zero();
        Ok(())
    }

    fn discard_policy_grad(&mut self) {
        self.actor_grads.fill_zero();
    }

    fn value_grad(
        &mut self,
        inputs: &[&MlpInput],
        dloss: &(dyn Fn(usize, f64) -> f64 + Sync),
        _exec: ExecMode,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for (j, inp) in inputs.iter().enumerate() {
            let acts = self.critic.forward(&inp.features);
            let v = acts.layers.last().expect("output layer")[0];
            self.critic.backward(&acts, &[dloss(j, v)], &mut self.critic_grads);
            out.push(v);
        }
        Ok(out)
    }

    fn value_step(&mut self, max_grad_norm: f64) -> Result<()> {
        clip_grad_norm(&mut self.critic_grads, max_grad_norm);
        self.critic_opt.step(&mut self.critic, &self.critic_grads);
        self.critic_grads.fill_zero();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_entries_get_no_mass() {
        let lp = masked_distribution(&[1.0, 5.0, 2.0], &[true, false, true]).unwrap();
        assert_eq!(lp[1], f64::NEG_INFINITY);
        let total: f64 = lp.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((lp[0] - (1.0 - (1f64.exp() + 2f64.exp()).ln())).abs() < 1e-12);
        assert!(masked_distribution(&[1.0], &[false]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(&[3, 5, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let c = [0.8, -1.3];
        let loss = |n: &Mlp| n.output(&x).iter().zip(&c).map(|(o, w)| o * w).sum::<f64>();
        let mut g = net.zeros_like();
        net.backward(&net.forward(&x), &c, &mut g);
        let flat = g.flatten();
        let h = 1e-6;
        for idx in 0..flat.len() {
            let mut p = net.clone();
            *p.tensors_mut().into_iter().flat_map(|t| t.iter_mut()).nth(idx).unwrap() += h;
            let mut m = net.clone();
            *m.tensors_mut().into_iter().flat_map(|t| t.iter_mut()).nth(idx).unwrap() -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - flat[idx]).abs() < 1e-7, "param {idx}");
        }
    }

    #[test]
    fn policy_covers_valid_actions_only() {
        let env = TaskEnv::new("food_preparation").unwrap();
        let mut agent = MlpAgent::for_env(&env, 1e-3, 1e-3, 0);
        let inp = agent.encode(&env).unwrap();
        let lp = agent.policy(std::slice::from_ref(&inp), ExecMode::Sequential).unwrap().remove(0);
        assert_eq!(lp.len(), inp.valid.len());
        assert!(inp.valid.len() < env.action_count());
        assert!((lp.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let env = TaskEnv::new("food_preparation").unwrap();
        let mut agent = MlpAgent::new(3, 2, 1e-3, 1e-3, 0);
        assert!(matches!(agent.encode(&env), Err(Error::Mismatch(_))));
    }
}
