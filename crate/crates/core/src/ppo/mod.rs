//! Proximal policy optimization shared by every agent.
//!
//! Agents implement [`ActorCritic`]; rollout collection, advantage
//! estimation and the clipped update are written once against that trait.

mod gae;
mod lm_agent;
mod train;
mod update;

pub use gae::{discounted_returns, gae};
pub use lm_agent::{LmAgent, LmInput};
pub use train::{
    collect_rollout, evaluate, train, EnvPool, EpisodeStats, EvalSummary, MetricsRecord, RolloutBuffer, Step, TrainSummary,
};
pub use update::{clipped_surrogate, ppo_update, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::env::Family;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::policy::NormalizationMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub rollout_steps: usize,
    /// Discount; the environment family's default when unset.
    pub gamma: Option<f64>,
    pub gae_lambda: f64,
    pub clip_coef: f64,
    pub entropy_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    /// Stop the update once a minibatch measures a larger approximate KL.
    pub target_kl: Option<f64>,
    pub update_epochs: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub policy_minibatches: usize,
    pub critic_minibatches: usize,
    pub norm_adv: bool,
    pub total_steps: u64,
    pub normalization: NormalizationMode,
    pub seed: u64,
    pub exec: ExecMode,
    /// Leave wall-clock fields out of the metrics so runs compare
    /// byte-for-byte.
    pub deterministic: bool,
    /// Stop training once this fraction of the last `stop_window`
    /// finished training episodes succeeded.
    pub stop_success_rate: Option<f64>,
    pub stop_window: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 4,
            rollout_steps: 32,
            gamma: None,
            gae_lambda: 0.95,
            clip_coef: 0.2,
            entropy_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            target_kl: Some(0.02),
            update_epochs: 1,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            policy_minibatches: 32,
            critic_minibatches: 4,
            norm_adv: true,
            total_steps: 100_000,
            normalization: NormalizationMode::Word,
            seed: 1,
            exec: ExecMode::default(),
            deterministic: false,
            stop_success_rate: None,
            stop_window: 100,
        }
    }
}

impl PpoConfig {
    /// Settings for the MLP baseline: four passes over each batch in four
    /// minibatches, one shared learning rate.
    pub fn mlp_baseline() -> Self {
        Self {
            update_epochs: 4,
            policy_minibatches: 4,
            critic_minibatches: 4,
            actor_lr: 5e-4,
            critic_lr: 5e-4,
            target_kl: None,
            ..Self::default()
        }
    }

    /// Learning rates used with the 7B backbone, kept as a preset.
    pub fn large_model_rates(family: Family) -> (f64, f64) {
        match family {
            Family::Overcooked => (5e-7, 1e-5),
            Family::Household => (1e-6, 5e-5),
        }
    }

    pub fn gamma_for(&self, family: Family) -> f64 {
        self.gamma.unwrap_or(match family {
            Family::Overcooked => 0.99,
            Family::Household => 0.95,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.rollout_steps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_envs == 0 || self.rollout_steps == 0 {
            return bad("ppo.n_envs and ppo.rollout_steps must be positive");
        }
        let b = self.batch_size();
        if self.policy_minibatches == 0 || self.policy_minibatches > b {
            return bad("ppo.policy_minibatches must be in 1..=batch size");
        }
        if self.critic_minibatches == 0 || self.critic_minibatches > b {
            return bad("ppo.critic_minibatches must be in 1..=batch size");
        }
        if self.update_epochs == 0 {
            return bad("ppo.update_epochs must be positive");
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return bad("ppo.gamma must be in (0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("ppo.gae_lambda must be in [0, 1]");
        }
        if !(self.clip_coef > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("ppo.clip_coef and ppo.max_grad_norm must be positive");
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("ppo.actor_lr and ppo.critic_lr must be positive");
        }
        if self.stop_window == 0 {
            return bad("ppo.stop_window must be positive");
        }
        Ok(())
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.update_epochs > 1 {
            w.push(format!(
                "update_epochs = {}: reusing a batch for several actor passes tends to destabilize finetuning",
                self.update_epochs
            ));
        }
        if self.actor_lr >= self.critic_lr {
            w.push("actor_lr is not below critic_lr".into());
        }
        w
    }
}

/// A policy and value function that PPO can train.
///
/// `Input` is what an agent needs from one environment step. Policies are
/// returned as log-probabilities over the input's own action list.
pub trait ActorCritic {
    type Input: Clone + Send + Sync;

    /// Snapshot of the environment for this agent, including which actions
    /// are offered.
    fn encode(&mut self, env: &crate::env::TaskEnv) -> Result<Self::Input>;

    /// Environment action indices that the policy's entries refer to.
    fn actions<'a>(&self, input: &'a Self::Input) -> &'a [usize];

    fn policy(&mut self, inputs: &[Self::Input], exec: ExecMode) -> Result<Vec<Vec<f64>>>;

    fn value(&mut self, inputs: &[Self::Input], exec: ExecMode) -> Result<Vec<f64>>;

    /// False for agents that never change (they are only evaluated).
    fn trainable(&self) -> bool;

    /// Computes fresh policies for `inputs` and accumulates the gradient of
    /// a loss whose derivative w.r.t. each policy is given by `dloss`.
    fn policy_grad(
        &mut self,
        inputs: &[&Self::Input],
        dloss: &(dyn Fn(usize, &[f64]) -> Vec<f64> + Sync),
        exec: ExecMode,
    ) -> Result<Vec<Vec<f64>>>;

    /// Applies accumulated policy gradients (clipped to `max_grad_norm`).
    fn policy_step(&mut self, max_grad_norm: f64) -> Result<()>;

    fn discard_policy_grad(&mut self);

    /// Like [`ActorCritic::policy_grad`] for the value function.
    fn value_grad(
        &mut self,
        inputs: &[&Self::Input],
        dloss: &(dyn Fn(usize, f64) -> f64 + Sync),
        exec: ExecMode,
    ) -> Result<Vec<f64>>;

    fn value_step(&mut self, max_grad_norm: f64) -> Result<()>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_follow_rate_order() {
        let c = PpoConfig::default();
        c.validate().unwrap();
        assert!(c.actor_lr < c.critic_lr);
        assert_eq!(c.batch_size(), 128);
        assert!(c.warnings().is_empty());
        PpoConfig::mlp_baseline().validate().unwrap();
    }

    #[test]
    fn multi_epoch_warns() {
        let c = PpoConfig { update_epochs: 2, ..Default::default() };
        assert!(c.warnings().iter().any(|w| w.contains("update_epochs")));
    }

    #[test]
    fn bad_values_are_config_errors() {
        for c in [
            PpoConfig { n_envs: 0, ..Default::default() },
            PpoConfig { policy_minibatches: 500, ..Default::default() },
            PpoConfig { gamma: Some(1.5), ..Default::default() },
            PpoConfig { actor_lr: 0.0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn family_gammas() {
        let c = PpoConfig::default();
        assert_eq!(c.gamma_for(Family::Household), 0.95);
        assert_eq!(c.gamma_for(Family::Overcooked), 0.99);
    }
}
