use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::train::RolloutBuffer;
use super::{ActorCritic, PpoConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean of `behavior_logprob - new_logprob`, averaged over the measured
    /// minibatches.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub minibatches_applied: usize,
    pub early_stopped: bool,
}

/// Per-sample clipped surrogate loss `max(-A r, -A clip(r, 1-c, 1+c))` and
/// its derivative w.r.t. the ratio.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let unclipped = -adv * ratio;
    let clipped = -adv * ratio.clamp(1.0 - clip, 1.0 + clip);
    if unclipped >= clipped {
        (unclipped, -adv)
    } else {
        (clipped, 0.0)
    }
}

fn entropy(lp: &[f64]) -> f64 {
    -lp.iter().filter(|l| l.is_finite()).map(|&l| l.exp() * l).sum::<f64>()
}

/// Splits `0..n` into `k` nearly equal contiguous ranges.
fn bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).filter(|(a, b)| b > a).collect()
}

fn normalized(adv: &[f64]) -> Vec<f64> {
    let n = adv.len();
    if n < 2 {
        return adv.to_vec();
    }
    let mean = adv.iter().sum::<f64>() / n as f64;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// One PPO update over a finished buffer.
pub fn ppo_update<M: ActorCritic>(
    model: &mut M,
    buf: &RolloutBuffer<M::Input>,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let b = buf.steps.len();
    if b == 0 || buf.advantages.len() != b {
        return Err(Error::InvalidInput("update needs a buffer with advantages".into()));
    }
    let mut st = UpdateStats::default();
    let (mut measured, mut samples) = (0usize, 0usize);
    let mut order: Vec<usize> = (0..b).collect();
    'epochs: for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        for (lo, hi) in bounds(b, cfg.policy_minibatches) {
            let idx = &order[lo..hi];
            let n = idx.len() as f64;
            let raw: Vec<f64> = idx.iter().map(|&i| buf.advantages[i]).collect();
            let adv = if cfg.norm_adv { normalized(&raw) } else { raw };
            let inputs: Vec<&M::Input> = idx.iter().map(|&i| &buf.steps[i].input).collect();
            let (clip, ent_coef) = (cfg.clip_coef, cfg.entropy_coef);
            let dloss = |j: usize, lp: &[f64]| {
                let s = &buf.steps[idx[j]];
                let ratio = (lp[s.action] - s.log_prob).exp();
                let (_, g) = clipped_surrogate(ratio, adv[j], clip);
                let mut d: Vec<f64> = lp
                    .iter()
                    .map(|&l| {
                        let p = l.exp();
                        if p > 0.0 {
                            ent_coef * p * (l + 1.0) / n
                        } else {
                            0.0
                        }
                    })
                    .collect();
                d[s.action] += g * ratio / n;
                d
            };
            let lps = model.policy_grad(&inputs, &dloss, cfg.exec)?;
            let (mut kl, mut pg, mut ent, mut clipped) = (0.0, 0.0, 0.0, 0.0);
            for (j, lp) in lps.iter().enumerate() {
                let s = &buf.steps[idx[j]];
                let log_ratio = lp[s.action] - s.log_prob;
                let ratio = log_ratio.exp();
                kl -= log_ratio;
                pg += clipped_surrogate(ratio, adv[j], clip).0;
                ent += entropy(lp);
                if (ratio - 1.0).abs() > clip {
                    clipped += 1.0;
                }
            }
            if !(pg.is_finite() && ent.is_finite() && kl.is_finite()) {
                let dump: Vec<String> = idx
                    .iter()
                    .zip(&lps)
                    .map(|(&i, lp)| format!("sample {i}: old {} new {:?}", buf.steps[i].log_prob, lp))
                    .collect();
                return Err(Error::NonFinite(format!("policy loss in minibatch [{}]", dump.join("; "))));
            }
            kl /= n;
            st.approx_kl += kl;
            st.policy_loss += pg;
            st.entropy += ent;
            st.clip_fraction += clipped;
            measured += 1;
            samples += idx.len();
            if cfg.target_kl.is_some_and(|t| kl > t) {
                model.discard_policy_grad();
                st.early_stopped = true;
                break 'epochs;
            }
            model.policy_step(cfg.max_grad_norm)?;
            st.minibatches_applied += 1;
        }
    }
    if measured > 0 {
        st.approx_kl /= measured as f64;
        st.policy_loss /= samples as f64;
        st.entropy /= samples as f64;
        st.clip_fraction /= samples as f64;
    }

    let mut vsamples = 0usize;
    for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        for (lo, hi) in bounds(b, cfg.critic_minibatches) {
            let idx = &order[lo..hi];
            let n = idx.len() as f64;
            let inputs: Vec<&M::Input> = idx.iter().map(|&i| &buf.steps[i].input).collect();
            let vf = cfg.vf_coef;
            let dloss = |j: usize, v: f64| vf * (v - buf.returns[idx[j]]) / n;
            let values = model.value_grad(&inputs, &dloss, cfg.exec)?;
            let loss: f64 = values.iter().zip(idx).map(|(v, &i)| 0.5 * (v - buf.returns[i]).powi(2)).sum();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("value loss over samples {idx:?}")));
            }
            st.value_loss += loss;
            vsamples += idx.len();
            model.value_step(cfg.max_grad_norm)?;
        }
    }
    st.value_loss /= vsamples.max(1) as f64;
    Ok(st)
}
