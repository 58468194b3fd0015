use std::collections::VecDeque;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gae::gae;
use super::update::ppo_update;
use super::{ActorCritic, PpoConfig};
use crate::env::TaskEnv;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::policy::{argmax, sample_index};

/// One agent decision.
#[derive(Debug, Clone)]
pub struct Step<I> {
    pub input: I,
    /// Index into the input's action list.
    pub action: usize,
    pub env_action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// The episode ended with this step (goal reached or time limit).
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episodic_return: f64,
    pub discounted_return: f64,
    pub success: bool,
    /// Agent decisions taken.
    pub length: usize,
}

/// Steps stored step-major: entry `t * n_envs + e`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer<I> {
    pub steps: Vec<Step<I>>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub n_envs: usize,
    pub rollout_steps: usize,
    /// Episodes that finished during this rollout.
    pub episodes: Vec<EpisodeStats>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tracker {
    ret: f64,
    disc: f64,
    weight: f64,
    len: usize,
}

impl Tracker {
    fn fresh() -> Self {
        Self { weight: 1.0, ..Default::default() }
    }
}

/// Vectorized environments with their own random streams.
pub struct EnvPool {
    envs: Vec<TaskEnv>,
    rngs: Vec<ChaCha8Rng>,
    trackers: Vec<Tracker>,
    gamma: f64,
}

impl EnvPool {
    pub fn new(task: &str, n_envs: usize, seed: u64, gamma: f64) -> Result<Self> {
        let envs = (0..n_envs).map(|_| TaskEnv::new(task)).collect::<Result<Vec<_>>>()?;
        let rngs = (0..n_envs)
            .map(|e| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(e as u64);
                r
            })
            .collect();
        Ok(Self { envs, rngs, trackers: vec![Tracker::fresh(); n_envs], gamma })
    }

    pub fn envs(&self) -> &[TaskEnv] {
        &self.envs
    }
}

/// Runs `cfg.rollout_steps` decisions in every environment and fills in
/// advantages and returns.
pub fn collect_rollout<M: ActorCritic>(
    model: &mut M,
    pool: &mut EnvPool,
    cfg: &PpoConfig,
) -> Result<RolloutBuffer<M::Input>> {
    let n = pool.envs.len();
    let mut steps = Vec::with_capacity(n * cfg.rollout_steps);
    let mut episodes = Vec::new();
    for _ in 0..cfg.rollout_steps {
        let inputs = pool.envs.iter().map(|e| model.encode(e)).collect::<Result<Vec<_>>>()?;
        let policies = model.policy(&inputs, cfg.exec)?;
        let values = model.value(&inputs, cfg.exec)?;
        for (e, ((input, lp), value)) in inputs.into_iter().zip(policies).zip(values).enumerate() {
            let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let a = sample_index(&probs, &mut pool.rngs[e]);
            let env_action = *model
                .actions(&input)
                .get(a)
                .ok_or_else(|| Error::InvalidInput("policy has more entries than actions".into()))?;
            let out = pool.envs[e].step(env_action)?;
            let t = &mut pool.trackers[e];
            t.ret += out.reward;
            t.disc += t.weight * out.reward;
            t.weight *= pool.gamma;
            t.len += 1;
            if out.done {
                episodes.push(EpisodeStats {
                    episodic_return: t.ret,
                    discounted_return: t.disc,
                    success: out.success,
                    length: t.len,
                });
                *t = Tracker::fresh();
                pool.envs[e].reset();
            }
            steps.push(Step { input, action: a, env_action, log_prob: lp[a], value, reward: out.reward, done: out.done });
        }
    }
    let last = pool.envs.iter().map(|e| model.encode(e)).collect::<Result<Vec<_>>>()?;
    let bootstrap = model.value(&last, cfg.exec)?;

    let gamma = pool.gamma;
    let mut advantages = vec![0.0; steps.len()];
    let mut returns = vec![0.0; steps.len()];
    for e in 0..n {
        let idx: Vec<usize> = (0..cfg.rollout_steps).map(|t| t * n + e).collect();
        let r: Vec<f64> = idx.iter().map(|&i| steps[i].reward).collect();
        let v: Vec<f64> = idx.iter().map(|&i| steps[i].value).collect();
        let d: Vec<bool> = idx.iter().map(|&i| steps[i].done).collect();
        let a = gae(&r, &v, &d, bootstrap[e], gamma, cfg.gae_lambda);
        for (k, &i) in idx.iter().enumerate() {
            advantages[i] = a[k];
            returns[i] = a[k] + v[k];
        }
    }
    Ok(RolloutBuffer { steps, advantages, returns, n_envs: n, rollout_steps: cfg.rollout_steps, episodes })
}

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub global_step: u64,
    pub update: u64,
    /// Over episodes that finished during this update's rollout.
    pub episodic_return_mean: Option<f64>,
    pub discounted_return_mean: Option<f64>,
    pub success_rate: Option<f64>,
    pub episodes: usize,
    /// Loss statistics; absent for agents that are not trained.
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub approx_kl: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub early_stopped: Option<bool>,
    /// Environment steps per second; absent in deterministic runs.
    pub sps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub global_step: u64,
    pub updates: u64,
    pub episodes: usize,
    /// Success over the last `stop_window` finished episodes.
    pub window_success_rate: Option<f64>,
    pub stopped_on_success: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Trains `model` on `task` until `cfg.total_steps` decisions (or the
/// success-rate stop) and reports every update through `on_update`.
pub fn train<M: ActorCritic>(
    model: &mut M,
    task: &str,
    cfg: &PpoConfig,
    mut on_update: impl FnMut(&MetricsRecord, &M) -> Result<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let probe = TaskEnv::new(task)?;
    let gamma = cfg.gamma_for(probe.family());
    let mut pool = EnvPool::new(task, cfg.n_envs, cfg.seed, gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.n_envs as u64);
    let mut window: VecDeque<bool> = VecDeque::with_capacity(cfg.stop_window);
    let mut summary =
        TrainSummary { global_step: 0, updates: 0, episodes: 0, window_success_rate: None, stopped_on_success: false };
    while summary.global_step < cfg.total_steps {
        let t0 = Instant::now();
        let buf = collect_rollout(model, &mut pool, cfg)?;
        let stats = if model.trainable() { Some(ppo_update(model, &buf, cfg, &mut rng)?) } else { None };
        summary.global_step += buf.steps.len() as u64;
        summary.updates += 1;
        summary.episodes += buf.episodes.len();
        for ep in &buf.episodes {
            if window.len() == cfg.stop_window {
                window.pop_front();
            }
            window.push_back(ep.success);
        }
        summary.window_success_rate = mean(window.iter().map(|&s| s as u8 as f64));
        let elapsed = t0.elapsed().as_secs_f64();
        let rec = MetricsRecord {
            global_step: summary.global_step,
            update: summary.updates,
            episodic_return_mean: mean(buf.episodes.iter().map(|e| e.episodic_return)),
            discounted_return_mean: mean(buf.episodes.iter().map(|e| e.discounted_return)),
            success_rate: mean(buf.episodes.iter().map(|e| e.success as u8 as f64)),
            episodes: buf.episodes.len(),
            policy_loss: stats.map(|s| s.policy_loss),
            value_loss: stats.map(|s| s.value_loss),
            entropy: stats.map(|s| s.entropy),
            approx_kl: stats.map(|s| s.approx_kl),
            clip_fraction: stats.map(|s| s.clip_fraction),
            early_stopped: stats.map(|s| s.early_stopped),
            sps: (!cfg.deterministic && elapsed > 0.0).then(|| buf.steps.len() as f64 / elapsed),
        };
        on_update(&rec, model)?;
        if let Some(target) = cfg.stop_success_rate {
            if window.len() == cfg.stop_window && summary.window_success_rate.is_some_and(|r| r >= target) {
                summary.stopped_on_success = true;
                break;
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_discounted_return: f64,
    pub std_discounted_return: f64,
    pub mean_length: f64,
    pub successes: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Plays `episodes` full episodes without learning. Episode `i` draws
/// from its own random stream, so results do not depend on batching.
pub fn evaluate<M: ActorCritic>(
    model: &mut M,
    task: &str,
    episodes: usize,
    greedy: bool,
    seed: u64,
    exec: ExecMode,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode".into()));
    }
    const BATCH: usize = 16;
    let probe = TaskEnv::new(task)?;
    let gamma = probe.default_gamma();
    let mut stats: Vec<EpisodeStats> = Vec::with_capacity(episodes);
    for start in (0..episodes).step_by(BATCH) {
        let k = BATCH.min(episodes - start);
        let mut envs = vec![probe.clone(); k];
        let mut rngs: Vec<ChaCha8Rng> = (0..k)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream((start + i) as u64);
                r
            })
            .collect();
        let mut track = vec![Tracker::fresh(); k];
        let mut result: Vec<Option<EpisodeStats>> = vec![None; k];
        loop {
            let live: Vec<usize> = (0..k).filter(|&i| result[i].is_none()).collect();
            if live.is_empty() {
                break;
            }
            let inputs = live.iter().map(|&i| model.encode(&envs[i])).collect::<Result<Vec<_>>>()?;
            let policies = model.policy(&inputs, exec)?;
            for ((&i, input), lp) in live.iter().zip(&inputs).zip(&policies) {
                let a = if greedy {
                    argmax(lp)
                } else {
                    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                    sample_index(&probs, &mut rngs[i])
                };
                let out = envs[i].step(model.actions(input)[a])?;
                let t = &mut track[i];
                t.ret += out.reward;
                t.disc += t.weight * out.reward;
                t.weight *= gamma;
                t.len += 1;
                if out.done {
                    result[i] = Some(EpisodeStats {
                        episodic_return: t.ret,
                        discounted_return: t.disc,
                        success: out.success,
                        length: t.len,
                    });
                }
            }
        }
        stats.extend(result.into_iter().flatten());
    }
    let rets: Vec<f64> = stats.iter().map(|s| s.episodic_return).collect();
    let discs: Vec<f64> = stats.iter().map(|s| s.discounted_return).collect();
    let (mean_return, std_return) = mean_std(&rets);
    let (mean_discounted_return, std_discounted_return) = mean_std(&discs);
    let successes = stats.iter().filter(|s| s.success).count();
    Ok(EvalSummary {
        task: task.to_string(),
        episodes,
        success_rate: successes as f64 / episodes as f64,
        mean_return,
        std_return,
        mean_discounted_return,
        std_discounted_return,
        mean_length: stats.iter().map(|s| s.length as f64).sum::<f64>() / episodes as f64,
        successes,
    })
}
