use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use super::params::{clip_grad_norm, ModelParams, ParamSet};
use super::transformer::{Gradients, Mode, Sequence};
use crate::error::{Error, Result};
use crate::exec::{par_map, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 4, lr: 3e-3, batch_size: 16, max_grad_norm: 1.0, seed: 0 }
    }
}

/// Summed next-token negative log-likelihood of one sequence and, when
/// `grads` is given, its gradient over the base weights.
fn sequence_nll(params: &ModelParams, tokens: &[u32], grads: Option<&mut Gradients>) -> Result<(f64, usize)> {
    let t = tokens.len();
    if t < 2 {
        return Ok((0.0, 0));
    }
    let d = params.config.embed_dim;
    let acts = params.run(&Sequence::causal(&tokens[..t - 1]), Mode::Base)?;
    let mut nll = 0.0;
    let mut d_hidden = vec![0.0; (t - 1) * d];
    let mut grads = grads;
    for i in 0..t - 1 {
        let row = acts.hidden_row(i);
        let lp = params.head_log_probs(row);
        nll -= lp[tokens[i + 1] as usize];
        if let Some(g) = grads.as_deref_mut() {
            params.head_backward(
                row,
                &lp,
                tokens[i + 1],
                -1.0,
                &mut d_hidden[i * d..(i + 1) * d],
                g.base.as_mut().map(|b| &mut b.tok_emb[..]),
            );
        }
    }
    if let Some(g) = grads {
        params.backward(&acts, &d_hidden, g)?;
    }
    Ok((nll, t - 1))
}

/// Mean next-token negative log-likelihood over `corpus`.
pub fn corpus_loss(params: &ModelParams, corpus: &[Vec<u32>], exec: ExecMode) -> Result<f64> {
    let parts = par_map(exec, corpus, |s| sequence_nll(params, s, None));
    let (mut total, mut count) = (0.0, 0usize);
    for p in parts {
        let (nll, n) = p?;
        total += nll;
        count += n;
    }
    if count == 0 {
        return Err(Error::InvalidInput("corpus has no predictable tokens".into()));
    }
    Ok(total / count as f64)
}

/// Trains the base weights by next-token cross-entropy. Adapters and critic
/// are left untouched. Returns the mean training loss of every epoch.
pub fn pretrain(
    params: &mut ModelParams,
    corpus: &[Vec<u32>],
    cfg: &PretrainConfig,
    exec: ExecMode,
) -> Result<Vec<f64>> {
    if corpus.iter().all(|s| s.len() < 2) {
        return Err(Error::InvalidInput("pretraining corpus is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("pretrain batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut ep_loss, mut ep_count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Vec<u32>> = chunk.iter().map(|&i| &corpus[i]).collect();
            let snapshot: &ModelParams = params;
            let parts = par_map(exec, &batch, |s| {
                let mut g = Gradients::for_base(snapshot);
                sequence_nll(snapshot, s, Some(&mut g)).map(|(nll, n)| (nll, n, g.base.expect("base gradients")))
            });
            let mut grads = params.base.zeros_like();
            let (mut loss, mut count) = (0.0, 0usize);
            for p in parts {
                let (nll, n, g) = p?;
                loss += nll;
                count += n;
                grads.add_assign(&g);
            }
            if count == 0 {
                continue;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("pretraining loss in epoch {epoch}")));
            }
            grads.scale(1.0 / count as f64);
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.step(&mut params.base, &grads);
            params.touch();
            ep_loss += loss;
            ep_count += count;
        }
        let mean = ep_loss / ep_count.max(1) as f64;
        log::info!("pretrain epoch {} loss {:.4}", epoch + 1, mean);
        trace.push(mean);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            context_length: 16,
            embed_dim: 8,
            n_layers: 1,
            n_heads: 2,
            adapter_rank: 2,
            adapter_scale: 4.0,
            critic_hidden: (4, 4),
        }
    }

    fn corpus() -> Vec<Vec<u32>> {
        vec![vec![1, 3, 4, 5, 6], vec![1, 3, 4, 7], vec![1, 8, 9, 10, 11, 3, 4]]
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let mut p = ModelParams::init(&tiny(), 5);
        let before = p.clone();
        let cfg = PretrainConfig { epochs: 0, ..Default::default() };
        assert!(pretrain(&mut p, &corpus(), &cfg, ExecMode::Sequential).unwrap().is_empty());
        assert_eq!(p.base, before.base);
    }

    #[test]
    fn training_reduces_loss_and_spares_adapters() {
        let mut p = ModelParams::init(&tiny(), 5);
        let before = p.clone();
        let l0 = corpus_loss(&p, &corpus(), ExecMode::Sequential).unwrap();
        let cfg = PretrainConfig { epochs: 30, lr: 1e-2, batch_size: 2, ..Default::default() };
        pretrain(&mut p, &corpus(), &cfg, ExecMode::Sequential).unwrap();
        let l1 = corpus_loss(&p, &corpus(), ExecMode::Sequential).unwrap();
        assert!(l1 < l0, "{l1} !< {l0}");
        assert_eq!(p.adapters, before.adapters);
        assert_eq!(p.critic, before.critic);
    }

    #[test]
    fn empty_corpus_is_refused() {
        let mut p = ModelParams::init(&tiny(), 5);
        let err = pretrain(&mut p, &[vec![1]], &PretrainConfig::default(), ExecMode::Sequential);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exec_modes_agree_bitwise() {
        let cfg = PretrainConfig { epochs: 2, batch_size: 2, ..Default::default() };
        let mut a = ModelParams::init(&tiny(), 9);
        let mut b = a.clone();
        let ta = pretrain(&mut a, &corpus(), &cfg, ExecMode::Sequential).unwrap();
        let tb = pretrain(&mut b, &corpus(), &cfg, ExecMode::Parallel).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.base, b.base);
    }
}
