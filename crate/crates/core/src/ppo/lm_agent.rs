use std::collections::HashMap;
use std::sync::Arc;

use super::ActorCritic;
use crate::env::TaskEnv;
use crate::error::{Error, Result};
use crate::exec::{par_map, ExecMode};
use crate::lm::{clip_grad_norm, Adam, AdamConfig, Adapters, CriticCache, CriticHead, Gradients, Mode, ModelParams, ParamSet, Sequence};
use crate::policy::{branch_targets, distribution_from_token_scores, log_softmax_backward, LmScorer, NormalizationMode, TokenScorer};
use crate::prompting::Prompter;
use crate::tokenizer::{TokenizedText, Vocab, BOS_ID};

/// Tokenized prompts of one environment step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LmInput {
    /// BOS followed by the observation prompt.
    pub prefix: Arc<Vec<u32>>,
    pub actions: Arc<Vec<Vec<u32>>>,
    pub words: Arc<Vec<usize>>,
    pub env_actions: Arc<Vec<usize>>,
}

/// Language-model policy: action prompts scored by the adapted model,
/// value from a head on frozen backbone features.
pub struct LmAgent {
    params: ModelParams,
    vocab: Vocab,
    pub mode: NormalizationMode,
    trainable: bool,
    actor_opt: Adam,
    critic_opt: Adam,
    actor_grads: Adapters,
    critic_grads: CriticHead,
    prompters: HashMap<String, Prompter>,
    tokens: HashMap<String, TokenizedText>,
    memo: HashMap<LmInput, Vec<f64>>,
    memo_version: u64,
    critic_cache: CriticCache,
}

impl LmAgent {
    pub fn new(
        params: ModelParams,
        vocab: Vocab,
        mode: NormalizationMode,
        trainable: bool,
        actor_lr: f64,
        critic_lr: f64,
    ) -> Result<Self> {
        if vocab.len() > params.config.vocab_size {
            return Err(Error::Mismatch(format!(
                "vocabulary has {} entries but the model only {}",
                vocab.len(),
                params.config.vocab_size
            )));
        }
        let actor_grads = params.adapters.zeros_like();
        let critic_grads = params.critic.zeros_like();
        let memo_version = params.version();
        Ok(Self {
            params,
            vocab,
            mode,
            trainable,
            actor_opt: Adam::new(AdamConfig { lr: actor_lr, ..AdamConfig::default() }),
            critic_opt: Adam::new(AdamConfig { lr: critic_lr, ..AdamConfig::default() }),
            actor_grads,
            critic_grads,
            prompters: HashMap::new(),
            tokens: HashMap::new(),
            memo: HashMap::new(),
            memo_version,
            critic_cache: CriticCache::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Adapter gradient accumulated since the last step or discard.
    pub fn policy_gradient(&self) -> &Adapters {
        &self.actor_grads
    }

    /// Value-head gradient accumulated since the last step.
    pub fn value_gradient(&self) -> &CriticHead {
        &self.critic_grads
    }

    fn tokenize(&mut self, text: &str) -> TokenizedText {
        if let Some(t) = self.tokens.get(text) {
            return t.clone();
        }
        let t = self.vocab.encode(text);
        self.tokens.insert(text.to_string(), t.clone());
        t
    }

    fn describe(&self, input: &LmInput) -> String {
        self.vocab.decode(&input.prefix[1..]).unwrap_or_else(|_| format!("{:?}", input.prefix))
    }

    fn rewrap(&self, e: Error, input: &LmInput) -> Error {
        match e {
            Error::ContextOverflow { len, limit, .. } => Error::ContextOverflow { len, limit, prompt: self.describe(input) },
            other => other,
        }
    }

    fn refresh_memo(&mut self) {
        if self.memo_version != self.params.version() {
            self.memo.clear();
            self.memo_version = self.params.version();
        }
    }
}

fn score(params: &ModelParams, mode: NormalizationMode, input: &LmInput) -> Result<Vec<f64>> {
    let acts: Vec<&[u32]> = input.actions.iter().map(|a| a.as_slice()).collect();
    let tl = LmScorer { params, mode: Mode::WithAdapters }.token_log_probs(&input.prefix, &acts)?;
    Ok(distribution_from_token_scores(tl, &input.words, mode)?.log_probs)
}

/// Policy of one input plus the adapter gradient of `dloss`.
fn sample_grad(
    params: &ModelParams,
    mode: NormalizationMode,
    input: &LmInput,
    dloss: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, Adapters)> {
    let acts: Vec<&[u32]> = input.actions.iter().map(|a| a.as_slice()).collect();
    let seq = Sequence::with_branches(&input.prefix, &acts);
    let run = params.run(&seq, Mode::WithAdapters)?;
    let targets = branch_targets(input.prefix.len(), &acts);
    let mut rows: HashMap<usize, Vec<f64>> = HashMap::new();
    let tl: Vec<Vec<f64>> = targets
        .iter()
        .map(|tt| {
            tt.iter()
                .map(|&(row, tok)| rows.entry(row).or_insert_with(|| params.head_log_probs(run.hidden_row(row)))[tok as usize])
                .collect()
        })
        .collect();
    let dist = distribution_from_token_scores(tl, &input.words, mode)?;
    let dlp = dloss(&dist.log_probs);
    let ds = log_softmax_backward(&dist.log_probs, &dlp);
    let d = params.config.embed_dim;
    let mut d_hidden = vec![0.0; seq.len() * d];
    for (k, tt) in targets.iter().enumerate() {
        let sc = &dist.scores[k];
        let g = ds[k] / mode.divisor(sc.n_tokens, sc.n_words) as f64;
        if g == 0.0 {
            continue;
        }
        for &(row, tok) in tt {
            params.head_backward(run.hidden_row(row), &rows[&row], tok, g, &mut d_hidden[row * d..(row + 1) * d], None);
        }
    }
    let mut grads = Gradients::for_adapters(params);
    params.backward(&run, &d_hidden, &mut grads)?;
    Ok((dist.log_probs, grads.adapters.expect("adapter gradients")))
}

impl ActorCritic for LmAgent {
    type Input = LmInput;

    fn encode(&mut self, env: &TaskEnv) -> Result<LmInput> {
        let tid = env.template_id();
        if !self.prompters.contains_key(&tid) {
            self.prompters.insert(tid.clone(), Prompter::for_env(env)?);
        }
        let valid = env.valid_actions();
        let (obs, acts) = self.prompters[&tid].prompts(env, &valid)?;
        let obs = self.tokenize(&obs);
        let mut prefix = Vec::with_capacity(obs.n_tokens() + 1);
        prefix.push(BOS_ID);
        prefix.extend_from_slice(&obs.token_ids);
        let mut actions = Vec::with_capacity(acts.len());
        let mut words = Vec::with_capacity(acts.len());
        for a in &acts {
            let t = self.tokenize(a);
            words.push(t.n_words());
            actions.push(t.token_ids);
        }
        Ok(LmInput {
            prefix: Arc::new(prefix),
            actions: Arc::new(actions),
            words: Arc::new(words),
            env_actions: Arc::new(valid),
        })
    }

    fn actions<'a>(&self, input: &'a LmInput) -> &'a [usize] {
        &input.env_actions
    }

    fn policy(&mut self, inputs: &[LmInput], exec: ExecMode) -> Result<Vec<Vec<f64>>> {
        self.refresh_memo();
        let mut missing: Vec<&LmInput> = Vec::new();
        for inp in inputs {
            if !self.memo.contains_key(inp) && !missing.contains(&inp) {
                missing.push(inp);
            }
        }
        let (params, mode) = (&self.params, self.mode);
        let fresh = par_map(exec, &missing, |inp| score(params, mode, inp));
        for (inp, r) in missing.iter().zip(fresh) {
            let lp = r.map_err(|e| self.rewrap(e, inp))?;
            self.memo.insert((*inp).clone(), lp);
        }
        Ok(inputs.iter().map(|i| self.memo[i].clone()).collect())
    }

    fn value(&mut self, inputs: &[LmInput], exec: ExecMode) -> Result<Vec<f64>> {
        let mut missing: Vec<&Vec<u32>> = Vec::new();
        for inp in inputs {
            if self.critic_cache.get(&inp.prefix).is_none() && !missing.contains(&&*inp.prefix) {
                missing.push(&inp.prefix);
            }
        }
        let params = &self.params;
        let fresh = par_map(exec, &missing, |p| params.critic_features(p));
        for (p, f) in missing.iter().zip(fresh) {
            self.critic_cache.insert((*p).clone(), f?);
        }
        Ok(inputs
            .iter()
            .map(|i| self.params.critic.forward(self.critic_cache.get(&i.prefix).expect("cached")).value)
            .collect())
    }

    fn trainable(&self) -> bool {
        self.trainable
    }

    fn policy_grad(
        &mut self,
        inputs: &[&LmInput],
        dloss: &(dyn Fn(usize, &[f64]) -> Vec<f64> + Sync),
        exec: ExecMode,
    ) -> Result<Vec<Vec<f64>>> {
        let jobs: Vec<(usize, &LmInput)> = inputs.iter().copied().enumerate().collect();
        let (params, mode) = (&self.params, self.mode);
        let parts = par_map(exec, &jobs, |&(j, inp)| sample_grad(params, mode, inp, |lp| dloss(j, lp)));
        let mut out = Vec::with_capacity(inputs.len());
        for (r, inp) in parts.into_iter().zip(inputs) {
            let (lp, g) = r.map_err(|e| self.rewrap(e, inp))?;
            self.actor_grads.add_assign(&g);
            out.push(lp);
        }
        Ok(out)
    }

    fn policy_step(&mut self, max_grad_norm: f64) -> Result<()> {
        if !self.trainable {
            return Err(Error::InvalidInput("this agent is frozen".into()));
        }
        clip_grad_norm(&mut self.actor_grads, max_grad_norm);
        self.actor_opt.step(&mut self.params.adapters, &self.actor_grads);
        self.actor_grads.fill_zero();
        self.params.touch();
        if !self.params.adapters.is_finite() {
            return Err(Error::NonFinite("adapter weights after an update".into()));
        }
        Ok(())
    }

    fn discard_policy_grad(&mut self) {
        self.actor_grads.fill_zero();
    }

    fn value_grad(
        &mut self,
        inputs: &[&LmInput],
        dloss: &(dyn Fn(usize, f64) -> f64 + Sync),
        exec: ExecMode,
    ) -> Result<Vec<f64>> {
        let owned: Vec<LmInput> = inputs.iter().map(|&i| i.clone()).collect();
        self.value(&owned, exec)?;
        let mut out = Vec::with_capacity(inputs.len());
        for (j, inp) in inputs.iter().enumerate() {
            let acts = self.params.critic.forward(self.critic_cache.get(&inp.prefix).expect("cached"));
            let dv = dloss(j, acts.value);
            self.params.critic.backward(&acts, dv, &mut self.critic_grads);
            out.push(acts.value);
        }
        Ok(out)
    }

    fn value_step(&mut self, max_grad_norm: f64) -> Result<()> {
        if !self.trainable {
            return Err(Error::InvalidInput("this agent is frozen".into()));
        }
        clip_grad_norm(&mut self.critic_grads, max_grad_norm);
        self.critic_opt.step(&mut self.params.critic, &self.critic_grads);
        self.critic_grads.fill_zero();
        Ok(())
    }
}
