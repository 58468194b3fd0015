//! Action selection from language-model scores.
//!
//! Each valid action prompt is scored by the joint log-probability of its
//! tokens given the observation prompt, optionally divided by its token or
//! word count, and the scores are softmaxed into a categorical policy.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::lm::{Mode, ModelParams, Sequence};
use crate::tokenizer::{TokenizedText, Vocab, BOS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    None,
    Token,
    Word,
}

impl NormalizationMode {
    pub const ALL: [NormalizationMode; 3] = [NormalizationMode::None, NormalizationMode::Token, NormalizationMode::Word];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationMode::None => "none",
            NormalizationMode::Token => "token",
            NormalizationMode::Word => "word",
        }
    }

    /// Divisor applied to a joint log-probability.
    pub fn divisor(self, n_tokens: usize, n_words: usize) -> usize {
        match self {
            NormalizationMode::None => 1,
            NormalizationMode::Token => n_tokens,
            NormalizationMode::Word => n_words,
        }
    }
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormalizationMode::None),
            "token" => Ok(NormalizationMode::Token),
            "word" => Ok(NormalizationMode::Word),
            _ => Err(Error::Config(format!("unknown normalization mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub index: usize,
    /// Log-probability of each action token given everything before it.
    pub token_log_probs: Vec<f64>,
    /// Joint log-probability, the sum of `token_log_probs`.
    pub log_prob: f64,
    pub n_tokens: usize,
    pub n_words: usize,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub mode: NormalizationMode,
    pub scores: Vec<ActionScore>,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub entropy: f64,
}

pub fn normalize_score(log_prob: f64, n_tokens: usize, n_words: usize, mode: NormalizationMode) -> Result<f64> {
    if n_tokens == 0 || n_words == 0 {
        return Err(Error::InvalidInput(format!("token/word counts must be positive, got {n_tokens}/{n_words}")));
    }
    Ok(log_prob / mode.divisor(n_tokens, n_words) as f64)
}

/// Like [`normalize_score`], from the token log-probabilities. A per-token
/// average is taken as a shifted mean, so equal token scores average to
/// exactly that score.
fn normalized_score(token_log_probs: &[f64], log_prob: f64, n_words: usize, mode: NormalizationMode) -> Result<f64> {
    let n = token_log_probs.len();
    if n == 0 || n_words == 0 || mode.divisor(n, n_words) != n {
        return normalize_score(log_prob, n, n_words, mode);
    }
    let x0 = token_log_probs[0];
    let spread: f64 = token_log_probs.iter().map(|x| x - x0).sum();
    Ok(x0 + spread / n as f64)
}

/// Log-softmax with max subtraction.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(scores);
    scores.iter().map(|s| s - z).collect()
}

/// Entropy of a distribution given by its log-probabilities.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs.iter().map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp }).sum::<f64>()
}

/// Maps `∂L/∂log π` to `∂L/∂s` through `log π = log_softmax(s)`.
pub fn log_softmax_backward(log_probs: &[f64], d_log_probs: &[f64]) -> Vec<f64> {
    let total: f64 = d_log_probs.iter().sum();
    log_probs.iter().zip(d_log_probs).map(|(lp, g)| g - lp.exp() * total).collect()
}

/// `∂H/∂s` for `H` the entropy of `softmax(s)`.
pub fn entropy_grad(log_probs: &[f64]) -> Vec<f64> {
    let h = entropy(log_probs);
    log_probs.iter().map(|&lp| -lp.exp() * (lp + h)).collect()
}

/// Builds the distribution from per-action token log-probabilities.
pub fn distribution_from_token_scores(
    token_log_probs: Vec<Vec<f64>>,
    n_words: &[usize],
    mode: NormalizationMode,
) -> Result<ActionDistribution> {
    if token_log_probs.is_empty() {
        return Err(Error::InvalidInput("no valid actions to score".into()));
    }
    let mut scores = Vec::with_capacity(token_log_probs.len());
    for (index, (tl, &nw)) in token_log_probs.into_iter().zip(n_words).enumerate() {
        let log_prob: f64 = tl.iter().sum();
        let normalized = normalized_score(&tl, log_prob, nw, mode)?;
        scores.push(ActionScore { index, n_tokens: tl.len(), token_log_probs: tl, log_prob, n_words: nw, normalized });
    }
    let normalized: Vec<f64> = scores.iter().map(|s| s.normalized).collect();
    let log_probs = log_softmax(&normalized);
    let probs = log_probs.iter().map(|v| v.exp()).collect();
    let entropy = entropy(&log_probs);
    Ok(ActionDistribution { mode, scores, log_probs, probs, entropy })
}

/// Anything that can return per-token conditional log-probabilities of
/// several continuations of one prompt.
pub trait TokenScorer {
    /// `prefix` already starts with BOS. Returns one vector per action with
    /// one entry per action token.
    fn token_log_probs(&self, prefix: &[u32], actions: &[&[u32]]) -> Result<Vec<Vec<f64>>>;
}

/// Scoring prefix for an observation: BOS followed by its tokens. Action
/// tokens carry their own word-start marker, so appending them is the same
/// as encoding `obs + " " + action`.
pub fn prefix_tokens(obs: &TokenizedText) -> Vec<u32> {
    let mut p = Vec::with_capacity(obs.n_tokens() + 1);
    p.push(BOS_ID);
    p.extend_from_slice(&obs.token_ids);
    p
}

/// For each action: the (row, target token) pairs whose log-probabilities
/// make up its joint score in a branched sequence.
pub fn branch_targets(prefix_len: usize, actions: &[&[u32]]) -> Vec<Vec<(usize, u32)>> {
    let mut offset = prefix_len;
    actions
        .iter()
        .map(|a| {
            let t = a
                .iter()
                .enumerate()
                .map(|(i, &tok)| (if i == 0 { prefix_len - 1 } else { offset + i - 1 }, tok))
                .collect();
            offset += a.len();
            t
        })
        .collect()
}

/// Scores action prompts with the language model in one branched pass.
#[derive(Debug, Clone, Copy)]
pub struct LmScorer<'a> {
    pub params: &'a ModelParams,
    pub mode: Mode,
}

impl TokenScorer for LmScorer<'_> {
    fn token_log_probs(&self, prefix: &[u32], actions: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        if actions.iter().any(|a| a.is_empty()) {
            return Err(Error::InvalidInput("empty action prompt".into()));
        }
        let seq = Sequence::with_branches(prefix, actions);
        let acts = self.params.run(&seq, self.mode)?;
        let targets = branch_targets(prefix.len(), actions);
        let mut rows: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        Ok(targets
            .iter()
            .map(|tt| {
                tt.iter()
                    .map(|&(row, tok)| {
                        let lp = rows.entry(row).or_insert_with(|| self.params.head_log_probs(acts.hidden_row(row)));
                        lp[tok as usize]
                    })
                    .collect()
            })
            .collect())
    }
}

pub fn score_action(scorer: &dyn TokenScorer, obs: &TokenizedText, action: &TokenizedText) -> Result<ActionScore> {
    let dist = action_distribution(scorer, obs, std::slice::from_ref(action), NormalizationMode::None)?;
    Ok(dist.scores.into_iter().next().expect("one action"))
}

pub fn action_distribution(
    scorer: &dyn TokenScorer,
    obs: &TokenizedText,
    actions: &[TokenizedText],
    mode: NormalizationMode,
) -> Result<ActionDistribution> {
    if actions.is_empty() {
        return Err(Error::InvalidInput("no valid actions to score".into()));
    }
    if let Some(a) = actions.iter().find(|a| a.is_empty()) {
        return Err(Error::InvalidInput(format!("action prompt {:?} has no tokens", a.source_text)));
    }
    let prefix = prefix_tokens(obs);
    let ids: Vec<&[u32]> = actions.iter().map(|a| a.token_ids.as_slice()).collect();
    let tl = scorer.token_log_probs(&prefix, &ids).map_err(|e| match e {
        Error::ContextOverflow { len, limit, .. } => Error::ContextOverflow {
            len,
            limit,
            prompt: format!("{} | {}", obs.source_text, longest(actions)),
        },
        other => other,
    })?;
    let words: Vec<usize> = actions.iter().map(|a| a.n_words()).collect();
    distribution_from_token_scores(tl, &words, mode)
}

fn longest(actions: &[TokenizedText]) -> &str {
    actions.iter().max_by_key(|a| a.n_tokens()).map(|a| a.source_text.as_str()).unwrap_or("")
}

/// Draws an action; returns its index and policy log-probability.
pub fn sample_action(dist: &ActionDistribution, rng: &mut impl Rng) -> (usize, f64) {
    let i = sample_index(&dist.probs, rng);
    (i, dist.log_probs[i])
}

/// Inverse-CDF categorical draw. Falls back to the last positive entry if
/// rounding leaves the cumulative sum just under `u`.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One row of a policy explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRow {
    pub action: String,
    pub tokens: Vec<String>,
    pub token_probs_pct: Vec<f64>,
    pub joint_log_prob: f64,
    pub prob_none_pct: f64,
    pub prob_token_pct: f64,
    pub prob_word_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub observation: String,
    pub rows: Vec<ExplainRow>,
}

pub fn explain_policy(
    scorer: &dyn TokenScorer,
    vocab: &Vocab,
    obs: &TokenizedText,
    actions: &[TokenizedText],
) -> Result<Explanation> {
    let dists = NormalizationMode::ALL
        .iter()
        .map(|&m| action_distribution(scorer, obs, actions, m))
        .collect::<Result<Vec<_>>>()?;
    let rows = actions
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let s = &dists[0].scores[k];
            ExplainRow {
                action: a.source_text.clone(),
                tokens: a.token_ids.iter().map(|&t| vocab.token_str(t).to_string()).collect(),
                token_probs_pct: s.token_log_probs.iter().map(|lp| 100.0 * lp.exp()).collect(),
                joint_log_prob: s.log_prob,
                prob_none_pct: 100.0 * dists[0].probs[k],
                prob_token_pct: 100.0 * dists[1].probs[k],
                prob_word_pct: 100.0 * dists[2].probs[k],
            }
        })
        .collect();
    Ok(Explanation { observation: obs.source_text.clone(), rows })
}

impl Explanation {
    /// Aligned text table: action, tokens, per-token probabilities and the
    /// action probability under each normalization.
    pub fn to_table(&self) -> String {
        let header = ["Action", "Tokens", "Token Probabilities", "W/O Norm", "Token Norm", "Word Norm"];
        let mut cells: Vec<[String; 6]> = vec![header.map(String::from)];
        for r in &self.rows {
            cells.push([
                r.action.clone(),
                r.tokens.iter().map(|t| format!("[{t}]")).collect::<Vec<_>>().join(" "),
                r.token_probs_pct.iter().map(|p| format!("{}%", fmt_pct(*p))).collect::<Vec<_>>().join(" "),
                format!("{}%", fmt_pct(r.prob_none_pct)),
                format!("{}%", fmt_pct(r.prob_token_pct)),
                format!("{}%", fmt_pct(r.prob_word_pct)),
            ]);
        }
        let widths: Vec<usize> = (0..6).map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        let _ = writeln!(out, "Observation: {}", self.observation);
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "| {} |", line.join(" | "));
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "| {} |", rule.join(" | "));
            }
        }
        out
    }

    /// One JSON object per action.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn fmt_pct(p: f64) -> String {
    if p >= 0.01 || p == 0.0 {
        format!("{p:.2}")
    } else {
        format!("{p:.2e}")
    }
}
