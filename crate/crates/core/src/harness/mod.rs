//! Experiment orchestration behind the command-line tool: pretraining,
//! training runs, evaluation, generalization sweeps and policy
//! explanations.
//!
//! A run directory holds `config.toml` (the fully resolved config),
//! `manifest.json` (written once, before any training), `metrics.jsonl`
//! (one record per update), `checkpoints/` and `summary.json`.

mod config;
mod report;

pub use config::{apply_override, Config, CorpusSection, Method, RunSection};
pub use report::{read_metrics, two_proportion_p_value, GeneralizationReport, METRIC_KEYS};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline_mlp::{MlpAgent, MlpWeights};
use crate::data;
use crate::env::household::Substitution;
use crate::env::{TaskEnv, TRAIN_TASKS};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::lm::{hex, load_adapters, load_checkpoint, pretrain, save_adapters, save_checkpoint, Mode, ModelParams};
use crate::policy::{explain_policy, Explanation, LmScorer};
use crate::ppo::{evaluate, train, EvalSummary, LmAgent, TrainSummary};
use crate::prompting::{generate_corpus, Prompter};
use crate::tokenizer::{Vocab, BOS_ID};

/// Environment variable naming the directory that holds runs.
pub const RUNS_ENV: &str = "LMAGENT_RUNS";

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const METRICS: &str = "metrics.jsonl";
pub const SUMMARY: &str = "summary.json";
/// Model checkpoint directory inside a pretraining run.
pub const LM_DIR: &str = "checkpoint";
/// Last checkpoint of a training run, under `checkpoints/`.
pub const FINAL: &str = "final";
pub const MLP_FILE: &str = "mlp.json";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash over every embedded layout, task and template file, each framed
/// with its path and length.
pub fn content_hash() -> String {
    let mut h = Sha256::new();
    for (path, text) in data::files() {
        h.update(format!("{path} {}\0", text.len()));
        h.update(text.as_bytes());
    }
    hex(&h.finalize())
}

/// Written once when a run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub kind: String,
    pub method: Option<Method>,
    pub task: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub content_hash: String,
    pub corpus_hash: Option<String>,
    pub started_at: u64,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))
            .map_err(|e| Error::Config(format!("{} is not a run directory: {e}", dir.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn run_id(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

/// Creates `dir` for a new run. Refuses directories that already hold a
/// manifest, since manifests are never rewritten.
fn start_run(dir: &Path, cfg: &Config, mut manifest: RunManifest) -> Result<()> {
    if dir.join(MANIFEST).exists() {
        return Err(Error::Config(format!("{} already holds a run", dir.display())));
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG), cfg.to_toml()?)?;
    manifest.config = serde_json::to_value(cfg)?;
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_run_config(dir: &Path) -> Result<Config> {
    Config::load(Some(&dir.join(CONFIG)), &[])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    pub vocab_size: usize,
    pub corpus_lines: usize,
    pub corpus_hash: String,
}

/// Builds corpus and vocabulary, trains the base model and saves it under
/// `dir/checkpoint`.
pub fn run_pretrain(cfg: &Config, dir: &Path, exec: ExecMode) -> Result<PretrainReport> {
    let c = &cfg.corpus;
    if c.tasks.is_empty() || c.samples == 0 {
        return Err(Error::Config("corpus is empty: corpus.tasks and corpus.samples must be non-empty".into()));
    }
    for t in &c.tasks {
        TaskEnv::new(t).map_err(|e| Error::Config(format!("corpus task {t:?}: {e}")))?;
    }
    let corpus = generate_corpus(&c.tasks, c.samples, c.seed)?;
    let text = corpus.join("\n") + "\n";
    let corpus_hash = sha256_hex(text.as_bytes());
    let vocab = Vocab::build(&corpus, c.vocab_size)?;
    let model_cfg = crate::lm::ModelConfig { vocab_size: vocab.len(), ..cfg.model.clone() };
    model_cfg.validate()?;
    let seqs: Vec<Vec<u32>> = corpus
        .iter()
        .map(|l| std::iter::once(BOS_ID).chain(vocab.encode(l).token_ids).collect())
        .collect();
    if let Some(s) = seqs.iter().find(|s| s.len() > model_cfg.context_length) {
        return Err(Error::Config(format!(
            "corpus line of {} tokens exceeds model.context_length {}",
            s.len(),
            model_cfg.context_length
        )));
    }
    start_run(
        dir,
        cfg,
        RunManifest {
            run_id: run_id(dir),
            kind: "pretrain".into(),
            method: None,
            task: None,
            seed: cfg.pretrain.seed,
            config: serde_json::Value::Null,
            content_hash: content_hash(),
            corpus_hash: Some(corpus_hash.clone()),
            started_at: now(),
            artifacts: vec![CONFIG.into(), "corpus.txt".into(), LM_DIR.into(), SUMMARY.into()],
        },
    )?;
    fs::write(dir.join("corpus.txt"), &text)?;
    let mut params = ModelParams::init(&model_cfg, cfg.pretrain.seed);
    let losses = pretrain(&mut params, &seqs, &cfg.pretrain, exec)?;
    save_checkpoint(&dir.join(LM_DIR), &params, Some(&vocab))?;
    let report = PretrainReport { losses, vocab_size: vocab.len(), corpus_lines: corpus.len(), corpus_hash };
    fs::write(dir.join(SUMMARY), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// A loaded agent of either kind.
// Only a handful exist per process, so the size gap is harmless.
#[allow(clippy::large_enum_variant)]
pub enum Agent {
    Mlp(MlpAgent),
    Lm(LmAgent),
}

macro_rules! with_agent {
    ($agent:expr, $m:ident => $body:expr) => {
        match $agent {
            Agent::Mlp($m) => $body,
            Agent::Lm($m) => $body,
        }
    };
}

/// Base language model and vocabulary of a pretraining run.
pub fn load_lm(pretrain_dir: &Path) -> Result<(ModelParams, Vocab)> {
    let ck = load_checkpoint(&pretrain_dir.join(LM_DIR))?;
    let vocab = ck
        .vocab
        .ok_or_else(|| Error::Mismatch(format!("{} has no vocabulary", pretrain_dir.display())))?;
    Ok((ck.params, vocab))
}

/// Fresh agent for a training run.
pub fn build_agent(cfg: &Config) -> Result<Agent> {
    let p = &cfg.ppo;
    if !cfg.run.method.uses_lm() {
        let env = TaskEnv::new(&cfg.run.task)?;
        return Ok(Agent::Mlp(MlpAgent::for_env(&env, p.actor_lr, p.critic_lr, p.seed)));
    }
    let lm = cfg.run.lm.as_ref().ok_or_else(|| Error::Config("run.lm is not set".into()))?;
    let (params, vocab) = load_lm(lm)?;
    Ok(Agent::Lm(LmAgent::new(params, vocab, cfg.normalization(), cfg.run.method.trainable(), p.actor_lr, p.critic_lr)?))
}

/// The pretrained model without any finetuning, scoring like `cfg`.
pub fn frozen_agent(cfg: &Config) -> Result<LmAgent> {
    let lm = cfg.run.lm.as_ref().ok_or_else(|| Error::Config("run.lm is not set".into()))?;
    let (params, vocab) = load_lm(lm)?;
    LmAgent::new(params, vocab, cfg.normalization(), false, cfg.ppo.actor_lr, cfg.ppo.critic_lr)
}

/// Agents that can write their trainable state to a directory.
pub trait SaveAgent {
    fn save(&self, dir: &Path) -> Result<()>;
}

impl SaveAgent for MlpAgent {
    fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MLP_FILE), serde_json::to_string(&self.weights())?)?;
        Ok(())
    }
}

impl SaveAgent for LmAgent {
    fn save(&self, dir: &Path) -> Result<()> {
        save_adapters(dir, self.params())
    }
}

/// Agent as it stood at the end of a training run.
pub fn load_trained(run_dir: &Path) -> Result<(Config, Agent)> {
    let cfg = load_run_config(run_dir)?;
    let p = &cfg.ppo;
    let ck = run_dir.join("checkpoints").join(FINAL);
    let agent = match cfg.run.method {
        Method::PpoMlp => {
            let text = fs::read_to_string(ck.join(MLP_FILE))
                .map_err(|e| Error::Config(format!("{}: no final checkpoint: {e}", run_dir.display())))?;
            let w: MlpWeights = serde_json::from_str(&text)?;
            Agent::Mlp(MlpAgent::from_weights(w, p.actor_lr, p.critic_lr))
        }
        Method::TwosomeFrozen => Agent::Lm(frozen_agent(&cfg)?),
        m => {
            let lm = cfg.run.lm.as_ref().ok_or_else(|| Error::Config("run.lm is not set".into()))?;
            let (mut params, vocab) = load_lm(lm)?;
            load_adapters(&ck, &mut params)?;
            params.touch();
            Agent::Lm(LmAgent::new(params, vocab, cfg.normalization(), m.trainable(), p.actor_lr, p.critic_lr)?)
        }
    };
    Ok((cfg, agent))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train: TrainSummary,
    pub eval: Option<EvalSummary>,
    pub finished_at: Option<u64>,
}

/// Offset separating evaluation random streams from training ones.
const EVAL_SEED_OFFSET: u64 = 1_000_003;

/// Trains the configured agent into `dir`.
pub fn run_train(cfg: &Config, dir: &Path) -> Result<TrainReport> {
    cfg.check_train()?;
    for w in cfg.ppo.warnings() {
        log::warn!("{w}");
    }
    let mut agent = build_agent(cfg)?;
    let trainable = cfg.run.method.trainable();
    let mut artifacts = vec![CONFIG.to_string(), METRICS.to_string(), SUMMARY.to_string()];
    if trainable {
        artifacts.push("checkpoints".into());
    }
    start_run(
        dir,
        cfg,
        RunManifest {
            run_id: run_id(dir),
            kind: "train".into(),
            method: Some(cfg.run.method),
            task: Some(cfg.run.task.clone()),
            seed: cfg.ppo.seed,
            config: serde_json::Value::Null,
            content_hash: content_hash(),
            corpus_hash: match &cfg.run.lm {
                Some(lm) => RunManifest::load(lm)?.corpus_hash,
                None => None,
            },
            started_at: now(),
            artifacts,
        },
    )?;
    let mut metrics = std::io::BufWriter::new(fs::File::create(dir.join(METRICS))?);
    let every = cfg.run.checkpoint_every;
    let ck_dir = dir.join("checkpoints");
    let summary = with_agent!(&mut agent, a => {
        train(a, &cfg.run.task, &cfg.ppo, |rec, model| {
            writeln!(metrics, "{}", serde_json::to_string(rec)?)?;
            metrics.flush()?;
            log::info!(
                "step {} success {:?} return {:?} kl {:?}",
                rec.global_step,
                rec.success_rate,
                rec.episodic_return_mean,
                rec.approx_kl
            );
            if trainable && every > 0 && rec.update % every == 0 {
                model.save(&ck_dir.join(format!("update_{:06}", rec.update)))?;
            }
            Ok(())
        })?
    });
    drop(metrics);
    if trainable {
        with_agent!(&agent, a => a.save(&ck_dir.join(FINAL)))?;
    }
    let eval = if cfg.run.eval_episodes > 0 {
        let seed = cfg.ppo.seed + EVAL_SEED_OFFSET;
        Some(with_agent!(&mut agent, a => evaluate(a, &cfg.run.task, cfg.run.eval_episodes, cfg.run.greedy_eval, seed, cfg.ppo.exec)?))
    } else {
        None
    };
    let report = TrainReport { train: summary, eval, finished_at: (!cfg.ppo.deterministic).then(now) };
    fs::write(dir.join(SUMMARY), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Evaluates a finished run, on its own task unless `task` is given.
pub fn run_eval(
    run_dir: &Path,
    task: Option<&str>,
    episodes: usize,
    greedy: bool,
    seed: u64,
    exec: ExecMode,
) -> Result<EvalSummary> {
    let (cfg, mut agent) = load_trained(run_dir)?;
    let task = task.unwrap_or(&cfg.run.task);
    TaskEnv::new(task).map_err(|e| Error::Config(format!("task {task:?}: {e}")))?;
    with_agent!(&mut agent, a => evaluate(a, task, episodes, greedy, seed, exec))
}

fn task_title(id: &str) -> Result<String> {
    if let Ok(s) = Substitution::builtin(id) {
        if let Some(t) = s.title {
            return Ok(t);
        }
    }
    match TaskEnv::new(id)?.world() {
        crate::env::World::House(h) => Ok(h.spec.title.clone()),
        crate::env::World::Kitchen(_) => Ok(id.to_string()),
    }
}

fn lm_run(dir: &Path, base_task: &str) -> Result<Config> {
    let cfg = load_run_config(dir)?;
    if !cfg.run.method.uses_lm() {
        return Err(Error::Config(format!("{} is not a language-model run", dir.display())));
    }
    if cfg.run.task != base_task {
        return Err(Error::Config(format!("{} was trained on {}, expected {base_task}", dir.display(), cfg.run.task)));
    }
    Ok(cfg)
}

/// Tests finetuned and untuned agents on the unseen tasks: the six
/// substitution tasks and the Entertainment crossover use the Food
/// Preparation run; the Food Preparation crossover uses the Entertainment
/// run when given.
pub fn run_generalize(
    fp_run: &Path,
    ent_run: Option<&Path>,
    episodes: usize,
    greedy: bool,
    seed: u64,
    exec: ExecMode,
) -> Result<GeneralizationReport> {
    let fp_cfg = lm_run(fp_run, "food_preparation")?;
    let ent_cfg = ent_run.map(|d| lm_run(d, "entertainment")).transpose()?;
    let mut columns: Vec<(String, String, Option<PathBuf>)> = Substitution::all()?
        .into_iter()
        .filter_map(|s| s.id)
        .map(|id| (id, fp_run.to_path_buf()))
        .map(|(id, d)| (id.clone(), id, Some(d)))
        .collect();
    columns.push(("food_preparation".into(), "food_preparation".into(), ent_run.map(Path::to_path_buf)));
    columns.push(("entertainment".into(), "entertainment".into(), Some(fp_run.to_path_buf())));

    let mut tasks = Vec::new();
    let mut tuned = Vec::new();
    let mut untuned = Vec::new();
    for (id, task, source) in columns {
        tasks.push(task_title(&id)?);
        match source {
            Some(dir) => {
                let (_, mut agent) = load_trained(&dir)?;
                tuned.push(Some(with_agent!(&mut agent, a => evaluate(a, &task, episodes, greedy, seed, exec))?));
                let base_cfg = if dir == fp_run { &fp_cfg } else { ent_cfg.as_ref().expect("entertainment run") };
                let mut frozen = frozen_agent(base_cfg)?;
                untuned.push(Some(evaluate(&mut frozen, &task, episodes, greedy, seed, exec)?));
            }
            None => {
                tuned.push(None);
                untuned.push(None);
            }
        }
    }
    Ok(GeneralizationReport { tasks, rows: vec![("TWOSOME".into(), tuned), ("SayCan".into(), untuned)] })
}

/// Builds an environment and replays `trace` (action keys) from reset.
pub fn replay(task: &str, trace: &[String]) -> Result<TaskEnv> {
    let mut env = TaskEnv::new(task)?;
    for key in trace {
        let a = env
            .valid_actions()
            .into_iter()
            .find(|&a| env.action_key(a) == *key)
            .ok_or_else(|| Error::InvalidInput(format!("action {key:?} is not available in this state")))?;
        env.step(a)?;
    }
    if env.is_done() {
        return Err(Error::InvalidInput("the trace ends the episode".into()));
    }
    Ok(env)
}

/// Explains the policy of a pretraining run (base model) or a language
/// model training run (adapted model) in the state reached by `trace`.
pub fn run_explain(dir: &Path, task: &str, trace: &[String]) -> Result<Explanation> {
    let (params, vocab) = if dir.join(LM_DIR).exists() {
        load_lm(dir)?
    } else {
        match load_trained(dir)?.1 {
            Agent::Lm(a) => (a.params().clone(), a.vocab().clone()),
            Agent::Mlp(_) => return Err(Error::Config("explanations need a language-model run".into())),
        }
    };
    let env = replay(task, trace)?;
    let valid = env.valid_actions();
    let (obs, acts) = Prompter::for_env(&env)?.prompts(&env, &valid)?;
    let obs = vocab.encode(&obs);
    let acts: Vec<_> = acts.iter().map(|a| vocab.encode(a)).collect();
    explain_policy(&LmScorer { params: &params, mode: Mode::WithAdapters }, &vocab, &obs, &acts)
}

/// Methods, training tasks and unseen tasks as a printable listing.
pub fn list_tasks() -> Result<String> {
    let mut out = String::from("methods x training tasks:\n");
    for m in Method::ALL {
        for t in TRAIN_TASKS {
            out.push_str(&format!("  {} {}\n", m.as_str(), t));
        }
    }
    out.push_str("unseen tasks (evaluation only):\n");
    for s in Substitution::all()? {
        if let Some(id) = s.id {
            out.push_str(&format!("  {} (from {})\n", id, s.base));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_hash_is_stable_hex() {
        let h = content_hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, content_hash());
    }

    #[test]
    fn listing_covers_matrix() {
        let l = list_tasks().unwrap();
        assert_eq!(l.lines().filter(|x| x.starts_with("  twosome_word ")).count(), 4);
        assert!(l.contains("laundry"));
    }

    #[test]
    fn replay_rejects_unavailable_actions() {
        assert!(replay("food_preparation", &["grab_food".to_string()]).is_err());
        let env = replay("food_preparation", &["walk_food".to_string(), "grab_food".to_string()]).unwrap();
        assert!(!env.is_done());
    }

    #[test]
    fn empty_corpus_is_refused() {
        let mut cfg = Config::default();
        cfg.corpus.tasks.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run_pretrain(&cfg, dir.path(), ExecMode::Sequential), Err(Error::Config(_))));
    }
}
