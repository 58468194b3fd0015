use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::TRAIN_TASKS;
use crate::error::{Error, Result};
use crate::lm::{ModelConfig, PretrainConfig};
use crate::policy::NormalizationMode;
use crate::ppo::PpoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PpoMlp,
    TwosomeFrozen,
    TwosomeNone,
    TwosomeToken,
    TwosomeWord,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::PpoMlp, Method::TwosomeFrozen, Method::TwosomeNone, Method::TwosomeToken, Method::TwosomeWord];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PpoMlp => "ppo_mlp",
            Method::TwosomeFrozen => "twosome_frozen",
            Method::TwosomeNone => "twosome_none",
            Method::TwosomeToken => "twosome_token",
            Method::TwosomeWord => "twosome_word",
        }
    }

    pub fn uses_lm(self) -> bool {
        self != Method::PpoMlp
    }

    pub fn trainable(self) -> bool {
        self != Method::TwosomeFrozen
    }

    /// Normalization fixed by the method; `None` means the configured one.
    pub fn normalization(self) -> Option<NormalizationMode> {
        match self {
            Method::TwosomeNone => Some(NormalizationMode::None),
            Method::TwosomeToken => Some(NormalizationMode::Token),
            Method::TwosomeWord => Some(NormalizationMode::Word),
            Method::PpoMlp | Method::TwosomeFrozen => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub method: Method,
    pub task: String,
    /// Pretraining run directory holding the language model.
    pub lm: Option<PathBuf>,
    /// Episodes of the final evaluation; zero skips it.
    pub eval_episodes: usize,
    pub greedy_eval: bool,
    /// Save a checkpoint every this many updates; zero keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            method: Method::TwosomeWord,
            task: "tomato_salad".into(),
            lm: None,
            eval_episodes: 100,
            greedy_eval: false,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub tasks: Vec<String>,
    pub samples: usize,
    pub seed: u64,
    pub vocab_size: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { tasks: TRAIN_TASKS.iter().map(|s| s.to_string()).collect(), samples: 2000, seed: 0, vocab_size: 384 }
    }
}

/// Everything a run needs, as one hierarchical file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub ppo: PpoConfig,
    pub model: ModelConfig,
    pub corpus: CorpusSection,
    pub pretrain: PretrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            ppo: PpoConfig::default(),
            model: ModelConfig::default(),
            corpus: CorpusSection::default(),
            pretrain: PretrainConfig { epochs: 2, ..PretrainConfig::default() },
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `dotted.key = raw` in `table`. `raw` is read as a TOML value and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{key:?} crosses a non-table value")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Config {
    /// Builds a config from user settings over the method's defaults. The
    /// MLP baseline starts from its own PPO preset.
    pub fn from_table(user: toml::Table) -> Result<Config> {
        let method = match user.get("run").and_then(|r| r.get("method")) {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("run.method must be a string".into())),
            None => RunSection::default().method,
        };
        let mut base = Config::default();
        if method == Method::PpoMlp {
            base.ppo = PpoConfig::mlp_baseline();
        }
        // TOML has no null, so an unset target_kl in the base would come
        // back as the serde default. Restore it unless the user set one.
        let user_kl = user.get("ppo").and_then(|p| p.get("target_kl")).is_some();
        let base_kl = base.ppo.target_kl;
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, user);
        let mut cfg: Config =
            table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if !user_kl {
            cfg.ppo.target_kl = base_kl;
        }
        cfg.ppo.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    /// Reads an optional file, then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Config::from_table(table)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Normalization the agent scores with.
    pub fn normalization(&self) -> NormalizationMode {
        self.run.method.normalization().unwrap_or(self.ppo.normalization)
    }

    /// Checks that the method, task and LM source fit together.
    pub fn check_train(&self) -> Result<()> {
        if !TRAIN_TASKS.contains(&self.run.task.as_str()) {
            return Err(Error::Config(format!(
                "run.task {:?} is not a training task (expected one of {})",
                self.run.task,
                TRAIN_TASKS.join(", ")
            )));
        }
        match (self.run.method.uses_lm(), &self.run.lm) {
            (true, None) => Err(Error::Config(format!("method {} needs run.lm (a pretraining run)", self.run.method.as_str()))),
            (false, Some(_)) => Err(Error::Config("method ppo_mlp does not use a language model; drop run.lm".into())),
            _ => Ok(()),
        }
    }
}
