//! Run configuration: one TOML file plus command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, the config file, then
//! overrides (`--set section.key=value` and dedicated flags, applied in
//! that order). The resolved configuration is written to the run
//! directory as `config.toml` so the run can be repeated exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use wordcraft_core::agent::{AgentConfig, MixActivation, TrainConfig};
use wordcraft_core::env::{Partition, RewardConfig, RewardMode};
use wordcraft_core::kglink::KgTrainConfig;
use wordcraft_core::recipes::SplitSpec;

use crate::formats::{self, FormatError};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("config {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("override `{0}` must look like section.key=value")]
    BadOverride(String),
    #[error("override `{path}`: `{segment}` is not a table")]
    NotATable { path: String, segment: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitSpec,
    pub task: TaskConfig,
    pub features: FeatureConfig,
    pub kg: KgTrainConfig,
    pub agent: AgentSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bench: BenchConfig,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            split: SplitSpec::default(),
            task: TaskConfig::default(),
            features: FeatureConfig::default(),
            kg: KgTrainConfig::default(),
            agent: AgentSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            bench: BenchConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

/// Where the recipe book and split come from. Missing paths mean the
/// bundled dataset and a split computed from `[split]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub recipes: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub depth: usize,
    pub distractors: usize,
    pub reward: RewardMode,
    /// Omitted means `2 * (depth + 1)`.
    pub max_steps: Option<usize>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            depth: 1,
            distractors: 1,
            reward: RewardMode::Sparse,
            max_steps: None,
        }
    }
}

impl TaskConfig {
    pub fn reward_config(&self) -> RewardConfig {
        match self.reward {
            RewardMode::Sparse => RewardConfig::sparse(),
            RewardMode::Shaped => RewardConfig::shaped(self.depth),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Word vectors from `features.vectors`.
    Pretrained,
    /// Unit-norm random rows.
    Random,
    /// Spectral features of recipe co-occurrence.
    Cooccurrence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    /// Ignored for pretrained vectors, whose width comes from the file.
    pub dim: usize,
    pub seed: u64,
    pub vectors: Option<PathBuf>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kind: FeatureKind::Cooccurrence,
            dim: 300,
            seed: 0,
            vectors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub key_dim: usize,
    pub value_dim: usize,
    pub hidden_dim: usize,
    pub mix_activation: MixActivation,
    pub seed: u64,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            key_dim: 300,
            value_dim: 300,
            hidden_dim: 300,
            mix_activation: MixActivation::Linear,
            seed: 0,
        }
    }
}

impl AgentSection {
    pub fn agent_config(&self, embed_dim: usize) -> AgentConfig {
        AgentConfig::with_dims(embed_dim, self.key_dim, self.value_dim, self.hidden_dim)
            .mix_activation(self.mix_activation)
            .seed(self.seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Agent,
    Random,
    Oracle,
    KgGreedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub policy: PolicyKind,
    pub partition: Partition,
    pub num_tasks: usize,
    pub seed: u64,
    /// Sample from the policy instead of acting greedily.
    pub sample: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            policy: PolicyKind::Agent,
            partition: Partition::Test,
            num_tasks: wordcraft_core::evalkit::DEFAULT_EVAL_TASKS,
            seed: 0,
            sample: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub envs: usize,
    pub seconds: f64,
    pub parallel: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            envs: 128,
            seconds: 10.0,
            parallel: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    /// Allowed browser origin; omitted allows any.
    pub cors_origin: Option<String>,
    pub num_train_tasks: usize,
    pub num_test_tasks: usize,
    pub show_solution_on_failure: bool,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            cors_origin: None,
            num_train_tasks: 40,
            num_test_tasks: 40,
            show_solution_on_failure: false,
        }
    }
}

/// A single `section.key=value` override. Values parse as TOML when
/// possible (numbers, booleans, quoted strings) and as bare strings
/// otherwise.
pub fn parse_override(raw: &str) -> Result<(String, Value), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(raw.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(raw.to_string()));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(seg) = parts.next() {
        let table = cur.as_table_mut().ok_or_else(|| ConfigError::NotATable {
            path: path.to_string(),
            segment: seg.to_string(),
        })?;
        if parts.peek().is_none() {
            table.insert(seg.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    Ok(())
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self, ConfigError> {
        let mut value = Value::try_from(RunConfig::default()).map_err(|e| ConfigError::Parse {
            origin: "defaults".into(),
            message: e.to_string(),
        })?;
        if let Some(path) = file {
            let text = formats::read_text(path)?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                origin: path.display().to_string(),
                message: e.to_string(),
            })?;
            merge(&mut value, Value::Table(table));
        }
        for (path, v) in overrides {
            set_path(&mut value, path, v.clone())?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: "resolved".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.task.depth == 0 {
            return bad("task.depth must be at least 1");
        }
        if self.features.dim == 0 {
            return bad("features.dim must be positive");
        }
        if self.features.kind == FeatureKind::Pretrained && self.features.vectors.is_none() {
            return bad("features.vectors is required for pretrained features");
        }
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return bad("split.train_ratio must lie in (0, 1)");
        }
        if self.bench.envs == 0 || self.train.num_envs == 0 {
            return bad("env counts must be positive");
        }
        if self.eval.num_tasks == 0 {
            return bad("eval.num_tasks must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `config.toml` into the run directory.
    pub fn write_resolved(&self) -> Result<PathBuf, ConfigError> {
        let path = self.run_dir.join(CONFIG_FILE);
        formats::write_text(&path, &self.to_toml())?;
        Ok(path)
    }

    pub fn max_steps(&self) -> usize {
        self.task
            .max_steps
            .unwrap_or_else(|| wordcraft_core::env::default_max_steps(self.task.depth))
    }
}
