//! Benchmark config files and `--set` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use mibench_core::critics::CriticConfig;
use mibench_core::datagen::DatasetSpec;
use mibench_core::estimators::{EstimatorKind, DEFAULT_EMA_DECAY};
use mibench_core::harness::{default_schedule, RunConfig, ScheduleLevel, WindowPolicy};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    5e-4
}
fn default_stride() -> usize {
    1
}
fn default_decay() -> f64 {
    DEFAULT_EMA_DECAY
}
fn default_rows() -> usize {
    1000
}
fn default_per_class() -> usize {
    2000
}
fn default_backgrounds() -> usize {
    64
}
fn default_out() -> PathBuf {
    PathBuf::from("mibench-out")
}

/// Where image sources come from. Without a digit directory (or
/// `MIBENCH_DATA_DIR`) a synthetic glyph bank is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
    #[serde(default)]
    pub digits_dir: Option<PathBuf>,
    /// Directory of background images for `eta > 0`.
    #[serde(default)]
    pub backgrounds_dir: Option<PathBuf>,
    #[serde(default = "default_per_class")]
    pub synthetic_digits_per_class: usize,
    #[serde(default = "default_backgrounds")]
    pub synthetic_backgrounds: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            digits_dir: None,
            backgrounds_dir: None,
            synthetic_digits_per_class: default_per_class(),
            synthetic_backgrounds: default_backgrounds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    /// Pairs written by `generate`.
    #[serde(default = "default_rows")]
    pub rows: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { rows: default_rows() }
    }
}

/// A suite: one dataset crossed with every listed critic and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfigFile {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic: Option<CriticConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub critics: Vec<CriticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<ScheduleLevel>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub eval_stride: usize,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default)]
    pub reinit_per_level: bool,
    #[serde(default = "default_decay")]
    pub ema_decay: f64,
    #[serde(default)]
    pub window: WindowPolicy,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
}

impl BenchmarkConfigFile {
    /// Reads `path`, applies `key=value` overrides to the raw JSON, then
    /// parses and checks the schema version.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, CliError> {
        let version = value.get("schema_version").and_then(Value::as_u64);
        match version {
            Some(v) if v == u64::from(CONFIG_SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::Config(format!(
                    "schema_version: unsupported version {v}, expected {CONFIG_SCHEMA_VERSION}"
                )))
            }
            None => return Err(CliError::Config("schema_version: missing".into())),
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn critic_list(&self) -> Vec<CriticConfig> {
        self.critic.iter().chain(&self.critics).copied().collect()
    }

    pub fn estimator_list(&self) -> Vec<EstimatorKind> {
        self.estimator.iter().chain(&self.estimators).copied().collect()
    }

    /// One [`RunConfig`] per (critic, estimator) pair, critics outermost.
    pub fn run_configs(&self) -> Result<Vec<RunConfig>, CliError> {
        let (critics, estimators) = (self.critic_list(), self.estimator_list());
        if critics.is_empty() {
            return Err(CliError::Config("critics: at least one critic is required".into()));
        }
        if estimators.is_empty() {
            return Err(CliError::Config("estimators: at least one estimator is required".into()));
        }
        let mut out = Vec::new();
        for critic in &critics {
            for estimator in &estimators {
                let rc = RunConfig {
                    dataset: self.dataset.clone(),
                    critic: *critic,
                    estimator: *estimator,
                    batch_size: self.batch_size,
                    lr: self.lr,
                    schedule: self.schedule.clone(),
                    seed: self.seed,
                    eval_stride: self.eval_stride,
                    warmup_steps: self.warmup_steps,
                    reinit_per_level: self.reinit_per_level,
                    ema_decay: self.ema_decay,
                };
                rc.validate()?;
                out.push(rc);
            }
        }
        Ok(out)
    }
}

/// `a.b.c=value`; the value is parsed as JSON and falls back to a string.
/// Numeric segments index arrays. Missing object keys are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    if key.is_empty() {
        return Err(CliError::Config("--set: empty key".into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Config(format!("--set {key}: `{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Config(format!("--set {key}: index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(CliError::Config(format!(
                    "--set {key}: `{}` is not an object",
                    parts[..i].join(".")
                )))
            }
        };
    }
    unreachable!("loop returns on the last segment")
}
