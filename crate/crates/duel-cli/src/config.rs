//! Declarative run configuration.
//!
//! A single TOML document drives every subcommand. Parsing is strict:
//! unknown keys are rejected so a typo cannot silently misconfigure a run.
//! The seed is mandatory. `--set key.path=value` overrides are applied on
//! the raw document before typed deserialization, so they go through the
//! same validation.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use duel_core::memory::{EvictionPolicy, MemoryVariant};
use duel_core::nce::BiasSpec;
use duel_core::scoring::ScoreFunction;
use duel_core::sim::{ExperimentConfig, LossKind, StreamConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default = "default_score")]
    pub score: String,
    #[serde(default = "default_one")]
    pub score_tau: f64,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_capacity")]
    pub memory_capacity: usize,
    #[serde(default = "default_variant")]
    pub memory_variant: String,
    #[serde(default)]
    pub include_incoming: bool,
    #[serde(default)]
    pub batch_negatives: bool,
    #[serde(default = "default_probe")]
    pub probe_per_class: usize,
    #[serde(default)]
    pub log_evictions: bool,
    #[serde(default)]
    pub stream: StreamSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub num_classes: usize,
    pub dominant_class: usize,
    pub bias_factor: f64,
    pub ambient_dim: usize,
    pub embed_dim: usize,
    pub prototype_separation: f64,
    pub noise_sigma: f64,
    pub steps: usize,
    pub batch: usize,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection {
            num_classes: 10,
            dominant_class: 0,
            bias_factor: 27.0,
            ambient_dim: 32,
            embed_dim: 24,
            prototype_separation: -1.0 / 9.0,
            noise_sigma: 0.05,
            steps: 500,
            batch: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Safety sweep trials per score function.
    pub trials: usize,
    pub drift_steps: usize,
    pub drift_lr: f64,
    /// Random (alpha, s) pairs per score function.
    pub threshold_pairs: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            trials: 10_000,
            drift_steps: 10,
            drift_lr: 0.1,
            threshold_pairs: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub pool_sizes: Vec<usize>,
    pub dim: usize,
    /// Incremental replacements before the equivalence assertion.
    pub equivalence_ops: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            pool_sizes: vec![256, 1024, 2048],
            dim: 256,
            equivalence_ops: 2048,
        }
    }
}

fn default_policy() -> String {
    "duel-naive".into()
}
fn default_score() -> String {
    "linear".into()
}
fn default_loss() -> String {
    "info-nce".into()
}
fn default_one() -> f64 {
    1.0
}
fn default_temperature() -> f64 {
    0.7
}
fn default_lr() -> f64 {
    0.01
}
fn default_eval_every() -> usize {
    100
}
fn default_capacity() -> usize {
    256
}
fn default_variant() -> String {
    "stale".into()
}
fn default_probe() -> usize {
    100
}

/// Keys that hold floats; integer literals from `--set` are widened so
/// `--set lr=1` round-trips.
const FLOAT_KEYS: [&str; 7] = [
    "score_tau",
    "temperature",
    "lr",
    "bias_factor",
    "prototype_separation",
    "noise_sigma",
    "drift_lr",
];

/// Parses, applies overrides, and validates. `text` is the raw document;
/// overrides are `key.path=value` pairs.
pub fn load_config(text: &str, overrides: &[String]) -> Result<(RunConfig, String)> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| anyhow!("config is not valid TOML: {e}"))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    widen_float_keys(&mut table);
    let resolved = toml::to_string_pretty(&table).context("re-serializing resolved config")?;
    let cfg: RunConfig = toml::from_str(&resolved).map_err(|e| anyhow!("invalid config: {e}"))?;
    cfg.validate()?;
    Ok((cfg, resolved))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    // Route the value through the TOML parser so numbers, bools, and
    // arrays keep their types; anything unparseable is a bare string.
    let value = format!("x = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut node = table;
    let segments: Vec<&str> = path.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        node = node
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path `{path}`: `{seg}` is not a section"))?;
    }
    node.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

fn widen_float_keys(table: &mut toml::Table) {
    for (key, value) in table.iter_mut() {
        match value {
            toml::Value::Table(t) => widen_float_keys(t),
            toml::Value::Integer(i) if FLOAT_KEYS.contains(&key.as_str()) => {
                *value = toml::Value::Float(*i as f64);
            }
            _ => {}
        }
    }
}

impl RunConfig {
    pub fn policy(&self) -> Result<EvictionPolicy> {
        match self.policy.as_str() {
            "duel-naive" => Ok(EvictionPolicy::DuelNaive),
            "fifo" => Ok(EvictionPolicy::Fifo),
            "reservoir" => Ok(EvictionPolicy::Reservoir),
            other => bail!("unknown policy `{other}` (expected duel-naive, fifo, or reservoir)"),
        }
    }

    pub fn score(&self) -> Result<ScoreFunction> {
        match self.score.as_str() {
            "linear" => Ok(ScoreFunction::Linear),
            "gaussian" => ScoreFunction::gaussian(self.score_tau)
                .map_err(|e| anyhow!("invalid score_tau: {e}")),
            "quadratic" => Ok(ScoreFunction::Quadratic),
            other => bail!("unknown score `{other}` (expected linear, gaussian, or quadratic)"),
        }
    }

    pub fn loss(&self) -> Result<LossKind> {
        match self.loss.as_str() {
            "info-nce" => Ok(LossKind::InfoNce),
            "logistic" => Ok(LossKind::Logistic),
            other => bail!("unknown loss `{other}` (expected info-nce or logistic)"),
        }
    }

    pub fn variant(&self) -> Result<MemoryVariant> {
        match self.memory_variant.as_str() {
            "stale" => Ok(MemoryVariant::StaleEmbedding),
            "re-encode" => Ok(MemoryVariant::ReEncode),
            other => bail!("unknown memory_variant `{other}` (expected stale or re-encode)"),
        }
    }

    fn validate(&self) -> Result<()> {
        self.policy()?;
        self.score()?;
        self.loss()?;
        self.variant()?;
        self.bias_spec()?;
        Ok(())
    }

    pub fn bias_spec(&self) -> Result<BiasSpec> {
        BiasSpec::from_bias_factor(
            self.stream.num_classes,
            self.stream.dominant_class,
            self.stream.bias_factor,
        )
        .map_err(|e| anyhow!("invalid stream bias: {e}"))
    }

    pub fn stream_config(&self) -> Result<StreamConfig> {
        Ok(StreamConfig {
            bias: self.bias_spec()?,
            ambient_dim: self.stream.ambient_dim,
            embed_dim: self.stream.embed_dim,
            prototype_separation: self.stream.prototype_separation,
            noise_sigma: self.stream.noise_sigma,
            steps: self.stream.steps,
            batch: self.stream.batch,
            seed: self.seed,
        })
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            stream: self.stream_config()?,
            policy: self.policy()?,
            variant: self.variant()?,
            score: self.score()?,
            loss: self.loss()?,
            temperature: self.temperature,
            lr: self.lr,
            memory_capacity: self.memory_capacity,
            eval_every: self.eval_every,
            include_incoming: self.include_incoming,
            batch_negatives: self.batch_negatives,
            probe_per_class: self.probe_per_class,
            log_evictions: self.log_evictions,
        })
    }

    /// `<policy>_<bias>x_<seed>.csv`
    pub fn run_csv_name(&self) -> String {
        format!(
            "{}_{}x_{}.csv",
            self.policy,
            format_bias(self.stream.bias_factor),
            self.seed
        )
    }
}

pub fn format_bias(b: f64) -> String {
    format!("{b}")
}

/// FNV-1a content hash used in run manifests.
pub fn content_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}
