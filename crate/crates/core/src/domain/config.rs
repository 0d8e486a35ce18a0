use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DomainError, Mode, ProblemKind};

/// Which `Select` implementation a run uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    /// Mutual exclusivity for math, execution ranking for code.
    #[default]
    Auto,
    Math,
    Code,
    SelfRank,
}

impl SelectorKind {
    pub fn compatible_with(self, kind: ProblemKind) -> bool {
        match self {
            SelectorKind::Auto | SelectorKind::SelfRank => true,
            SelectorKind::Math => kind == ProblemKind::MathIntegerAnswer,
            SelectorKind::Code => kind == ProblemKind::CodeGeneration,
        }
    }
}

/// Which rollouts `Select` ranks each round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolScope {
    /// This round's rollouts plus the previous round's selection.
    #[default]
    CurrentPlusBest,
    /// Every rollout generated so far.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    8192
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
        }
    }
}

/// OpenAI-compatible endpoint settings. The API key is never part of the
/// config; it comes from `TRT_API_KEY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveSettings {
    #[serde(default = "default_base_url")]
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_request_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}
fn default_retries() -> u32 {
    4
}
fn default_backoff() -> u64 {
    500
}
fn default_request_timeout() -> u64 {
    600_000
}
fn default_in_flight() -> usize {
    8
}

impl LiveSettings {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            max_retries: default_retries(),
            initial_backoff_ms: default_backoff(),
            timeout_ms: default_request_timeout(),
            max_in_flight: default_in_flight(),
        }
    }
}

/// Parameters of the offline synthetic solver.
///
/// Solve success probability is `min(1, p0 + beta * n)` where `n` counts
/// knowledge entries in the prompt that mention one of `unlock_tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSettings {
    #[serde(default = "default_p0")]
    pub p0: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_unlock_tokens")]
    pub unlock_tokens: Vec<String>,
    /// Probability that an insight or explanation names an unlock token.
    #[serde(default = "one")]
    pub unlock_rate: f64,
    /// Probability that self-assessment recognises the correct answer when
    /// it is among the candidates.
    #[serde(default = "one")]
    pub judge_accuracy: f64,
    #[serde(default)]
    pub world_seed: u64,
}

fn default_p0() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.15
}
fn one() -> f64 {
    1.0
}
fn default_unlock_tokens() -> Vec<String> {
    ["invariant", "telescoping", "bijection", "parity"]
        .into_iter()
        .map(String::from)
        .collect()
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            p0: default_p0(),
            beta: default_beta(),
            unlock_tokens: default_unlock_tokens(),
            unlock_rate: 1.0,
            judge_accuracy: 1.0,
            world_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Openai(LiveSettings),
    /// Replay file; relative paths resolve against the config file.
    Scripted {
        script: PathBuf,
    },
    Synthetic(SyntheticSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxSettings {
    /// Interpreter command line; the program path is appended.
    #[serde(default = "default_cmd")]
    pub cmd: String,
    #[serde(default = "default_sandbox_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_output_cap")]
    pub max_output_bytes: usize,
    #[serde(default = "default_sandbox_workers")]
    pub workers: usize,
}

fn default_cmd() -> String {
    "python3".into()
}
fn default_sandbox_timeout() -> u64 {
    10_000
}
fn default_output_cap() -> usize {
    64 * 1024
}
fn default_sandbox_workers() -> usize {
    4
}

impl Default for SandboxSettings {
    fn default() -> Self {
        Self {
            cmd: default_cmd(),
            timeout_ms: default_sandbox_timeout(),
            max_output_bytes: default_output_cap(),
            workers: default_sandbox_workers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "default_parallel")]
    pub parallel_samples: u32,
    #[serde(default = "default_population")]
    pub rsa_population: u32,
    #[serde(default = "default_iterations")]
    pub rsa_iterations: u32,
    /// Defaults to the population size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsa_subset_size: Option<u32>,
}

fn default_parallel() -> u32 {
    64
}
fn default_population() -> u32 {
    2
}
fn default_iterations() -> u32 {
    8
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            parallel_samples: default_parallel(),
            rsa_population: default_population(),
            rsa_iterations: default_iterations(),
            rsa_subset_size: None,
        }
    }
}

impl BaselineConfig {
    pub fn subset_size(&self) -> u32 {
        self.rsa_subset_size.unwrap_or(self.rsa_population)
    }
}

/// Everything that determines a run's behaviour. Its fingerprint is stamped
/// into every trace header and the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rounds: u32,
    pub rollouts_per_round: u32,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub selector: SelectorKind,
    #[serde(default)]
    pub pool: PoolScope,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub knowledge_cap_fraction: f64,
    /// Insights at least this similar to an existing entry are dropped.
    #[serde(default = "default_dedup")]
    pub dedup_threshold: f64,
    #[serde(default)]
    pub sampling: Sampling,
    pub backend: BackendConfig,
    #[serde(default)]
    pub sandbox: SandboxSettings,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

fn default_mode() -> Mode {
    Mode::Edit
}
fn default_cap() -> f64 {
    0.05
}
fn default_dedup() -> f64 {
    0.9
}

impl RunConfig {
    pub fn new(rounds: u32, rollouts_per_round: u32, backend: BackendConfig) -> Self {
        Self {
            rounds,
            rollouts_per_round,
            mode: default_mode(),
            selector: SelectorKind::default(),
            pool: PoolScope::default(),
            seed: 0,
            knowledge_cap_fraction: default_cap(),
            dedup_threshold: default_dedup(),
            sampling: Sampling::default(),
            backend,
            sandbox: SandboxSettings::default(),
            baseline: BaselineConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DomainError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| DomainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DomainError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let err = |m: &str| Err(DomainError::Config(m.to_string()));
        if self.rounds < 1 {
            return err("rounds must be >= 1");
        }
        if self.rollouts_per_round < 1 {
            return err("rollouts_per_round must be >= 1");
        }
        if !(self.knowledge_cap_fraction > 0.0 && self.knowledge_cap_fraction <= 1.0) {
            return err("knowledge_cap_fraction must be in (0, 1]");
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return err("dedup_threshold must be in (0, 1]");
        }
        if self.sampling.temperature.is_nan() || self.sampling.temperature < 0.0 {
            return err("sampling.temperature must be >= 0");
        }
        if self.sampling.max_tokens < 1 {
            return err("sampling.max_tokens must be >= 1");
        }
        if self.sandbox.cmd.split_whitespace().next().is_none() {
            return err("sandbox.cmd is empty");
        }
        if self.sandbox.timeout_ms == 0 {
            return err("sandbox.timeout_ms must be > 0");
        }
        let b = &self.baseline;
        if b.parallel_samples < 1 || b.rsa_population < 1 || b.rsa_iterations < 1 {
            return err("baseline sizes must be >= 1");
        }
        if b.subset_size() < 1 || b.subset_size() > b.rsa_population {
            return err("baseline.rsa_subset_size must be in [1, rsa_population]");
        }
        match &self.backend {
            BackendConfig::Synthetic(s) => {
                for (name, p) in [
                    ("p0", s.p0),
                    ("unlock_rate", s.unlock_rate),
                    ("judge_accuracy", s.judge_accuracy),
                ] {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(DomainError::Config(format!(
                            "backend.{name} must be in [0, 1]"
                        )));
                    }
                }
                if s.beta.is_nan() || s.beta < 0.0 {
                    return err("backend.beta must be >= 0");
                }
            }
            BackendConfig::Openai(l) => {
                if l.model.trim().is_empty() {
                    return err("backend.model is empty");
                }
                if l.max_in_flight == 0 {
                    return err("backend.max_in_flight must be >= 1");
                }
            }
            BackendConfig::Scripted { .. } => {}
        }
        Ok(())
    }

    /// Stable hash of the parsed config. Formatting and comments in the
    /// source file do not affect it; any value change does.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn script_path(&self, base_dir: &Path) -> Option<PathBuf> {
        match &self.backend {
            BackendConfig::Scripted { script } if script.is_relative() => {
                Some(base_dir.join(script))
            }
            BackendConfig::Scripted { script } => Some(script.clone()),
            _ => None,
        }
    }
}
