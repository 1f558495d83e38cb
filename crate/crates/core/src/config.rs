//! Run configuration file (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! corpus_path = "corpus.jsonl"     # JSON lines with a "text" field
//! output_dir = "runs"
//! log_level = "info"
//!
//! [backend]
//! kind = "http"                    # or "mock"
//! base_url = "http://localhost:11434"
//!
//! [engine]                         # every key optional
//! samples_per_round = 4
//! [engine.role_params.actor]
//! temperature = 0.8
//! ```
//!
//! Omitted engine keys take their defaults; omitted role parameters take the
//! published per-role sampling values and the engine seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, MutationTrigger, SystemPrompts};
use crate::gateway::{BackendDescriptor, BackendKind, ModelRole, RoleParams};

pub const CONFIG_VERSION: u32 = 1;
/// Overrides `backend.base_url` for http backends.
pub const BASE_URL_ENV: &str = "PROMPTLOOP_BASE_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Error,
    Warn,
    #[default]
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            LogLevel::Error => "error",
            LogLevel::Warn => "warn",
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
            LogLevel::Trace => "trace",
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialParams {
    temperature: Option<f64>,
    top_k: Option<u32>,
    top_p: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineSection {
    samples_per_round: Option<usize>,
    best_capacity: Option<usize>,
    worst_capacity: Option<usize>,
    max_rounds: Option<u32>,
    score_target: Option<f64>,
    mutation_trigger: Option<MutationTrigger>,
    mutation_budget: Option<u32>,
    seed: Option<u64>,
    #[serde(default)]
    role_params: BTreeMap<ModelRole, PartialParams>,
    prompts: Option<SystemPrompts>,
}

impl EngineSection {
    fn resolve(self) -> EngineConfig {
        let d = EngineConfig::default();
        let seed = self.seed.unwrap_or(d.seed);
        let mut role_params = RoleParams::with_seed(seed);
        for (role, partial) in self.role_params {
            let p = role_params.get_mut(role);
            p.temperature = partial.temperature.unwrap_or(p.temperature);
            p.top_k = partial.top_k.unwrap_or(p.top_k);
            p.top_p = partial.top_p.unwrap_or(p.top_p);
            p.seed = partial.seed.unwrap_or(p.seed);
        }
        EngineConfig {
            samples_per_round: self.samples_per_round.unwrap_or(d.samples_per_round),
            best_capacity: self.best_capacity.unwrap_or(d.best_capacity),
            worst_capacity: self.worst_capacity.unwrap_or(d.worst_capacity),
            max_rounds: self.max_rounds.unwrap_or(d.max_rounds),
            score_target: self.score_target.or(d.score_target),
            mutation_trigger: self.mutation_trigger.unwrap_or(d.mutation_trigger),
            mutation_budget: self.mutation_budget.unwrap_or(d.mutation_budget),
            seed,
            role_params,
            prompts: self.prompts.unwrap_or_default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: Option<u32>,
    corpus_path: Option<PathBuf>,
    max_documents: Option<usize>,
    output_dir: Option<PathBuf>,
    log_level: Option<LogLevel>,
    backend: Option<BackendDescriptor>,
    #[serde(default)]
    engine: EngineSection,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliConfig {
    pub version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_documents: Option<usize>,
    pub output_dir: PathBuf,
    pub log_level: LogLevel,
    pub backend: BackendDescriptor,
    pub engine: EngineConfig,
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

impl CliConfig {
    /// Parses TOML text. Relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let version = raw.version.unwrap_or(CONFIG_VERSION);
        if version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported version {version}, expected {CONFIG_VERSION}"),
            ));
        }
        let resolve = |p: PathBuf| match base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        };
        Ok(Self {
            version,
            corpus_path: raw.corpus_path.map(resolve),
            max_documents: raw.max_documents,
            output_dir: resolve(raw.output_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            log_level: raw.log_level.unwrap_or_default(),
            backend: raw.backend.ok_or(ConfigError::Missing("backend"))?,
            engine: raw.engine.resolve(),
        })
    }

    /// Reads a config file and applies the base-URL environment override.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text, path.parent())?;
        config.apply_env_override(std::env::var(BASE_URL_ENV).ok());
        Ok(config)
    }

    /// A mock backend ignores the override.
    pub fn apply_env_override(&mut self, base_url: Option<String>) {
        if let (BackendKind::Http, Some(url)) = (self.backend.kind, base_url) {
            if !url.trim().is_empty() {
                self.backend.base_url = Some(url);
            }
        }
    }

    /// Checks everything that can be checked without contacting a backend.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backend.validate().map_err(|e| invalid("backend", e))?;
        self.engine.validate().map_err(|e| invalid("engine", e))?;
        if self.max_documents == Some(0) {
            return Err(invalid("max_documents", "must be >= 1"));
        }
        let corpus = self.corpus_path()?;
        validate_corpus_path(corpus)?;
        if self.output_dir.exists() && !self.output_dir.is_dir() {
            return Err(invalid(
                "output_dir",
                format!("{} is not a directory", self.output_dir.display()),
            ));
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> Result<&Path, ConfigError> {
        self.corpus_path
            .as_deref()
            .ok_or(ConfigError::Missing("corpus_path"))
    }

    /// Normalized TOML with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

pub fn validate_corpus_path(path: &Path) -> Result<(), ConfigError> {
    if !path.is_file() {
        return Err(invalid(
            "corpus_path",
            format!("{} is not a readable file", path.display()),
        ));
    }
    fs::File::open(path).map_err(|e| invalid("corpus_path", format!("{}: {e}", path.display())))?;
    Ok(())
}
