//! Experiment documents shared by the runner and the statistics: personas,
//! the theory/hypothesis/experiment configuration and per-pair records.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("experiment config `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub persona_id: String,
    /// Substituted verbatim for the persona placeholder of the prompt.
    pub description: String,
    pub side: Side,
}

fn default_temperature() -> f32 {
    0.0
}
fn default_max_tokens() -> u32 {
    32
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    8
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_true() -> bool {
    true
}

/// One theory-grounded experiment. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Citation or summary of the grounding theory.
    pub theory: String,
    pub hypothesis: String,
    /// Path to the sample manifest written by `sample`.
    pub sample_manifest: PathBuf,
    #[serde(default)]
    pub personas: Vec<PersonaSpec>,
    /// Optional JSON file holding an array of personas, appended to `personas`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personas_file: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    /// Ask the server for `response_format: json_object`.
    #[serde(default = "default_true")]
    pub json_response_format: bool,
    /// Environment variable holding the API key, if the endpoint needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Record store path. Defaults to `<name>.records.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Reads a config, resolving relative paths and loading `personas_file`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        if let Some(file) = config.personas_file.clone() {
            let text = std::fs::read_to_string(&file).map_err(|source| ConfigError::Io {
                path: file.clone(),
                source,
            })?;
            let extra: Vec<PersonaSpec> =
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: file, source })?;
            config.personas.extend(extra);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.sample_manifest = join(&self.sample_manifest);
        self.personas_file = self.personas_file.as_deref().map(join);
        let records = self
            .records
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.records.jsonl", self.name)));
        self.records = Some(join(&records));
    }

    pub fn records_path(&self) -> PathBuf {
        self.records
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.records.jsonl", self.name)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |message: &str| ConfigError::Invalid {
            name: self.name.clone(),
            message: message.to_string(),
        };
        if self.name.trim().is_empty() {
            return Err(invalid("name is empty"));
        }
        if self.theory.trim().is_empty() {
            return Err(invalid("theory is empty; every experiment must cite its grounding theory"));
        }
        if self.hypothesis.trim().is_empty() {
            return Err(invalid("hypothesis is empty"));
        }
        if self.max_in_flight == 0 {
            return Err(invalid("max_in_flight must be at least 1"));
        }
        let mut ids = HashSet::new();
        for p in &self.personas {
            if !ids.insert(p.persona_id.as_str()) {
                return Err(invalid(&format!("duplicate persona_id `{}`", p.persona_id)));
            }
        }
        for side in [Side::Left, Side::Right] {
            if !self.personas.iter().any(|p| p.side == side) {
                return Err(invalid(&format!("no {side} personas")));
            }
        }
        Ok(())
    }
}

/// Verdict of one persona on one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub experiment: String,
    pub persona_id: String,
    pub instance_id: String,
    pub target: String,
    pub model_id: String,
    /// `None` when no valid response was obtained within the retry budget.
    pub verdict: Option<bool>,
    pub raw_response: String,
    pub attempts: u32,
    /// RFC 3339.
    pub timestamp: String,
}

impl ClassificationRecord {
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.experiment, &self.persona_id, &self.instance_id)
    }

    pub fn is_valid(&self) -> bool {
        self.verdict.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "name": "exp",
                "theory": "partisan pretraining shifts downstream hate speech detection",
                "hypothesis": "left personas flag more",
                "sample_manifest": "sample.manifest.json",
                "personas": [
                    {"persona_id": "l1", "description": "a union organizer", "side": "left"},
                    {"persona_id": "r1", "description": "a small business owner", "side": "right"}
                ],
                "endpoint": "http://localhost:8000/v1",
                "model_id": "m"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = config();
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.max_retries, 3);
        assert!(c.json_response_format);
        c.validate().unwrap();
    }

    #[test]
    fn empty_theory_rejected() {
        let mut c = config();
        c.theory = " ".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn one_sided_rejected() {
        let mut c = config();
        c.personas.retain(|p| p.side == Side::Left);
        assert!(c.validate().unwrap_err().to_string().contains("right"));
    }

    #[test]
    fn duplicate_persona_rejected() {
        let mut c = config();
        let dup = c.personas[0].clone();
        c.personas.push(dup);
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_in_flight_rejected() {
        let mut c = config();
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = config();
        c.resolve_paths(Path::new("/data/exp"));
        assert_eq!(c.sample_manifest, PathBuf::from("/data/exp/sample.manifest.json"));
        assert_eq!(c.records_path(), PathBuf::from("/data/exp/exp.records.jsonl"));
    }
}
