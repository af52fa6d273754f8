//! Per-resources-directory CLI settings in `<resources>/config.json`.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";
pub const DEFAULT_TOKEN_ENV: &str = "UNITARGET_TOKEN";

fn default_name() -> String {
    "default".into()
}

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    #[serde(default = "default_name")]
    pub taxonomy: String,
    #[serde(default = "default_name")]
    pub mapping: String,
    #[serde(default = "default_name")]
    pub overview: String,
    /// Chat endpoint checked by `doctor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the dataset access token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            taxonomy: default_name(),
            mapping: default_name(),
            overview: default_name(),
            endpoint: None,
            token_env: default_token_env(),
        }
    }
}

impl CliConfig {
    /// Reads the config of `resources`, falling back to defaults if absent.
    pub fn load(resources: &Path) -> anyhow::Result<Self> {
        let path = resources.join(CONFIG_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e).with_context(|| format!("cannot read {}", path.display())),
        }
    }

    /// Writes the config unless one exists. Returns whether it wrote.
    pub fn write_if_missing(&self, resources: &Path) -> anyhow::Result<bool> {
        let path = resources.join(CONFIG_FILE);
        if path.exists() {
            return Ok(false);
        }
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, json + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        Ok(true)
    }

    /// The dataset access token, if the configured variable is set.
    pub fn token(&self) -> Option<String> {
        std::env::var(&self.token_env).ok().filter(|t| !t.is_empty())
    }
}
