use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vlqual_core::kb::ModelConfig;
use vlqual_core::tree::TreeConfig;
use vlqual_core::FusionConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("invalid value for {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Service settings. Every field has a default, so an empty file is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Knowledge-base directory; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Base URL of the embedding adapter used by `POST /extract`.
    pub adapter_url: Option<String>,
    pub models: ModelConfig,
    pub fusion: FusionConfig,
    pub tree: TreeConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            adapter_url: None,
            models: ModelConfig::default(),
            fusion: FusionConfig::default(),
            tree: TreeConfig::default(),
        }
    }
}

pub const ENV_LISTEN: &str = "VLQUAL_LISTEN";
pub const ENV_DATA_DIR: &str = "VLQUAL_DATA_DIR";
pub const ENV_ADAPTER_URL: &str = "VLQUAL_ADAPTER_URL";
pub const ENV_THRESHOLD: &str = "VLQUAL_THRESHOLD";

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml { path: path.to_path_buf(), source })
    }

    /// Reads `path` if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var(ENV_LISTEN) {
            self.listen = v
                .parse()
                .map_err(|e: std::net::AddrParseError| ConfigError::Env { var: ENV_LISTEN, message: e.to_string() })?;
        }
        if let Some(v) = var(ENV_DATA_DIR) {
            self.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = var(ENV_ADAPTER_URL) {
            self.adapter_url = Some(v);
        }
        if let Some(v) = var(ENV_THRESHOLD) {
            self.fusion.threshold = v
                .parse()
                .map_err(|e: std::num::ParseFloatError| ConfigError::Env { var: ENV_THRESHOLD, message: e.to_string() })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fusion.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.tree.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
