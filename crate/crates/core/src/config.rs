//! Service configuration (TOML).
//!
//! Validation stops at the first error and names the offending key, e.g.
//! `tiers[3]: missing`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::CompressionPolicy;
use crate::costmodel::PriceTable;
use crate::memory::MemoryConfig;
use crate::router::{PolicyError, RouterPolicy, RouterSettings, TierPolicy};

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");
pub const CONFIG_ENV: &str = "CONTEXTGUARD_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{0}: missing")]
    Missing(String),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    /// Key path the error refers to, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Missing(k) | Self::Invalid { key: k, .. } => Some(k),
            _ => None,
        }
    }
}

impl From<PolicyError> for ConfigError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Missing(k) => Self::Missing(k),
            PolicyError::Invalid { key, message } => Self::Invalid { key, message },
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionBackend {
    #[default]
    Extractive,
    Slm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionConfig {
    pub backend: CompressionBackend,
    pub slm_endpoint_url: Option<String>,
    pub slm_model: String,
    #[serde(flatten)]
    pub policy: CompressionPolicy,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            backend: CompressionBackend::Extractive,
            slm_endpoint_url: None,
            slm_model: "local-slm".into(),
            policy: CompressionPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaultConfig {
    pub dir: Option<PathBuf>,
    pub key_env: String,
}

impl Default for VaultConfig {
    fn default() -> Self {
        Self {
            dir: None,
            key_env: "CONTEXTGUARD_VAULT_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    /// Tier the monolithic baseline would have been billed at.
    pub baseline_price_ref: String,
    pub csv_path: Option<PathBuf>,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            baseline_price_ref: "tier1".into(),
            csv_path: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScannerConfig {
    pub rules_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposerConfig {
    pub templates_path: Option<PathBuf>,
}

/// Raw file contents before validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub router: RouterSettings,
    #[serde(default)]
    pub tiers: Vec<TierPolicy>,
    #[serde(default)]
    pub prices: PriceTable,
    #[serde(default)]
    pub compression: CompressionConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub vault: VaultConfig,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub scanner: ScannerConfig,
    #[serde(default)]
    pub decomposer: DecomposerConfig,
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub server: ServerConfig,
    pub router: RouterPolicy,
    pub prices: PriceTable,
    pub compression: CompressionConfig,
    pub memory: MemoryConfig,
    pub vault: VaultConfig,
    pub ledger: LedgerConfig,
    pub audit: AuditConfig,
    pub scanner: ScannerConfig,
    pub decomposer: DecomposerConfig,
    /// Non-fatal findings.
    pub warnings: Vec<String>,
}

impl Config {
    /// The shipped default configuration.
    pub fn default_config() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("shipped config is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::validate(raw)
    }

    pub fn validate(raw: RawConfig) -> Result<Self, ConfigError> {
        let router = RouterPolicy::new(raw.router, raw.tiers)?;
        for t in router.tiers() {
            if !raw.prices.contains(&t.price_ref) {
                return Err(ConfigError::Missing(format!("prices.{}", t.price_ref)));
            }
        }
        if !raw.prices.contains(&raw.ledger.baseline_price_ref) {
            return Err(ConfigError::Missing(format!(
                "prices.{}",
                raw.ledger.baseline_price_ref
            )));
        }
        raw.prices
            .validate()
            .map_err(|e| invalid("prices", e.to_string()))?;

        let c = &raw.compression;
        if c.policy.min_tokens_to_compress < 1 {
            return Err(invalid(
                "compression.min_tokens_to_compress",
                "must be >= 1",
            ));
        }
        if c.policy.max_concurrent_requests < 1 {
            return Err(invalid(
                "compression.max_concurrent_requests",
                "must be >= 1",
            ));
        }
        if c.backend == CompressionBackend::Slm {
            let url = c
                .slm_endpoint_url
                .as_deref()
                .ok_or_else(|| ConfigError::Missing("compression.slm_endpoint_url".into()))?;
            crate::router::EndpointSpec::parse(url)
                .map_err(|m| invalid("compression.slm_endpoint_url", m))?;
        }

        let m = &raw.memory;
        if m.budget_tokens == 0 {
            return Err(invalid("memory.budget_tokens", "must be > 0"));
        }
        if m.recent_window == 0 {
            return Err(invalid("memory.recent_window", "must be >= 1"));
        }
        if m.recent_window as u64 >= m.budget_tokens {
            return Err(invalid(
                "memory.recent_window",
                "must be smaller than memory.budget_tokens",
            ));
        }
        let mut warnings = Vec::new();
        let reply_room = m.recent_window as u64 * router.settings.max_output_tokens as u64;
        if m.budget_tokens < reply_room {
            warnings.push(format!(
                "memory.budget_tokens ({}) is below recent_window x router.max_output_tokens ({reply_room}); \
                 recent turns may be truncated",
                m.budget_tokens
            ));
        }
        if raw.vault.dir.is_some() && raw.vault.key_env.trim().is_empty() {
            return Err(invalid("vault.key_env", "required when vault.dir is set"));
        }
        Ok(Self {
            server: raw.server,
            router,
            prices: raw.prices,
            compression: raw.compression,
            memory: raw.memory,
            vault: raw.vault,
            ledger: raw.ledger,
            audit: raw.audit,
            scanner: raw.scanner,
            decomposer: raw.decomposer,
            warnings,
        })
    }
}

/// `--config` wins over the environment variable; otherwise the shipped
/// defaults.
pub fn resolve_config(flag: Option<&Path>) -> Result<Config, ConfigError> {
    if let Some(p) = flag {
        return Config::load(p);
    }
    match std::env::var_os(CONFIG_ENV) {
        Some(p) if !p.is_empty() => Config::load(PathBuf::from(p)),
        _ => Ok(Config::default_config()),
    }
}
