//! Line-based `key = value` configuration and provider selection.
//!
//! ```text
//! # mslm.conf
//! provider = mock
//! dim = 64
//! seed = 3
//! sigma = 0.2
//! ```
//!
//! Command-line flags win over the file; `MSLM_BRIDGE_URL` wins over any
//! configured endpoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use mslm::providers::{ProviderConfig, BRIDGE_URL_ENV, DEFAULT_DIM};

use crate::CliError;

pub const KEYS: &[&str] = &["provider", "dim", "seed", "sigma", "manifest", "endpoint", "timeout_ms"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", n + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| CliError::Usage(format!("config key {key}: bad value {v:?}"))))
            .transpose()
    }
}

/// Provider flags shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ProviderArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Embedding backend: mock, file or remote.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    /// Embedding width of the mock provider.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Seed for the mock provider and every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Gaussian noise added to mock pixel embeddings.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Descriptor manifest for the file provider.
    #[arg(long = "provider-manifest", global = true)]
    pub provider_manifest: Option<PathBuf>,
    /// Bridge endpoint for the remote provider.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
}

impl ProviderArgs {
    fn file(&self) -> Result<ConfigFile, CliError> {
        self.config.as_deref().map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        Ok(self.seed.or(self.file()?.parsed("seed")?).unwrap_or(0))
    }

    pub fn resolve(&self) -> Result<ProviderConfig, CliError> {
        self.resolve_with(std::env::var(BRIDGE_URL_ENV).ok())
    }

    pub fn resolve_with(&self, env_endpoint: Option<String>) -> Result<ProviderConfig, CliError> {
        let file = self.file()?;
        let kind = self.provider.clone().or_else(|| file.get("provider").map(String::from)).unwrap_or_else(|| "mock".into());
        match kind.as_str() {
            "mock" => Ok(ProviderConfig::Mock {
                dim: self.dim.or(file.parsed("dim")?).unwrap_or(DEFAULT_DIM),
                seed: self.seed.or(file.parsed("seed")?).unwrap_or(0),
                sigma: self.sigma.or(file.parsed("sigma")?).unwrap_or(0.0),
            }),
            "file" => {
                let manifest = self
                    .provider_manifest
                    .clone()
                    .or_else(|| file.get("manifest").map(PathBuf::from))
                    .ok_or_else(|| CliError::Usage("the file provider needs --provider-manifest".into()))?;
                Ok(ProviderConfig::File { manifest })
            }
            "remote" => {
                let endpoint = env_endpoint
                    .or_else(|| self.endpoint.clone())
                    .or_else(|| file.get("endpoint").map(String::from))
                    .ok_or_else(|| CliError::Usage(format!("the remote provider needs --endpoint or {BRIDGE_URL_ENV}")))?;
                let timeout = Duration::from_millis(file.parsed("timeout_ms")?.unwrap_or(30_000));
                Ok(ProviderConfig::Remote { endpoint, timeout })
            }
            other => Err(CliError::Usage(format!("unknown provider {other:?}; expected mock, file or remote"))),
        }
    }
}
