//! Single JSON configuration document. Every section has defaults, so `{}` is
//! a valid config.

use std::path::{Path, PathBuf};

use facetloop_core::catalog::CatalogConfig;
use facetloop_core::evalsuite::EvalConfig;
use facetloop_core::reward::RewardConfig;
use facetloop_core::trainer::TrainConfig;
use facetloop_core::usersim::SimConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming the config file; it takes precedence over the
/// default location but not over an explicit `--config`.
pub const CONFIG_ENV: &str = "FACETLOOP_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub catalog: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub trends: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub ctr: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub cache_ttl_secs: u64,
    pub cache_capacity: usize,
    pub session_idle_secs: u64,
    pub facet_k: usize,
    pub search_k: usize,
    /// Budget for one external-knowledge lookup.
    pub provider_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cache_ttl_secs: 300,
            cache_capacity: 10_000,
            session_idle_secs: 1800,
            facet_k: 10,
            search_k: 10,
            provider_timeout_ms: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Read from this environment variable, never from the file.
    pub api_key_env: String,
    pub timeout_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: "FACETLOOP_LLM_KEY".into(),
            timeout_ms: 10_000,
        }
    }
}

/// Flywheel and benchmark sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub ctr_bootstrap_sessions: usize,
    pub benchmark_sessions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { ctr_bootstrap_sessions: 300, benchmark_sessions: 1000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub catalog: CatalogConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
    pub service: ServiceConfig,
    pub llm: Option<LlmConfig>,
}

impl Config {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn load(explicit: Option<&Path>) -> anyhow::Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
                Self::from_json(&text).map_err(|e| anyhow::anyhow!("parsing config {}: {e}", path.display()))
            }
            None => Ok(Self::default()),
        }
    }

    /// Seed override applied to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.catalog.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.catalog.seed)
    }

    /// Stable content hash of the configuration, for checkpoints.
    pub fn hash(&self) -> u64 {
        let text = serde_json::to_string(self).unwrap_or_default();
        facetloop_core::rng::fnv1a(text.as_bytes())
    }
}
