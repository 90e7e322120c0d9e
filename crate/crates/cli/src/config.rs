use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use agentgeo_core::llm::{CachedLlm, HttpConfig, HttpLlm, LlmClient, ScriptedLlm, ENV_KEY};
use agentgeo_core::metrics::{Embedder, HashedBow};
use agentgeo_core::optimizer::OptimizerConfig;
use agentgeo_core::pipeline::EvalSplit;
use agentgeo_core::querygen::QueryGenConfig;

use crate::Failure;

/// Chat endpoint settings. Missing values fall back to the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            endpoint: None,
            model: None,
            timeout_secs: 120,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    HashedBow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub embedder: EmbedderKind,
    pub embed_dim: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            embedder: EmbedderKind::HashedBow,
            embed_dim: 256,
        }
    }
}

impl MetricSettings {
    pub fn embedder(&self) -> Box<dyn Embedder> {
        match self.embedder {
            EmbedderKind::HashedBow => Box::new(HashedBow { dim: self.embed_dim }),
        }
    }
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub dataset: Option<PathBuf>,
    /// Root for `optimized/` and `runs/`.
    pub out_dir: PathBuf,
    /// Response cache for the HTTP adapter.
    pub cache_dir: Option<PathBuf>,
    /// Scripted transcript; when set no network is used.
    pub transcript: Option<PathBuf>,
    pub strict_transcript: bool,
    pub llm: LlmSettings,
    pub optimizer: OptimizerConfig,
    pub eval_split: EvalSplit,
    pub train_size: Option<usize>,
    pub metrics: MetricSettings,
    pub querygen: QueryGenConfig,
    /// Default log filter; `RUST_LOG` wins.
    pub log_level: String,
    /// Worker threads; defaults to the number of logical CPUs.
    pub threads: Option<usize>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            dataset: None,
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            transcript: None,
            strict_transcript: true,
            llm: LlmSettings::default(),
            optimizer: OptimizerConfig::default(),
            eval_split: EvalSplit::Test,
            train_size: None,
            metrics: MetricSettings::default(),
            querygen: QueryGenConfig::default(),
            log_level: "info".into(),
            threads: None,
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    pub fn threads(&self) -> usize {
        self.threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    pub fn llm(&self) -> Result<Box<dyn LlmClient>, Failure> {
        if let Some(path) = &self.transcript {
            if !path.exists() {
                return Err(Failure::usage(format!("transcript not found: {}", path.display())));
            }
            return Ok(Box::new(ScriptedLlm::from_file(path, self.strict_transcript)?));
        }
        let env = HttpConfig::from_env().ok();
        let endpoint = self
            .llm
            .endpoint
            .clone()
            .or_else(|| env.as_ref().map(|c| c.endpoint.clone()))
            .ok_or_else(|| {
                Failure::usage("no transcript given and no LLM endpoint configured (set AGENTGEO_LLM_ENDPOINT)")
            })?;
        let config = HttpConfig {
            endpoint,
            api_key: std::env::var(ENV_KEY).ok(),
            model: self
                .llm
                .model
                .clone()
                .or_else(|| env.map(|c| c.model))
                .unwrap_or_default(),
            timeout: Duration::from_secs(self.llm.timeout_secs),
            retries: self.llm.retries,
            backoff: Duration::from_secs(1),
        };
        let http: Box<dyn LlmClient> = Box::new(HttpLlm::new(config)?);
        Ok(match &self.cache_dir {
            Some(dir) => Box::new(CachedLlm::with_dir(http, dir)?),
            None => http,
        })
    }
}
