//! Runtime configuration: a TOML file plus `DORAG_*` environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_index::{Embedder, HashProjectionEmbedder, RemoteEmbedder};
use crate::ingest::ChunkPolicy;
use crate::kg_builder::KgBuildConfig;
use crate::llm_gateway::{ChatProvider, Gateway, OpenAiCompatible, RetryPolicy, ScriptedMock, Transcript};
use crate::retrieval::RetrievalConfig;
use crate::trace::Clock;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {detail}")]
    File { path: String, detail: String },
    #[error("environment variable {key}: {detail}")]
    Env { key: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProvider {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProvider,
    pub dim: usize,
    pub seed: u64,
    pub url: String,
    pub model: String,
    pub timeout_ms: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Hash,
            dim: 64,
            seed: 0,
            url: String::new(),
            model: String::new(),
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmProvider {
    #[default]
    Mock,
    Openai,
}

impl std::str::FromStr for LlmProvider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(LlmProvider::Mock),
            "openai" | "openai-compatible" => Ok(LlmProvider::Openai),
            other => Err(format!("unknown provider `{other}` (expected mock or openai)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub provider: LlmProvider,
    pub model: String,
    pub api_base: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    /// Scripted transcript for the mock provider. Without one the mock
    /// answers every request with its echo payload.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: LlmProvider::Mock,
            model: "gpt-4o-mini".into(),
            api_base: "https://api.openai.com/v1".into(),
            api_key: None,
            transcript: None,
            max_in_flight: 8,
            timeout_ms: 60_000,
            retry_attempts: 3,
            retry_base_ms: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Records evaluated concurrently.
    pub width: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { width: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into() }
    }
}

/// When knowledge-graph extraction runs relative to ingest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    /// Ingest returns once chunks are indexed; extraction runs afterwards.
    #[default]
    Async,
    /// Ingest extracts before returning.
    Sync,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub chunking: ChunkPolicy,
    pub embedding: EmbeddingConfig,
    pub llm: LlmConfig,
    pub retrieval: RetrievalConfig,
    pub kg: KgBuildConfig,
    pub eval: EvalConfig,
    pub service: ServiceConfig,
    pub extraction: ExtractionMode,
    /// Fixed timestamp in milliseconds; makes traces reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_clock: Option<u64>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::File { path: "<string>".into(), detail: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_err = |detail: String| ConfigError::File { path: path.display().to_string(), detail };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| file_err(e.to_string()))
    }

    /// Loads `path` if given (defaults otherwise) and applies the process environment.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply_env_from(std::env::vars())?;
        Ok(c)
    }

    /// Applies `DORAG_PROVIDER`, `DORAG_MODEL`, `DORAG_API_BASE`, `DORAG_API_KEY`,
    /// `DORAG_TRANSCRIPT` and `DORAG_FIXED_CLOCK`. Other keys are ignored.
    /// A transcript implies the mock provider.
    pub fn apply_env_from<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        for (k, v) in vars {
            let key = k.as_ref();
            let v: String = v.into();
            let env_err = |detail: String| ConfigError::Env { key: key.to_string(), detail };
            match key {
                "DORAG_PROVIDER" => self.llm.provider = v.parse().map_err(env_err)?,
                "DORAG_MODEL" => self.llm.model = v,
                "DORAG_API_BASE" => self.llm.api_base = v,
                "DORAG_API_KEY" => self.llm.api_key = Some(v),
                "DORAG_TRANSCRIPT" => {
                    self.llm.provider = LlmProvider::Mock;
                    self.llm.transcript = Some(PathBuf::from(v));
                }
                "DORAG_FIXED_CLOCK" => {
                    self.fixed_clock =
                        Some(v.trim().parse().map_err(|e: std::num::ParseIntError| env_err(e.to_string()))?)
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunking.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.embedding.dim == 0 {
            return Err(ConfigError::Invalid("embedding.dim must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.retrieval.alpha) {
            return Err(ConfigError::Invalid(format!("retrieval.alpha {} outside [0, 1]", self.retrieval.alpha)));
        }
        if self.embedding.provider == EmbeddingProvider::Remote && self.embedding.url.is_empty() {
            return Err(ConfigError::Invalid("embedding.url is required for the remote provider".into()));
        }
        Ok(())
    }

    pub fn clock(&self) -> Clock {
        self.fixed_clock.map(Clock::Fixed).unwrap_or_default()
    }

    pub fn embedder(&self) -> Arc<dyn Embedder> {
        let e = &self.embedding;
        match e.provider {
            EmbeddingProvider::Hash => Arc::new(HashProjectionEmbedder::new(e.dim, e.seed)),
            EmbeddingProvider::Remote => {
                Arc::new(RemoteEmbedder::new(&e.url, &e.model, e.dim, Duration::from_millis(e.timeout_ms)))
            }
        }
    }

    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let l = &self.llm;
        let provider: Arc<dyn ChatProvider> = match l.provider {
            LlmProvider::Mock => {
                let transcript = match &l.transcript {
                    Some(p) => Transcript::load(p).map_err(ConfigError::Invalid)?,
                    None => Transcript::lenient(Vec::new()),
                };
                Arc::new(ScriptedMock::new(transcript))
            }
            LlmProvider::Openai => Arc::new(OpenAiCompatible::new(
                &l.api_base,
                &l.model,
                l.api_key.clone(),
                Duration::from_millis(l.timeout_ms),
            )),
        };
        let retry = RetryPolicy { attempts: l.retry_attempts, base_delay: Duration::from_millis(l.retry_base_ms) };
        Ok(Gateway::with_policy(provider, retry, l.max_in_flight))
    }
}
