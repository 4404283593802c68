//! Uniform access to chat-completion providers.
//!
//! [`Gateway::complete`] adds retries with exponential backoff on transport
//! failures, JSON schema validation with a single repair round-trip, and a
//! ceiling on in-flight requests. Providers implement [`ChatProvider`]; the
//! [`ScriptedMock`] replays a [`Transcript`] for fully offline runs.

mod mock;
mod remote;
pub mod schema;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{CallRecord, ScriptedMock, Transcript, TranscriptEntry};
pub use remote::OpenAiCompatible;

/// Temperature for extraction and judging calls.
pub const EXTRACTION_TEMPERATURE: f64 = 0.0;
/// Temperature for answer generation calls.
pub const GENERATION_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    FreeText,
    JsonSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayRequest {
    pub template_id: String,
    pub rendered_prompt: String,
    pub expect: Expect,
    pub schema_id: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Generation seed; distinct seeds request distinct samples.
    #[serde(default)]
    pub seed: u32,
    /// The main payload of the prompt (for instance the answer being refined).
    /// Mocks may echo it back.
    #[serde(default)]
    pub echo: Option<String>,
}

impl GatewayRequest {
    pub fn text(template_id: impl Into<String>, prompt: impl Into<String>, temperature: f64) -> Self {
        Self {
            template_id: template_id.into(),
            rendered_prompt: prompt.into(),
            expect: Expect::FreeText,
            schema_id: None,
            temperature,
            max_tokens: 1024,
            seed: 0,
            echo: None,
        }
    }

    pub fn json(template_id: impl Into<String>, prompt: impl Into<String>, schema_id: &str, temperature: f64) -> Self {
        Self {
            expect: Expect::JsonSchema,
            schema_id: Some(schema_id.to_string()),
            ..Self::text(template_id, prompt, temperature)
        }
    }

    pub fn with_echo(mut self, echo: impl Into<String>) -> Self {
        self.echo = Some(echo.into());
        self
    }

    pub fn with_seed(mut self, seed: u32) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    /// Retryable: connection problems, timeouts, 429 and 5xx responses.
    #[error("transport: {0}")]
    Transport(String),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("provider failure: {0}")]
    ProviderFailure(String),
    #[error("reply does not match schema `{schema}`: {detail}")]
    MalformedReply { schema: String, detail: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, req: &GatewayRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(250) }
    }
}

/// Caps the number of requests in flight.
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    limiter: Arc<Limiter>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self::with_policy(provider, RetryPolicy::default(), 8)
    }

    pub fn with_policy(provider: Arc<dyn ChatProvider>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            provider,
            retry,
            limiter: Arc::new(Limiter { max: max_in_flight.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }),
        }
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    fn send_with_retries(&self, req: &GatewayRequest) -> Result<String, GatewayError> {
        let _slot = self.limiter.acquire();
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.provider.send(req) {
                Ok(reply) => return Ok(reply),
                Err(ProviderError::Fatal(msg)) => return Err(GatewayError::ProviderFailure(msg)),
                Err(ProviderError::Transport(msg)) => {
                    tracing::warn!(template = %req.template_id, attempt, "transport failure: {msg}");
                    last = msg;
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(GatewayError::ProviderFailure(format!("{attempts} attempts failed: {last}")))
    }

    /// Sends a request. JSON replies are validated against the named schema;
    /// an invalid reply gets one repair round-trip before `MalformedReply`.
    /// The returned text for JSON requests is the bare JSON document.
    pub fn complete(&self, req: &GatewayRequest) -> Result<String, GatewayError> {
        let schema_id = match (req.expect, &req.schema_id) {
            (Expect::FreeText, _) => return self.send_with_retries(req),
            (Expect::JsonSchema, None) => {
                return Err(GatewayError::InvalidRequest("json_schema request without schema_id".into()))
            }
            (Expect::JsonSchema, Some(id)) => id.clone(),
        };
        let reply = self.send_with_retries(req)?;
        let detail = match schema::validate(&schema_id, &reply) {
            Ok(json) => return Ok(json),
            Err(detail) => detail,
        };
        let mut repair = req.clone();
        repair.rendered_prompt = format!(
            "{}\n\nYour previous reply could not be used: {detail}\nPrevious reply:\n{reply}\n\
             Reply again with only a JSON document that satisfies the `{schema_id}` schema.",
            req.rendered_prompt
        );
        let second = self.send_with_retries(&repair)?;
        schema::validate(&schema_id, &second)
            .map_err(|detail| GatewayError::MalformedReply { schema: schema_id, detail })
    }
}
