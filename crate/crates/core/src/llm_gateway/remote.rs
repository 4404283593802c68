use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, Expect, GatewayRequest, ProviderError};

/// Provider speaking the OpenAI-compatible `/chat/completions` protocol.
pub struct OpenAiCompatible {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl OpenAiCompatible {
    pub fn new(api_base: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self {
            agent,
            endpoint: format!("{}/chat/completions", api_base.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
        }
    }
}

impl ChatProvider for OpenAiCompatible {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn send(&self, req: &GatewayRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.rendered_prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        });
        if req.expect == Expect::JsonSchema {
            body["response_format"] = json!({"type": "json_object"});
        }
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Fatal(format!("HTTP {status}: {text}")));
        }
        let value: Value =
            resp.body_mut().read_json().map_err(|e| ProviderError::Fatal(format!("bad reply body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal("reply has no choices[0].message.content".into()))
    }
}
