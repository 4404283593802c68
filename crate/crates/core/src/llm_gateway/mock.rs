use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, GatewayRequest, ProviderError};

/// One scripted exchange.
///
/// All given matchers must hold: `template` equals the request's template id
/// or is a dotted prefix of it (`naive` matches `naive.v1`), every `contains`
/// string occurs in the rendered prompt, `seed` equals the request seed, and
/// `match` is either the template id or a prompt substring.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty", deserialize_with = "one_or_many")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u32>,
    /// Reply text; `{{echo}}` is replaced by the request's echo payload and
    /// `{{echo_json}}` by the same payload as a JSON string literal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    /// Successive replies for successive matching calls; the last repeats.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<String>,
    /// Simulated transport failure message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

impl TranscriptEntry {
    pub fn reply(template: &str, reply: impl Into<String>) -> Self {
        Self { template: Some(template.into()), reply: Some(reply.into()), ..Default::default() }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    fn template_matches(pattern: &str, template_id: &str) -> bool {
        template_id == pattern || template_id.strip_prefix(pattern).is_some_and(|rest| rest.starts_with('.'))
    }

    fn matches(&self, req: &GatewayRequest) -> bool {
        if let Some(t) = &self.template {
            if !Self::template_matches(t, &req.template_id) {
                return false;
            }
        }
        if let Some(m) = &self.match_ {
            if !Self::template_matches(m, &req.template_id) && !req.rendered_prompt.contains(m.as_str()) {
                return false;
            }
        }
        if self.seed.is_some_and(|s| s != req.seed) {
            return false;
        }
        self.contains.iter().all(|c| req.rendered_prompt.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub strict: bool,
    /// Reply for unmatched requests when not strict; defaults to the echo payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn strict(entries: Vec<TranscriptEntry>) -> Self {
        Self { strict: true, fallback: None, entries }
    }

    pub fn lenient(entries: Vec<TranscriptEntry>) -> Self {
        Self { strict: false, fallback: None, entries }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub template_id: String,
    pub prompt: String,
    pub seed: u32,
    pub entry: Option<usize>,
}

/// Deterministic provider replaying a [`Transcript`]; the first matching
/// entry wins.
pub struct ScriptedMock {
    transcript: Transcript,
    uses: Mutex<Vec<usize>>,
    calls: Mutex<Vec<CallRecord>>,
}

fn render(reply: &str, echo: Option<&str>) -> String {
    let echo = echo.unwrap_or_default();
    reply.replace("{{echo_json}}", &serde_json::to_string(echo).expect("string serializes")).replace("{{echo}}", echo)
}

impl ScriptedMock {
    pub fn new(transcript: Transcript) -> Self {
        let n = transcript.entries.len();
        Self { transcript, uses: Mutex::new(vec![0; n]), calls: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl ChatProvider for ScriptedMock {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, req: &GatewayRequest) -> Result<String, ProviderError> {
        let found = self.transcript.entries.iter().position(|e| e.matches(req));
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).push(CallRecord {
            template_id: req.template_id.clone(),
            prompt: req.rendered_prompt.clone(),
            seed: req.seed,
            entry: found,
        });
        let Some(i) = found else {
            if self.transcript.strict {
                return Err(ProviderError::Fatal(format!(
                    "strict transcript has no entry for template `{}`",
                    req.template_id
                )));
            }
            let reply = match &self.transcript.fallback {
                Some(f) => render(f, req.echo.as_deref()),
                None => req.echo.clone().unwrap_or_default(),
            };
            return Ok(reply);
        };
        let entry = &self.transcript.entries[i];
        let use_n = {
            let mut uses = self.uses.lock().unwrap_or_else(|e| e.into_inner());
            uses[i] += 1;
            uses[i] - 1
        };
        if let Some(msg) = &entry.fail {
            return Err(ProviderError::Transport(msg.clone()));
        }
        let reply = if !entry.replies.is_empty() {
            entry.replies[use_n.min(entry.replies.len() - 1)].as_str()
        } else {
            entry.reply.as_deref().unwrap_or_default()
        };
        Ok(render(reply, req.echo.as_deref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{schema, Gateway, GatewayError, RetryPolicy};
    use std::sync::Arc;
    use std::time::Duration;

    fn gw(t: Transcript) -> (Arc<ScriptedMock>, Gateway) {
        let mock = Arc::new(ScriptedMock::new(t));
        let gw =
            Gateway::with_policy(mock.clone(), RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) }, 4);
        (mock, gw)
    }

    #[test]
    fn template_entry_replies_verbatim() {
        let (_, gw) = gw(Transcript::strict(vec![TranscriptEntry::reply("naive", "Answer [1].")]));
        let req = GatewayRequest::text("naive.v1", "anything", 0.2);
        assert_eq!(gw.complete(&req).unwrap(), "Answer [1].");
    }

    #[test]
    fn strict_unmatched_is_error_lenient_echoes() {
        let (_, strict) = gw(Transcript::strict(vec![]));
        let req = GatewayRequest::text("refine.v1", "p", 0.2).with_echo("naive text");
        assert!(matches!(strict.complete(&req), Err(GatewayError::ProviderFailure(_))));
        let (_, lenient) = gw(Transcript::lenient(vec![]));
        assert_eq!(lenient.complete(&req).unwrap(), "naive text");
    }

    #[test]
    fn dotted_prefix_only() {
        let (_, gw) = gw(Transcript::strict(vec![TranscriptEntry::reply("naive", "x")]));
        assert!(gw.complete(&GatewayRequest::text("naivety.v1", "p", 0.0)).is_err());
    }

    #[test]
    fn repair_retry_recovers_from_one_invalid_reply() {
        let entry = TranscriptEntry {
            template: Some("decompose".into()),
            replies: vec!["not json".into(), "{\"sub_queries\":[{\"text\":\"q\",\"intent\":\"i\"}]}".into()],
            ..Default::default()
        };
        let (mock, gw) = gw(Transcript::strict(vec![entry]));
        let req = GatewayRequest::json("decompose.v1", "prompt", schema::DECOMPOSITION, 0.0);
        let out = gw.complete(&req).unwrap();
        assert!(out.contains("\"q\""));
        let calls = mock.calls();
        assert_eq!(calls.len(), 2);
        assert!(calls[1].prompt.contains("could not be used"));
    }

    #[test]
    fn two_invalid_replies_is_malformed() {
        let (_, gw) = gw(Transcript::strict(vec![TranscriptEntry::reply("decompose", "{}")]));
        let req = GatewayRequest::json("decompose.v1", "prompt", schema::DECOMPOSITION, 0.0);
        assert!(matches!(gw.complete(&req), Err(GatewayError::MalformedReply { .. })));
    }

    #[test]
    fn injected_transport_failure_retries_three_times() {
        let entry =
            TranscriptEntry { template: Some("naive".into()), fail: Some("timeout".into()), ..Default::default() };
        let (mock, gw) = gw(Transcript::strict(vec![entry]));
        assert!(matches!(
            gw.complete(&GatewayRequest::text("naive.v1", "p", 0.0)),
            Err(GatewayError::ProviderFailure(_))
        ));
        assert_eq!(mock.calls().len(), 3);
    }

    #[test]
    fn echo_json_placeholder_and_transcript_parsing() {
        let t: Transcript = serde_json::from_str(
            r#"{"strict": true, "entries": [
                {"template": "decompose", "contains": "Compare", "seed": 1, "reply": "{\"sub_queries\":[{\"text\":{{echo_json}},\"intent\":\"x\"}]}"}
            ]}"#,
        )
        .unwrap();
        let (_, gw) = gw(t);
        let req = GatewayRequest::json("decompose.v1", "Compare \"a\"", schema::DECOMPOSITION, 0.0)
            .with_echo("Compare \"a\"")
            .with_seed(1);
        let out = gw.complete(&req).unwrap();
        let parsed: schema::DecompositionReply = schema::parse(&out).unwrap();
        assert_eq!(parsed.sub_queries[0].text, "Compare \"a\"");
        assert!(gw.complete(&req.clone().with_seed(2)).is_err());
    }
}
