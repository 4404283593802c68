//! Staged answer generation with citations, abstention and follow-ups.

mod markers;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::llm_gateway::{schema, Gateway, GatewayRequest, EXTRACTION_TEMPERATURE, GENERATION_TEMPERATURE};
use crate::prompt::{self, or_none, Template};
use crate::retrieval::{format_history, graph_facts, FusionScore, RetrievalBundle};
use crate::trace::{Step, Trace};

pub use markers::{marker_set, markers_in_order, strip_invalid_markers};

/// The answer given when the evidence does not support one.
pub const ABSTENTION: &str = "I do not know.";
/// Most follow-up questions returned.
pub const MAX_FOLLOWUPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    GraphFact,
    Chunk,
}

/// One numbered item of the prompt evidence; `[index]` cites it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub index: usize,
    pub kind: EvidenceKind,
    pub text: String,
    pub chunk_id: String,
}

/// Graph facts first, then retrieved chunks in rank order. Items whose
/// source chunk is not in the bundle are left out.
pub fn evidence(bundle: &RetrievalBundle) -> Vec<EvidenceItem> {
    let mut out = Vec::new();
    for f in graph_facts(&bundle.subgraph) {
        if bundle.chunk(&f.chunk_id).is_some() {
            out.push(EvidenceItem {
                index: out.len() + 1,
                kind: EvidenceKind::GraphFact,
                text: f.text,
                chunk_id: f.chunk_id,
            });
        }
    }
    for hit in &bundle.chunk_hits {
        if let Some(c) = bundle.chunk(&hit.chunk_id) {
            out.push(EvidenceItem {
                index: out.len() + 1,
                kind: EvidenceKind::Chunk,
                text: c.content.clone(),
                chunk_id: c.chunk_id.clone(),
            });
        }
    }
    out
}

fn render_evidence(items: &[EvidenceItem], bundle: &RetrievalBundle) -> (String, String) {
    let mut facts = Vec::new();
    let mut chunks = Vec::new();
    for item in items {
        match item.kind {
            EvidenceKind::GraphFact => facts.push(format!("[{}] {}", item.index, item.text)),
            EvidenceKind::Chunk => {
                let c = bundle.chunk(&item.chunk_id).expect("evidence chunks come from the bundle");
                let mut loc = c.section_path.join(" > ");
                if let Some(p) = c.page {
                    loc.push_str(&format!(", page {p}"));
                }
                chunks.push(format!("[{}] ({})\n{}", item.index, or_none(&loc), item.text));
            }
        }
    }
    (facts.join("\n"), chunks.join("\n\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub marker: usize,
    pub chunk_id: String,
    pub doc_id: String,
    pub section_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEnvelope {
    pub naive: String,
    pub refined: String,
    pub condensed: String,
    pub citations: Vec<Citation>,
    pub followups: Vec<String>,
    pub abstained: bool,
    pub trace_id: String,
    pub fusion: FusionScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Naive,
    Refine,
    Condense,
    Followup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePrompt {
    pub stage: Stage,
    pub template_id: String,
    pub rendered: String,
}

fn is_abstention(text: &str) -> bool {
    let t = text.trim();
    t == ABSTENTION || t.trim_end_matches('.') == ABSTENTION.trim_end_matches('.')
}

struct Run<'a> {
    gateway: &'a Gateway,
    seed: u32,
    trace: &'a mut Trace,
    prompts: Vec<StagePrompt>,
}

impl Run<'_> {
    fn request(&self, t: Template, rendered: &str, echo: &str) -> GatewayRequest {
        GatewayRequest::text(t.id, rendered, GENERATION_TEMPERATURE).with_echo(echo).with_seed(self.seed)
    }

    fn note(&mut self, stage: Stage, t: Template, rendered: &str) {
        self.prompts.push(StagePrompt { stage, template_id: t.id.to_string(), rendered: rendered.to_string() });
    }
}

pub struct Generation {
    pub envelope: AnswerEnvelope,
    pub prompts: Vec<StagePrompt>,
}

fn abstained(trace_id: &str, fusion: FusionScore, naive: String, refined: String) -> AnswerEnvelope {
    AnswerEnvelope {
        naive,
        refined,
        condensed: ABSTENTION.to_string(),
        citations: Vec::new(),
        followups: Vec::new(),
        abstained: true,
        trace_id: trace_id.to_string(),
        fusion,
    }
}

/// Runs naive, refine, condense and follow-up stages over the bundle.
///
/// With no evidence, or when the naive stage fails, the envelope abstains.
/// Refine is attempted twice and falls back to the naive answer; condense
/// must keep exactly the refined answer's citation markers, is attempted
/// twice and falls back to the refined answer. A stage answer that is the
/// abstention sentence ends the chain with an abstention.
pub fn answer(gateway: &Gateway, bundle: &RetrievalBundle, seed: u32, trace: &mut Trace) -> Generation {
    let trace_id = trace.trace_id.clone();
    let items = evidence(bundle);
    let mut run = Run { gateway, seed, trace, prompts: Vec::new() };
    if items.is_empty() {
        return Generation {
            envelope: abstained(&trace_id, bundle.fusion, String::new(), String::new()),
            prompts: run.prompts,
        };
    }
    let max_marker = items.len();
    let (facts, chunks) = render_evidence(&items, bundle);
    let history = format_history(&bundle.history_snippet);

    // Naive.
    let started = Instant::now();
    let t = prompt::NAIVE;
    let rendered = t.render(&[
        ("query", &bundle.query),
        ("rewritten_query", &bundle.rewritten_query),
        ("history", or_none(&history)),
        ("graph_facts", or_none(&facts)),
        ("chunks", or_none(&chunks)),
    ]);
    run.note(Stage::Naive, t, &rendered);
    let naive = run.gateway.complete(&run.request(t, &rendered, &bundle.query));
    let naive_text = naive.as_ref().map(|s| s.trim().to_string()).unwrap_or_default();
    run.trace.record(
        Step::Naive,
        Some(t.id),
        &rendered,
        &naive_text,
        started,
        json!({"evidence": items, "prompt": rendered, "error": naive.as_ref().err().map(|e| e.to_string())}),
    );
    if naive.is_err() || naive_text.is_empty() || is_abstention(&naive_text) {
        let naive_text = if naive_text.is_empty() { String::new() } else { ABSTENTION.to_string() };
        let refined = naive_text.clone();
        return Generation { envelope: abstained(&trace_id, bundle.fusion, naive_text, refined), prompts: run.prompts };
    }
    let naive_text = strip_invalid_markers(&naive_text, max_marker);

    // Refine.
    let started = Instant::now();
    let t = prompt::REFINE;
    let rendered = t.render(&[
        ("query", &bundle.query),
        ("graph_facts", or_none(&facts)),
        ("chunks", or_none(&chunks)),
        ("naive_answer", &naive_text),
    ]);
    run.note(Stage::Refine, t, &rendered);
    let mut attempts = 0;
    let mut refined = None;
    while attempts < 2 && refined.is_none() {
        attempts += 1;
        if let Ok(text) = run.gateway.complete(&run.request(t, &rendered, &naive_text)) {
            let text = text.trim().to_string();
            if !text.is_empty() {
                refined = Some(text);
            }
        }
    }
    let refine_degraded = refined.is_none();
    let refined = strip_invalid_markers(&refined.unwrap_or_else(|| naive_text.clone()), max_marker);
    run.trace.record(
        Step::Refine,
        Some(t.id),
        &rendered,
        &refined,
        started,
        json!({"attempts": attempts, "degraded": refine_degraded, "prompt": rendered}),
    );
    if is_abstention(&refined) {
        return Generation {
            envelope: abstained(&trace_id, bundle.fusion, naive_text, ABSTENTION.to_string()),
            prompts: run.prompts,
        };
    }

    // Condense.
    let started = Instant::now();
    let t = prompt::CONDENSE;
    let rendered = t.render(&[("query", &bundle.query), ("refined_answer", &refined)]);
    run.note(Stage::Condense, t, &rendered);
    let want = marker_set(&refined);
    let mut attempts = 0;
    let mut condensed = None;
    while attempts < 2 && condensed.is_none() {
        attempts += 1;
        if let Ok(text) = run.gateway.complete(&run.request(t, &rendered, &refined)) {
            let text = text.trim().to_string();
            if !text.is_empty() && marker_set(&text) == want && !is_abstention(&text) {
                condensed = Some(text);
            }
        }
    }
    let condense_degraded = condensed.is_none();
    let condensed = condensed.unwrap_or_else(|| refined.clone());
    run.trace.record(
        Step::Condense,
        Some(t.id),
        &rendered,
        &condensed,
        started,
        json!({"attempts": attempts, "degraded": condense_degraded, "prompt": rendered}),
    );

    let citations: Vec<Citation> = marker_set(&condensed)
        .into_iter()
        .map(|m| {
            let item = &items[m - 1];
            let c = bundle.chunk(&item.chunk_id).expect("evidence chunks come from the bundle");
            Citation {
                marker: m,
                chunk_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                section_path: c.section_path.clone(),
                page: c.page,
            }
        })
        .collect();

    // Follow-ups.
    let started = Instant::now();
    let t = prompt::FOLLOWUP;
    let rendered = t.render(&[("query", &bundle.query), ("history", or_none(&history)), ("refined_answer", &refined)]);
    run.note(Stage::Followup, t, &rendered);
    let req = GatewayRequest::json(t.id, rendered.as_str(), schema::FOLLOWUPS, EXTRACTION_TEMPERATURE)
        .with_echo(bundle.query.as_str())
        .with_seed(seed);
    let followups = match run.gateway.complete(&req).and_then(|json| {
        schema::parse::<schema::FollowupsReply>(&json).map_err(|detail| {
            crate::llm_gateway::GatewayError::MalformedReply { schema: schema::FOLLOWUPS.into(), detail }
        })
    }) {
        Ok(reply) => clean_followups(reply.questions, &bundle.query),
        Err(e) => {
            tracing::warn!("follow-up generation failed: {e}");
            Vec::new()
        }
    };
    run.trace.record(
        Step::Followup,
        Some(t.id),
        &rendered,
        &followups.join("\n"),
        started,
        json!({"followups": followups, "prompt": rendered}),
    );

    let prompts = run.prompts;
    Generation {
        envelope: AnswerEnvelope {
            naive: naive_text,
            refined,
            condensed,
            citations,
            followups,
            abstained: false,
            trace_id,
            fusion: bundle.fusion,
        },
        prompts,
    }
}

/// Trims, drops empty questions, repeats and the query itself, and keeps at
/// most [`MAX_FOLLOWUPS`].
pub fn clean_followups(questions: Vec<String>, query: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    questions
        .into_iter()
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty() && q != query.trim() && seen.insert(q.clone()))
        .take(MAX_FOLLOWUPS)
        .collect()
}

#[cfg(test)]
mod tests;
