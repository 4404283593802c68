//! Answer relevancy, contextual recall, contextual precision@K,
//! faithfulness, the composite score and suite runs over annotated datasets.

mod metrics;
mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_index::{EmbedError, Embedder};
use crate::generation::ABSTENTION;
use crate::llm_gateway::{schema, Gateway, GatewayRequest, EXTRACTION_TEMPERATURE};
use crate::par;
use crate::prompt::{self, or_none};

pub use metrics::{
    answer_relevancy, answer_relevancy_from_cosines, composite, contextual_precision, contextual_recall_from_labels,
    faithfulness_from_labels, MetricReport, Passed, ANSWER_SAMPLES, PASS_THRESHOLD,
};
pub use report::{Aggregate, RecordOutcome, SuiteReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty text")]
    EmptyText,
    #[error("judge found no statements in the ground truth")]
    NoStatements,
    #[error("judge found no claims in the answer")]
    NoClaims,
    #[error("metric value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("expected {ANSWER_SAMPLES} answers, got {0}")]
    WrongAnswerCount(usize),
    #[error("judge: {0}")]
    Judge(String),
    #[error("system under test: {0}")]
    System(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("dataset line {line}: {detail}")]
    InvalidDataset { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceLocation {
    pub chapter: String,
    pub section: String,
    pub page: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    pub ground_truth: String,
    pub source: SourceLocation,
}

/// Parses a line-delimited JSON dataset; blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| EvalError::InvalidDataset { line: i + 1, detail };
        let r: EvalRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let empty =
            [&r.question, &r.ground_truth, &r.source.chapter, &r.source.section].iter().any(|s| s.trim().is_empty());
        if empty {
            return Err(bad("fields must be non-empty".into()));
        }
        if r.source.page == 0 {
            return Err(bad("page must be at least 1".into()));
        }
        out.push(r);
    }
    Ok(out)
}

fn numbered(contexts: &[String]) -> String {
    contexts.iter().enumerate().map(|(i, c)| format!("[{}] {c}", i + 1)).collect::<Vec<_>>().join("\n\n")
}

fn judge<T: serde::de::DeserializeOwned>(gateway: &Gateway, req: &GatewayRequest) -> Result<T, EvalError> {
    let json = gateway.complete(req).map_err(|e| EvalError::Judge(e.to_string()))?;
    schema::parse(&json).map_err(EvalError::Judge)
}

/// Judge-labelled statements of the ground truth; returns the labels and the recall.
pub fn contextual_recall(
    gateway: &Gateway,
    ground_truth: &str,
    contexts: &[String],
) -> Result<(Vec<bool>, f64), EvalError> {
    if ground_truth.trim().is_empty() {
        return Err(EvalError::EmptyText);
    }
    let t = prompt::JUDGE_STATEMENTS;
    let rendered = t.render(&[("ground_truth", ground_truth), ("contexts", or_none(&numbered(contexts)))]);
    let req =
        GatewayRequest::json(t.id, rendered, schema::JUDGE_STATEMENTS, EXTRACTION_TEMPERATURE).with_echo(ground_truth);
    let reply: schema::StatementsReply = judge(gateway, &req)?;
    let labels: Vec<bool> = reply.statements.iter().map(|s| s.attributable).collect();
    let value = contextual_recall_from_labels(&labels)?;
    Ok((labels, value))
}

/// Judge-labelled relevance of each ranked context; returns the flags and CP@K.
pub fn contextual_precision_judged(
    gateway: &Gateway,
    question: &str,
    ground_truth: &str,
    contexts: &[String],
) -> Result<(Vec<bool>, f64), EvalError> {
    if contexts.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let t = prompt::JUDGE_RELEVANCE;
    let rendered = t.render(&[("query", question), ("ground_truth", ground_truth), ("contexts", &numbered(contexts))]);
    let req = GatewayRequest::json(t.id, rendered, schema::JUDGE_RELEVANCE, EXTRACTION_TEMPERATURE).with_echo(question);
    let reply: schema::RelevanceReply = judge(gateway, &req)?;
    if reply.verdicts.len() != contexts.len() {
        return Err(EvalError::Judge(format!(
            "{} relevance verdicts for {} contexts",
            reply.verdicts.len(),
            contexts.len()
        )));
    }
    let flags: Vec<bool> = reply.verdicts.iter().map(|v| *v == 1).collect();
    let value = contextual_precision(&flags);
    Ok((flags, value))
}

/// Judge-labelled claims of the answer; an abstention scores 1 without a judge call.
pub fn faithfulness(gateway: &Gateway, answer: &str, contexts: &[String]) -> Result<(Vec<bool>, f64), EvalError> {
    if answer.trim().is_empty() {
        return Err(EvalError::EmptyText);
    }
    if answer.trim() == ABSTENTION {
        return Ok((Vec::new(), 1.0));
    }
    let t = prompt::JUDGE_CLAIMS;
    let rendered = t.render(&[("answer", answer), ("contexts", or_none(&numbered(contexts)))]);
    let req = GatewayRequest::json(t.id, rendered, schema::JUDGE_CLAIMS, EXTRACTION_TEMPERATURE).with_echo(answer);
    let reply: schema::ClaimsReply = judge(gateway, &req)?;
    let labels: Vec<bool> = reply.claims.iter().map(|c| c.truthful).collect();
    let value = faithfulness_from_labels(&labels)?;
    Ok((labels, value))
}

/// One answer from the system being evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SutAnswer {
    pub answer: String,
    /// Retrieved context texts in rank order.
    pub contexts: Vec<String>,
    pub trace_id: Option<String>,
}

/// The answering pipeline under evaluation.
pub trait SystemUnderTest: Sync {
    /// Answers `question`; `sample` distinguishes the independent generations
    /// averaged by answer relevancy.
    fn answer(&self, index: usize, question: &str, sample: u32) -> Result<SutAnswer, String>;

    /// Receives the judge labels of one record, for tracing.
    fn judged(&self, _trace_id: &str, _detail: serde_json::Value, _started: Instant) {}
}

/// Everything computed for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDetail {
    pub answers: Vec<String>,
    pub statements: Vec<bool>,
    pub relevance: Vec<bool>,
    pub claims: Vec<bool>,
    pub report: MetricReport,
}

pub fn evaluate_record(
    sut: &dyn SystemUnderTest,
    judge_gw: &Gateway,
    embedder: &dyn Embedder,
    index: usize,
    record: &EvalRecord,
) -> Result<RecordDetail, EvalError> {
    let main = sut.answer(index, &record.question, 0).map_err(EvalError::System)?;
    let mut answers = vec![main.answer.clone()];
    for sample in 1..ANSWER_SAMPLES as u32 {
        answers.push(sut.answer(index, &record.question, sample).map_err(EvalError::System)?.answer);
    }
    let started = Instant::now();
    let ar = answer_relevancy(embedder, &record.question, &answers)?;
    let (statements, cr) = contextual_recall(judge_gw, &record.ground_truth, &main.contexts)?;
    let (relevance, cp) =
        contextual_precision_judged(judge_gw, &record.question, &record.ground_truth, &main.contexts)?;
    let (claims, f) = faithfulness(judge_gw, &main.answer, &main.contexts)?;
    let report = MetricReport::new(ar, cr, cp, f)?;
    if let Some(trace_id) = &main.trace_id {
        sut.judged(
            trace_id,
            serde_json::json!({"statements": statements, "relevance": relevance, "claims": claims, "report": report}),
            started,
        );
    }
    Ok(RecordDetail { answers, statements, relevance, claims, report })
}

/// Evaluates every record with up to `width` records in flight. A failing
/// record is reported as a failure and does not stop the suite.
pub fn run_suite(
    dataset: &[EvalRecord],
    sut: &dyn SystemUnderTest,
    judge_gw: &Gateway,
    embedder: &dyn Embedder,
    width: usize,
) -> SuiteReport {
    let outcomes = par::with_width(width, |mode| {
        par::map_indexed(mode, dataset, |i, r| match evaluate_record(sut, judge_gw, embedder, i, r) {
            Ok(d) => RecordOutcome::scored(i, &r.question, d.report),
            Err(e) => RecordOutcome::failed(i, &r.question, e.to_string()),
        })
    });
    SuiteReport::from_outcomes(outcomes)
}
