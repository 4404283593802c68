use std::sync::Arc;
use std::time::Duration;

use super::*;
use crate::kg_store::Subgraph;
use crate::llm_gateway::{RetryPolicy, ScriptedMock, Transcript, TranscriptEntry};
use crate::retrieval::{fuse, ChunkHit, ChunkRef, QueryDecomposition};
use crate::trace::Clock;

fn gateway(entries: Vec<TranscriptEntry>) -> (Arc<ScriptedMock>, Gateway) {
    let mock = Arc::new(ScriptedMock::new(Transcript::strict(entries)));
    (mock.clone(), Gateway::with_policy(mock, RetryPolicy { attempts: 1, base_delay: Duration::from_millis(1) }, 2))
}

fn bundle(n_chunks: usize) -> RetrievalBundle {
    let chunks: Vec<ChunkRef> = (1..=n_chunks)
        .map(|i| ChunkRef {
            chunk_id: format!("c-{i}"),
            doc_id: "doc-a".into(),
            section_path: vec!["Guide".into(), format!("Part {i}")],
            page: if i == 1 { Some(4) } else { None },
            content: format!("Evidence text number {i}."),
        })
        .collect();
    let hits: Vec<ChunkHit> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| ChunkHit { chunk_id: c.chunk_id.clone(), similarity: 0.9 - i as f64 * 0.1 })
        .collect();
    let sims: Vec<f64> = hits.iter().map(|h| h.similarity).collect();
    RetrievalBundle {
        query: "How long is the startup timeout?".into(),
        decomposition: QueryDecomposition::single("How long is the startup timeout?"),
        subgraph: Subgraph::default(),
        rewritten_query: "How long is GSTART_TIMEOUT?".into(),
        chunk_hits: hits,
        fusion: fuse(0.5, &sims, 0.0).unwrap(),
        history_snippet: vec![],
        chunks,
    }
}

fn run(entries: Vec<TranscriptEntry>, b: &RetrievalBundle) -> (Generation, Trace, Arc<ScriptedMock>) {
    let (mock, gw) = gateway(entries);
    let mut trace = Trace::new("t-x", Clock::Fixed(0));
    let g = answer(&gw, b, 0, &mut trace);
    (g, trace, mock)
}

fn followups(json: &str) -> TranscriptEntry {
    TranscriptEntry::reply("followup", json)
}

#[test]
fn empty_evidence_abstains_without_calls() {
    let (g, trace, mock) = run(vec![], &bundle(0));
    assert!(g.envelope.abstained);
    assert_eq!(g.envelope.condensed, ABSTENTION);
    assert!(g.envelope.citations.is_empty() && g.envelope.followups.is_empty());
    assert!(mock.calls().is_empty());
    assert!(trace.events().is_empty());
}

#[test]
fn full_chain_with_citations() {
    let b = bundle(3);
    let (g, trace, _) = run(
        vec![
            TranscriptEntry::reply("naive", "The timeout is 30s [1]. It can be raised [2]. It glows green [9]."),
            TranscriptEntry::reply("refine", "The timeout defaults to 30s [1] and can be raised [2]."),
            TranscriptEntry::reply("condense", "Default 30s [1]; raise it if needed [2]."),
            followups(r#"{"questions":["How do I raise it?","What unit is used?"]}"#),
        ],
        &b,
    );
    let env = &g.envelope;
    assert!(!env.abstained);
    assert_eq!(env.naive, "The timeout is 30s [1]. It can be raised [2]. It glows green.");
    assert_eq!(env.condensed, "Default 30s [1]; raise it if needed [2].");
    assert_eq!(env.citations.iter().map(|c| c.marker).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(env.citations[0].page, Some(4));
    assert_eq!(env.citations[1].page, None);
    assert_eq!(env.citations[1].section_path, vec!["Guide", "Part 2"]);
    assert_eq!(env.followups.len(), 2);
    let steps: Vec<Step> = trace.events().iter().map(|e| e.step).collect();
    assert_eq!(steps, vec![Step::Naive, Step::Refine, Step::Condense, Step::Followup]);
}

#[test]
fn refine_removes_unsupported_claim_and_echo_is_fixed_point() {
    let b = bundle(1);
    let (g, _, _) = run(
        vec![
            TranscriptEntry::reply("naive", "Timeout is 30s [1]. It was added in 1998."),
            TranscriptEntry::reply("refine", "Timeout is 30s [1]."),
            TranscriptEntry::reply("condense", "{{echo}}"),
            followups(r#"{"questions":[]}"#),
        ],
        &b,
    );
    assert_eq!(g.envelope.refined, "Timeout is 30s [1].");
    assert_eq!(g.envelope.condensed, g.envelope.refined);
    let (g, _, _) = run(
        vec![
            TranscriptEntry::reply("naive", "Timeout is 30s [1]."),
            TranscriptEntry::reply("refine", "{{echo}}"),
            TranscriptEntry::reply("condense", "{{echo}}"),
            followups(r#"{"questions":[]}"#),
        ],
        &b,
    );
    assert_eq!(g.envelope.refined, g.envelope.naive);
}

#[test]
fn failures_degrade() {
    let b = bundle(2);
    // Naive failure: abstain.
    let (g, _, _) = run(vec![], &b);
    assert!(g.envelope.abstained);
    assert_eq!(g.envelope.condensed, ABSTENTION);
    // Refine and follow-up failures.
    let (g, trace, mock) =
        run(vec![TranscriptEntry::reply("naive", "A [1] B [2]."), TranscriptEntry::reply("condense", "{{echo}}")], &b);
    assert_eq!(g.envelope.refined, "A [1] B [2].");
    assert!(g.envelope.followups.is_empty());
    assert_eq!(trace.events()[1].detail["degraded"], true);
    assert_eq!(mock.calls().iter().filter(|c| c.template_id == "refine.v1").count(), 2);
}

#[test]
fn condense_dropping_marker_falls_back() {
    let b = bundle(2);
    let (g, _, mock) = run(
        vec![
            TranscriptEntry::reply("naive", "A [1] B [2]."),
            TranscriptEntry::reply("refine", "{{echo}}"),
            TranscriptEntry::reply("condense", "A [1]."),
            followups(r#"{"questions":["a","b","c","d","e"]}"#),
        ],
        &b,
    );
    assert_eq!(g.envelope.condensed, "A [1] B [2].");
    assert_eq!(g.envelope.citations.len(), 2);
    assert_eq!(mock.calls().iter().filter(|c| c.template_id == "condense.v1").count(), 2);
    assert_eq!(g.envelope.followups, vec!["a", "b", "c"]);
}

#[test]
fn model_abstention_is_abstention() {
    let b = bundle(1);
    let (g, _, _) = run(vec![TranscriptEntry::reply("naive", "I do not know.")], &b);
    assert!(g.envelope.abstained);
    assert!(g.envelope.citations.is_empty());
}

#[test]
fn stage_prompts_ground_correctly() {
    let b = bundle(2);
    let (g, _, _) = run(
        vec![
            TranscriptEntry::reply("naive", "A [1]."),
            TranscriptEntry::reply("refine", "A refined [1]."),
            TranscriptEntry::reply("condense", "{{echo}}"),
            followups(r#"{"questions":["q1"]}"#),
        ],
        &b,
    );
    let p = |s: Stage| g.prompts.iter().find(|p| p.stage == s).unwrap().rendered.clone();
    for c in &b.chunks {
        assert!(p(Stage::Naive).contains(&c.content));
        assert!(p(Stage::Refine).contains(&c.content));
        assert!(!p(Stage::Condense).contains(&c.content));
    }
    assert!(p(Stage::Refine).contains("A [1]."));
    assert!(p(Stage::Condense).contains("A refined [1]."));
    assert!(p(Stage::Followup).contains("A refined [1]."));
}

#[test]
fn followup_cleaning() {
    let q = "What?";
    let out = clean_followups(
        vec![" What? ".into(), "".into(), "x".into(), "x".into(), "y".into(), "z".into(), "w".into()],
        q,
    );
    assert_eq!(out, vec!["x", "y", "z"]);
}
