use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use super::*;
use crate::embed_index::{Embedding, HashProjectionEmbedder};
use crate::kg_store::{EntityNode, EntityType, RelationEdge};
use crate::llm_gateway::{RetryPolicy, ScriptedMock, Transcript, TranscriptEntry};
use crate::trace::Clock;

fn gateway(t: Transcript) -> Gateway {
    Gateway::with_policy(
        Arc::new(ScriptedMock::new(t)),
        RetryPolicy { attempts: 2, base_delay: Duration::from_millis(1) },
        2,
    )
}

fn trace() -> Trace {
    Trace::new("t-test", Clock::Fixed(0))
}

fn node(id: &str, name: &str, v: Vec<f32>) -> EntityNode {
    EntityNode {
        node_id: id.into(),
        name: name.into(),
        entity_type: EntityType::Parameter,
        description: format!("{name} description"),
        embedding: v,
        attributes: BTreeMap::new(),
        provenance: vec![format!("c-{id}")],
        merged_embeddings: vec![],
    }
}

fn edge(h: &str, t: &str, w: f64) -> RelationEdge {
    RelationEdge {
        edge_id: format!("{h}-{t}"),
        head: h.into(),
        tail: t.into(),
        relation_type: "relates_to".into(),
        description: String::new(),
        weight: w,
        provenance: vec!["c-edge".into()],
    }
}

#[test]
fn decompose_single_intent_and_two_intents() {
    let gw = gateway(Transcript::strict(vec![
        TranscriptEntry::reply(
            "decompose",
            r#"{"sub_queries":[{"text":"checkpoint tuning","intent":"tuning"},{"text":"redo-log tuning","intent":"tuning"}]}"#,
        )
        .containing("Compare checkpoint"),
        TranscriptEntry::reply("decompose", r#"{"sub_queries":[{"text":{{echo_json}},"intent":"definition"}]}"#),
    ]));
    let d = decompose(&gw, "What is X?", &[], &mut trace());
    assert_eq!(d.sub_queries.len(), 1);
    assert_eq!(d.sub_queries[0].text, "What is X?");
    let d = decompose(&gw, "Compare checkpoint and redo-log tuning", &[], &mut trace());
    assert_eq!(
        d.sub_queries.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
        ["checkpoint tuning", "redo-log tuning"]
    );
}

#[test]
fn decompose_degrades_on_failure() {
    let gw = gateway(Transcript::strict(vec![]));
    let mut t = trace();
    let d = decompose(&gw, "q?", &[], &mut t);
    assert_eq!(d, QueryDecomposition::single("q?"));
    assert_eq!(t.events()[0].detail["degraded"], true);
}

#[test]
fn graph_context_empty_and_identity() {
    let e = HashProjectionEmbedder::default();
    let g = KnowledgeGraph::new();
    let d = QueryDecomposition::single("anything");
    assert!(retrieve_graph_context(&g, &e, &d, &RetrievalConfig::default()).is_empty());

    let mut g = KnowledgeGraph::new();
    let v = e.embed("gstart timeout").unwrap().vector;
    g.upsert_node(node("p", "GSTART_TIMEOUT", v)).unwrap();
    g.upsert_node(node("q", "OTHER", e.embed("unrelated words here").unwrap().vector)).unwrap();
    let sub =
        retrieve_graph_context(&g, &e, &QueryDecomposition::single("gstart timeout"), &RetrievalConfig::default());
    assert_eq!(sub.hop_of["p"], 0);
    assert!((sub.seed_similarities["p"] - 1.0).abs() < 1e-6);
}

fn unit(i: usize, d: usize) -> Vec<f32> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

/// Plain BFS with the weight filter; no node cap.
fn bfs(g: &KnowledgeGraph, seed: &str, max_hops: usize, min_w: f64) -> BTreeMap<String, usize> {
    let mut hop = BTreeMap::from([(seed.to_string(), 0)]);
    let mut q = VecDeque::from([seed.to_string()]);
    while let Some(n) = q.pop_front() {
        let h = hop[&n];
        if h == max_hops {
            continue;
        }
        for e in g.incident(&n).filter(|e| e.weight >= min_w) {
            let m = e.other_end(&n).to_string();
            if !hop.contains_key(&m) {
                hop.insert(m.clone(), h + 1);
                q.push_back(m);
            }
        }
    }
    hop
}

#[test]
fn two_sub_queries_union_matches_bfs_union() {
    let d = 7;
    let mut g = KnowledgeGraph::new();
    for i in 0..7 {
        g.upsert_node(node(&format!("n{i}"), &format!("N{i}"), unit(i, d))).unwrap();
    }
    for (h, t, w) in [
        ("n0", "n1", 0.9),
        ("n1", "n2", 0.8),
        ("n2", "n3", 0.7),
        ("n3", "n4", 0.9),
        ("n4", "n5", 0.1),
        ("n5", "n6", 0.9),
        ("n6", "n1", 0.5),
    ] {
        g.upsert_edge(edge(h, t, w)).unwrap();
    }
    struct Fixed;
    impl Embedder for Fixed {
        fn dim(&self) -> usize {
            7
        }
        fn model_tag(&self) -> &str {
            "fixed"
        }
        fn embed(&self, text: &str) -> Result<Embedding, crate::embed_index::EmbedError> {
            Ok(Embedding::new(unit(text.trim_start_matches("n").parse().unwrap(), 7), "fixed"))
        }
    }
    let decomp = QueryDecomposition {
        original: "x".into(),
        sub_queries: vec![
            SubQuery { text: "n0".into(), intent_label: "a".into() },
            SubQuery { text: "n4".into(), intent_label: "b".into() },
        ],
    };
    let cfg = RetrievalConfig { k_seed: 1, ..Default::default() };
    let sub = retrieve_graph_context(&g, &Fixed, &decomp, &cfg);
    let mut oracle = bfs(&g, "n0", 2, 0.2);
    for (id, h) in bfs(&g, "n4", 2, 0.2) {
        oracle.entry(id).and_modify(|x| *x = (*x).min(h)).or_insert(h);
    }
    assert_eq!(sub.hop_of, oracle);
    let ids: BTreeSet<_> = sub.nodes.iter().map(|n| n.node_id.clone()).collect();
    assert_eq!(ids, oracle.keys().cloned().collect());
}

#[test]
fn rewrite_contract() {
    let gw = gateway(Transcript::strict(vec![
        TranscriptEntry::reply("rewrite", "How do I tune GSTART_TIMEOUT?").containing("GSTART_TIMEOUT")
    ]));
    assert_eq!(
        rewrite_query(&gw, "how do I tune the timeout", &Subgraph::default(), &mut trace()),
        "how do I tune the timeout"
    );
    let mut sub = Subgraph::default();
    sub.nodes.push(node("p", "GSTART_TIMEOUT", vec![1.0]));
    sub.hop_of.insert("p".into(), 0);
    let out = rewrite_query(&gw, "how do I tune the timeout", &sub, &mut trace());
    assert!(out.contains("GSTART_TIMEOUT"));
    let failing = gateway(Transcript::strict(vec![]));
    assert_eq!(rewrite_query(&failing, "orig", &sub, &mut trace()), "orig");
}

#[test]
fn bundle_on_empty_and_single_source() {
    let e = HashProjectionEmbedder::default();
    let gw = gateway(Transcript::lenient(vec![]));
    let g = KnowledgeGraph::new();
    let index = VectorIndex::new(64, e.model_tag());
    let chunks: BTreeMap<String, Chunk> = BTreeMap::new();
    let stores = Stores { graph: &g, index: &index, chunks: &chunks };
    let err = build_bundle(&gw, &e, &stores, "q", &[], &RetrievalConfig::default(), &mut trace()).unwrap_err();
    assert_eq!(err, RetrievalError::EmptyIndex);
    assert_eq!(
        build_bundle(&gw, &e, &stores, "  ", &[], &RetrievalConfig::default(), &mut trace()).unwrap_err(),
        RetrievalError::EmptyQuery
    );

    let mut index = VectorIndex::new(64, e.model_tag());
    index.insert("c-1", &e.embed("redo log size").unwrap()).unwrap();
    let stores = Stores { graph: &g, index: &index, chunks: &chunks };
    let mut t = trace();
    let b = build_bundle(&gw, &e, &stores, "redo log size", &[], &RetrievalConfig::default(), &mut t).unwrap();
    assert!(b.subgraph.is_empty());
    assert_eq!(b.fusion.graph_relevance, 0.0);
    assert_eq!(b.chunk_hits[0].chunk_id, "c-1");
    let steps: Vec<Step> = t.events().iter().map(|e| e.step).collect();
    assert_eq!(steps, Step::PIPELINE[..6].to_vec());
}

#[test]
fn history_snippet_keeps_last_turns() {
    let e = HashProjectionEmbedder::default();
    let gw = gateway(Transcript::lenient(vec![]));
    let g = KnowledgeGraph::new();
    let mut index = VectorIndex::new(64, e.model_tag());
    index.insert("c-1", &e.embed("x").unwrap()).unwrap();
    let chunks: BTreeMap<String, Chunk> = BTreeMap::new();
    let stores = Stores { graph: &g, index: &index, chunks: &chunks };
    let history: Vec<Turn> = (0..6)
        .map(|i| if i % 2 == 0 { Turn::user(format!("u{i}")) } else { Turn::assistant(format!("a{i}"), None) })
        .collect();
    let b = build_bundle(&gw, &e, &stores, "q", &history, &RetrievalConfig::default(), &mut trace()).unwrap();
    assert_eq!(b.history_snippet, history[2..].to_vec());
}
