//! Query-time retrieval: decomposition, graph context, graph-aware rewrite,
//! vector search and score fusion.

mod fusion;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::embed_index::{Embedder, VectorIndex};
use crate::ingest::Chunk;
use crate::kg_store::{graph_relevance, KnowledgeGraph, Subgraph, TraverseParams, DEFAULT_GAMMA, SUMMARIZES};
use crate::llm_gateway::{schema, Gateway, GatewayRequest, EXTRACTION_TEMPERATURE};
use crate::prompt::{self, or_none};
use crate::session::{Role, Turn};
use crate::trace::{Step, Trace};

pub use fusion::{fuse, FusionScore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("both the vector index and the knowledge graph are empty")]
    EmptyIndex,
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("graph relevance {0} outside [0, 1]")]
    RelevanceOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub alpha: f64,
    pub k_chunks: usize,
    pub k_seed: usize,
    pub max_hops: usize,
    pub min_edge_weight: f64,
    pub max_nodes: usize,
    pub gamma: f64,
    pub history_turns: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let t = TraverseParams::default();
        Self {
            alpha: 0.5,
            k_chunks: 8,
            k_seed: 5,
            max_hops: t.max_hops,
            min_edge_weight: t.min_edge_weight,
            max_nodes: t.max_nodes,
            gamma: DEFAULT_GAMMA,
            history_turns: 4,
        }
    }
}

impl RetrievalConfig {
    pub fn traverse_params(&self) -> TraverseParams {
        TraverseParams { max_hops: self.max_hops, min_edge_weight: self.min_edge_weight, max_nodes: self.max_nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub text: String,
    pub intent_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDecomposition {
    pub original: String,
    pub sub_queries: Vec<SubQuery>,
}

impl QueryDecomposition {
    pub fn single(query: &str) -> Self {
        Self {
            original: query.to_string(),
            sub_queries: vec![SubQuery { text: query.to_string(), intent_label: "general".into() }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkHit {
    pub chunk_id: String,
    pub similarity: f64,
}

/// A chunk as carried in a bundle: content plus the location used for citations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRef {
    pub chunk_id: String,
    pub doc_id: String,
    pub section_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<u32>,
    pub content: String,
}

impl From<&Chunk> for ChunkRef {
    fn from(c: &Chunk) -> Self {
        Self {
            chunk_id: c.chunk_id.clone(),
            doc_id: c.doc_id.clone(),
            section_path: c.metadata.section_path.clone(),
            page: c.page(),
            content: c.content.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBundle {
    pub query: String,
    pub decomposition: QueryDecomposition,
    pub subgraph: Subgraph,
    pub rewritten_query: String,
    pub chunk_hits: Vec<ChunkHit>,
    pub fusion: FusionScore,
    pub history_snippet: Vec<Turn>,
    /// Every chunk the bundle refers to: the hits in rank order, then the
    /// provenance chunks of subgraph facts.
    pub chunks: Vec<ChunkRef>,
}

impl RetrievalBundle {
    pub fn chunk(&self, chunk_id: &str) -> Option<&ChunkRef> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }

    /// Chunk texts in retrieval order, as judged by the evaluation metrics.
    pub fn contexts(&self) -> Vec<String> {
        self.chunks.iter().map(|c| c.content.clone()).collect()
    }
}

/// Lookup of stored chunks by id.
pub trait ChunkSource {
    fn get_chunk(&self, chunk_id: &str) -> Option<&Chunk>;
}

impl ChunkSource for BTreeMap<String, Chunk> {
    fn get_chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.get(chunk_id)
    }
}

impl ChunkSource for HashMap<String, Chunk> {
    fn get_chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.get(chunk_id)
    }
}

/// A statement derived from the subgraph, citing the chunk it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFact {
    pub text: String,
    pub chunk_id: String,
}

/// Node facts in subgraph order, then relation facts by edge id. Synopsis
/// membership edges are omitted since the synopsis node already lists its
/// members. Each fact cites its first provenance chunk.
pub fn graph_facts(sub: &Subgraph) -> Vec<GraphFact> {
    let mut out = Vec::new();
    for n in &sub.nodes {
        let Some(chunk_id) = n.provenance.first() else { continue };
        let mut text = format!("{} ({})", n.name, n.entity_type.as_str());
        if !n.description.is_empty() {
            text.push_str(": ");
            text.push_str(&n.description);
        }
        if !n.attributes.is_empty() {
            let attrs: Vec<String> = n.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            text.push_str(&format!(" [{}]", attrs.join(", ")));
        }
        out.push(GraphFact { text, chunk_id: chunk_id.clone() });
    }
    let name = |id: &str| sub.node(id).map(|n| n.name.clone()).unwrap_or_else(|| id.to_string());
    for e in sub.edges.iter().filter(|e| e.relation_type != SUMMARIZES) {
        let Some(chunk_id) = e.provenance.first() else { continue };
        let mut text = format!("{} {} {}", name(&e.head), e.relation_type.replace('_', " "), name(&e.tail));
        if !e.description.is_empty() {
            text.push_str(": ");
            text.push_str(&e.description);
        }
        out.push(GraphFact { text, chunk_id: chunk_id.clone() });
    }
    out
}

pub fn format_history(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| {
            let role = match t.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            format!("{role}: {}", t.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits the query into sub-queries. Any gateway failure degrades to the
/// original query as the single sub-query.
pub fn decompose(gateway: &Gateway, query: &str, history: &[Turn], trace: &mut Trace) -> QueryDecomposition {
    let started = Instant::now();
    let history_text = format_history(history);
    let rendered = prompt::DECOMPOSE.render(&[("query", query), ("history", or_none(&history_text))]);
    let req = GatewayRequest::json(prompt::DECOMPOSE.id, rendered, schema::DECOMPOSITION, EXTRACTION_TEMPERATURE)
        .with_echo(query);
    let (decomp, degraded) = match gateway.complete(&req).and_then(|json| {
        schema::parse::<schema::DecompositionReply>(&json).map_err(|detail| {
            crate::llm_gateway::GatewayError::MalformedReply { schema: schema::DECOMPOSITION.into(), detail }
        })
    }) {
        Ok(reply) => {
            let sub_queries: Vec<SubQuery> = reply
                .sub_queries
                .into_iter()
                .map(|s| SubQuery {
                    text: s.text.trim().to_string(),
                    intent_label: if s.intent.trim().is_empty() {
                        "general".into()
                    } else {
                        s.intent.trim().to_string()
                    },
                })
                .filter(|s| !s.text.is_empty())
                .collect();
            if sub_queries.is_empty() {
                (QueryDecomposition::single(query), true)
            } else {
                (QueryDecomposition { original: query.to_string(), sub_queries }, false)
            }
        }
        Err(e) => {
            tracing::warn!("decomposition degraded: {e}");
            (QueryDecomposition::single(query), true)
        }
    };
    let out = serde_json::to_string(&decomp.sub_queries).expect("serializes");
    trace.record(
        Step::Decompose,
        Some(prompt::DECOMPOSE.id),
        &req.rendered_prompt,
        &out,
        started,
        json!({"sub_queries": decomp.sub_queries, "degraded": degraded, "prompt": req.rendered_prompt}),
    );
    decomp
}

/// Seed nodes per sub-query: the top `k_seed` graph matches of its embedding.
pub fn match_seeds(
    graph: &KnowledgeGraph,
    embedder: &dyn Embedder,
    decomp: &QueryDecomposition,
    k_seed: usize,
) -> Vec<Vec<(String, f64)>> {
    decomp
        .sub_queries
        .iter()
        .map(|sq| {
            if graph.is_empty() || k_seed == 0 {
                return Vec::new();
            }
            embedder.embed(&sq.text).ok().and_then(|e| graph.match_entities(&e.vector, k_seed).ok()).unwrap_or_default()
        })
        .collect()
}

/// Union of the traversals seeded by each sub-query.
pub fn traverse_union(graph: &KnowledgeGraph, seeds: &[Vec<(String, f64)>], params: &TraverseParams) -> Subgraph {
    let mut out = Subgraph::default();
    for s in seeds.iter().filter(|s| !s.is_empty()) {
        if let Ok(sub) = graph.traverse(s, params) {
            out.union_with(sub);
        }
    }
    out.sort();
    out
}

pub fn retrieve_graph_context(
    graph: &KnowledgeGraph,
    embedder: &dyn Embedder,
    decomp: &QueryDecomposition,
    config: &RetrievalConfig,
) -> Subgraph {
    let seeds = match_seeds(graph, embedder, decomp, config.k_seed);
    traverse_union(graph, &seeds, &config.traverse_params())
}

/// Rewrites the query with graph context. An empty subgraph, a gateway
/// failure or an empty reply all return the original.
pub fn rewrite_query(gateway: &Gateway, original: &str, sub: &Subgraph, trace: &mut Trace) -> String {
    let started = Instant::now();
    if sub.is_empty() {
        trace.record(Step::Rewrite, None, original, original, started, json!({"skipped": "empty subgraph"}));
        return original.to_string();
    }
    let facts: Vec<String> = graph_facts(sub).into_iter().map(|f| format!("- {}", f.text)).collect();
    let facts = facts.join("\n");
    let rendered = prompt::REWRITE.render(&[("query", original), ("graph_facts", or_none(&facts))]);
    let req = GatewayRequest::text(prompt::REWRITE.id, rendered, EXTRACTION_TEMPERATURE).with_echo(original);
    let (out, degraded) = match gateway.complete(&req) {
        Ok(text) if !text.trim().is_empty() => (text.trim().to_string(), false),
        Ok(_) => (original.to_string(), true),
        Err(e) => {
            tracing::warn!("rewrite degraded: {e}");
            (original.to_string(), true)
        }
    };
    trace.record(
        Step::Rewrite,
        Some(prompt::REWRITE.id),
        &req.rendered_prompt,
        &out,
        started,
        json!({"rewritten": out, "degraded": degraded, "prompt": req.rendered_prompt}),
    );
    out
}

/// Stores read by [`build_bundle`].
pub struct Stores<'a> {
    pub graph: &'a KnowledgeGraph,
    pub index: &'a VectorIndex,
    pub chunks: &'a dyn ChunkSource,
}

pub fn build_bundle(
    gateway: &Gateway,
    embedder: &dyn Embedder,
    stores: &Stores<'_>,
    query: &str,
    history: &[Turn],
    config: &RetrievalConfig,
    trace: &mut Trace,
) -> Result<RetrievalBundle, RetrievalError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(RetrievalError::AlphaOutOfRange(config.alpha));
    }
    if stores.graph.is_empty() && stores.index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let history_snippet = history[history.len().saturating_sub(config.history_turns)..].to_vec();
    let decomposition = decompose(gateway, query, &history_snippet, trace);

    let started = Instant::now();
    let seeds = match_seeds(stores.graph, embedder, &decomposition, config.k_seed);
    let seeds_json = serde_json::to_string(&seeds).expect("serializes");
    trace.record(
        Step::KgMatch,
        None,
        &serde_json::to_string(&decomposition.sub_queries).expect("serializes"),
        &seeds_json,
        started,
        json!({"k_seed": config.k_seed, "seeds": seeds}),
    );

    let started = Instant::now();
    let subgraph = traverse_union(stores.graph, &seeds, &config.traverse_params());
    let node_ids: Vec<&str> = subgraph.nodes.iter().map(|n| n.node_id.as_str()).collect();
    let edge_ids: Vec<&str> = subgraph.edges.iter().map(|e| e.edge_id.as_str()).collect();
    trace.record(
        Step::Traverse,
        None,
        &seeds_json,
        &serde_json::to_string(&(&node_ids, &edge_ids)).expect("serializes"),
        started,
        json!({
            "max_hops": config.max_hops,
            "min_edge_weight": config.min_edge_weight,
            "max_nodes": config.max_nodes,
            "nodes": node_ids,
            "edges": edge_ids,
            "hop_of": subgraph.hop_of,
        }),
    );

    let rewritten_query = rewrite_query(gateway, query, &subgraph, trace);

    let started = Instant::now();
    let chunk_hits: Vec<ChunkHit> = if stores.index.is_empty() || config.k_chunks == 0 {
        Vec::new()
    } else {
        embedder
            .embed(&rewritten_query)
            .ok()
            .and_then(|q| stores.index.search(&q, config.k_chunks).ok())
            .unwrap_or_default()
            .into_iter()
            .map(|(chunk_id, similarity)| ChunkHit { chunk_id, similarity })
            .collect()
    };
    trace.record(
        Step::VectorSearch,
        None,
        &rewritten_query,
        &serde_json::to_string(&chunk_hits).expect("serializes"),
        started,
        json!({"k_chunks": config.k_chunks, "hits": chunk_hits}),
    );

    let started = Instant::now();
    let relevance = graph_relevance(&subgraph, config.gamma);
    let sims: Vec<f64> = chunk_hits.iter().map(|h| h.similarity).collect();
    let fusion = fuse(config.alpha, &sims, relevance)?;
    trace.record(
        Step::Fuse,
        None,
        &serde_json::to_string(&(config.alpha, &sims, relevance)).expect("serializes"),
        &serde_json::to_string(&fusion).expect("serializes"),
        started,
        serde_json::to_value(fusion).expect("serializes"),
    );

    let mut seen = BTreeSet::new();
    let mut chunks = Vec::new();
    let provenance = graph_facts(&subgraph).into_iter().map(|f| f.chunk_id);
    for id in chunk_hits.iter().map(|h| h.chunk_id.clone()).chain(provenance) {
        if seen.insert(id.clone()) {
            if let Some(c) = stores.chunks.get_chunk(&id) {
                chunks.push(ChunkRef::from(c));
            }
        }
    }

    Ok(RetrievalBundle {
        query: query.to_string(),
        decomposition,
        subgraph,
        rewritten_query,
        chunk_hits,
        fusion,
        history_snippet,
        chunks,
    })
}

#[cfg(test)]
mod tests;
