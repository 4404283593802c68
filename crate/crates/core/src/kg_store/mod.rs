//! The weighted knowledge graph: typed entity nodes, confidence-weighted
//! relation edges, entity matching and bounded multi-hop traversal.

mod graph;
mod relevance;
mod store;
mod traverse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{GraphStats, KnowledgeGraph};
pub use relevance::{graph_relevance, path_scores, DEFAULT_GAMMA};
pub use store::{GraphWriter, KgStore};
pub use traverse::TraverseParams;

/// Relation type exempt from the `head != tail` rule.
pub const SELF_LOOP_ATTRIBUTE: &str = "self_loop_attribute";
/// Relation type linking a synopsis node to each member.
pub const SUMMARIZES: &str = "summarizes";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgError {
    #[error("edge endpoint `{0}` does not exist")]
    DanglingEndpoint(String),
    #[error("unknown seed node `{0}`")]
    UnknownSeed(String),
    #[error("knowledge graph is empty")]
    EmptyGraph,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("edge weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("edge `{0}` is a self loop")]
    SelfLoop(String),
    #[error("graph persistence: {0}")]
    Persistence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Structure,
    Component,
    Api,
    Parameter,
    Behavior,
    Error,
    Synopsis,
    Other,
}

impl EntityType {
    pub const ALL: [EntityType; 8] = [
        EntityType::Structure,
        EntityType::Component,
        EntityType::Api,
        EntityType::Parameter,
        EntityType::Behavior,
        EntityType::Error,
        EntityType::Synopsis,
        EntityType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Structure => "structure",
            EntityType::Component => "component",
            EntityType::Api => "api",
            EntityType::Parameter => "parameter",
            EntityType::Behavior => "behavior",
            EntityType::Error => "error",
            EntityType::Synopsis => "synopsis",
            EntityType::Other => "other",
        }
    }

    /// Lenient parse used on model output; unknown labels map to `Other`.
    pub fn parse_lenient(s: &str) -> EntityType {
        let s = s.trim().to_ascii_lowercase();
        EntityType::ALL.into_iter().find(|t| t.as_str() == s).unwrap_or(EntityType::Other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub node_id: String,
    pub name: String,
    pub entity_type: EntityType,
    pub description: String,
    pub embedding: Vec<f32>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub provenance: Vec<String>,
    /// Embeddings of drafts merged into this node besides the one that
    /// created it; deduplication compares new drafts against all of them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub edge_id: String,
    pub head: String,
    pub tail: String,
    pub relation_type: String,
    pub description: String,
    pub weight: f64,
    pub provenance: Vec<String>,
}

impl RelationEdge {
    pub fn other_end(&self, node_id: &str) -> &str {
        if self.head == node_id {
            &self.tail
        } else {
            &self.head
        }
    }
}

/// A traversal result: nodes, the edges examined between them, the
/// similarity of each seed, and the hop at which each node was reached.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: Vec<EntityNode>,
    pub edges: Vec<RelationEdge>,
    pub seed_similarities: BTreeMap<String, f64>,
    pub hop_of: BTreeMap<String, usize>,
}

impl Subgraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, node_id: &str) -> Option<&EntityNode> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    /// Merges another subgraph into this one: nodes and edges are unioned by
    /// id, hops take the minimum and seed similarities the maximum.
    pub fn union_with(&mut self, other: Subgraph) {
        for node in other.nodes {
            if self.node(&node.node_id).is_none() {
                self.nodes.push(node);
            }
        }
        for edge in other.edges {
            if !self.edges.iter().any(|e| e.edge_id == edge.edge_id) {
                self.edges.push(edge);
            }
        }
        for (id, hop) in other.hop_of {
            self.hop_of.entry(id).and_modify(|h| *h = (*h).min(hop)).or_insert(hop);
        }
        for (id, sim) in other.seed_similarities {
            self.seed_similarities.entry(id).and_modify(|s| *s = s.max(sim)).or_insert(sim);
        }
        self.sort();
    }

    /// Canonical order: by hop, then node id; edges by id.
    pub fn sort(&mut self) {
        let hop_of = &self.hop_of;
        self.nodes.sort_by(|a, b| {
            let ha = hop_of.get(&a.node_id).copied().unwrap_or(usize::MAX);
            let hb = hop_of.get(&b.node_id).copied().unwrap_or(usize::MAX);
            ha.cmp(&hb).then_with(|| a.node_id.cmp(&b.node_id))
        });
        self.edges.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
    }
}
