use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{EntityNode, EntityType, KgError, RelationEdge, Subgraph, TraverseParams, SELF_LOOP_ATTRIBUTE};
use crate::embed_index::cosine_slices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub synopsis_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub(super) enum Record {
    Node(EntityNode),
    Edge(RelationEdge),
}

/// In-memory graph with adjacency and name indexes.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<String, EntityNode>,
    edges: BTreeMap<String, RelationEdge>,
    adjacency: HashMap<String, BTreeSet<String>>,
    names: HashMap<String, BTreeSet<String>>,
    dim: Option<usize>,
}

pub(crate) fn name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.nodes.len(),
            edges: self.edges.len(),
            synopsis_count: self.nodes.values().filter(|n| n.entity_type == EntityType::Synopsis).count(),
        }
    }

    pub fn node(&self, id: &str) -> Option<&EntityNode> {
        self.nodes.get(id)
    }

    pub fn edge(&self, id: &str) -> Option<&RelationEdge> {
        self.edges.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &EntityNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &RelationEdge> {
        self.edges.values()
    }

    /// Edges touching `node_id`, in edge-id order.
    pub fn incident(&self, node_id: &str) -> impl Iterator<Item = &RelationEdge> {
        self.adjacency.get(node_id).into_iter().flat_map(|ids| ids.iter()).filter_map(|id| self.edges.get(id))
    }

    /// Nodes whose name matches case-insensitively, in id order.
    pub fn find_by_name(&self, name: &str) -> Vec<&EntityNode> {
        self.names
            .get(&name_key(name))
            .map(|ids| ids.iter().filter_map(|id| self.nodes.get(id)).collect())
            .unwrap_or_default()
    }

    pub fn upsert_node(&mut self, node: EntityNode) -> Result<String, KgError> {
        let d = self.dim.unwrap_or(node.embedding.len());
        for v in std::iter::once(&node.embedding).chain(&node.merged_embeddings) {
            if v.len() != d {
                return Err(KgError::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        self.dim = Some(d);
        let id = node.node_id.clone();
        if let Some(old) = self.nodes.get(&id) {
            if old == &node {
                return Ok(id);
            }
            let old_key = name_key(&old.name);
            if let Some(set) = self.names.get_mut(&old_key) {
                set.remove(&id);
            }
        }
        self.names.entry(name_key(&node.name)).or_default().insert(id.clone());
        self.nodes.insert(id.clone(), node);
        Ok(id)
    }

    pub fn upsert_edge(&mut self, edge: RelationEdge) -> Result<String, KgError> {
        for end in [&edge.head, &edge.tail] {
            if !self.nodes.contains_key(end) {
                return Err(KgError::DanglingEndpoint(end.clone()));
            }
        }
        if !(0.0..=1.0).contains(&edge.weight) || edge.weight.is_nan() {
            return Err(KgError::InvalidWeight(edge.weight));
        }
        if edge.head == edge.tail && edge.relation_type != SELF_LOOP_ATTRIBUTE {
            return Err(KgError::SelfLoop(edge.edge_id));
        }
        let id = edge.edge_id.clone();
        self.adjacency.entry(edge.head.clone()).or_default().insert(id.clone());
        self.adjacency.entry(edge.tail.clone()).or_default().insert(id.clone());
        self.edges.insert(id.clone(), edge);
        Ok(id)
    }

    /// Top-`k` nodes by cosine similarity to the query; ties by node id.
    pub fn match_entities(&self, query: &[f32], k: usize) -> Result<Vec<(String, f64)>, KgError> {
        if k == 0 {
            return Err(KgError::InvalidK);
        }
        if self.nodes.is_empty() {
            return Err(KgError::EmptyGraph);
        }
        if let Some(d) = self.dim {
            if query.len() != d {
                return Err(KgError::DimensionMismatch { expected: d, got: query.len() });
            }
        }
        let mut scored: Vec<(String, f64)> = self
            .nodes
            .values()
            .filter_map(|n| cosine_slices(query, &n.embedding).ok().map(|s| (n.node_id.clone(), s)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn traverse(&self, seeds: &[(String, f64)], params: &TraverseParams) -> Result<Subgraph, KgError> {
        super::traverse::traverse(self, seeds, params)
    }

    pub(super) fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.nodes.values().cloned().map(Record::Node).chain(self.edges.values().cloned().map(Record::Edge))
    }

    pub(super) fn apply(&mut self, record: Record) -> Result<(), KgError> {
        match record {
            Record::Node(n) => self.upsert_node(n).map(|_| ()),
            Record::Edge(e) => self.upsert_edge(e).map(|_| ()),
        }
    }

    /// Line-delimited JSON, nodes (by id) then edges (by id), each tagged
    /// with `"kind": "node" | "edge"`.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn import_jsonl(text: &str) -> Result<Self, KgError> {
        let mut g = KnowledgeGraph::new();
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(line).map_err(|e| KgError::Persistence(format!("line {}: {e}", i + 1)))?;
            match rec {
                Record::Node(n) => {
                    g.upsert_node(n)?;
                }
                Record::Edge(e) => edges.push(e),
            }
        }
        for e in edges {
            g.upsert_edge(e)?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn node(id: &str, v: Vec<f32>) -> EntityNode {
        EntityNode {
            node_id: id.into(),
            name: id.to_uppercase(),
            entity_type: EntityType::Component,
            description: format!("{id} description"),
            embedding: v,
            attributes: BTreeMap::new(),
            provenance: vec!["c-1".into()],
            merged_embeddings: vec![],
        }
    }

    fn edge(id: &str, h: &str, t: &str, w: f64) -> RelationEdge {
        RelationEdge {
            edge_id: id.into(),
            head: h.into(),
            tail: t.into(),
            relation_type: "calls".into(),
            description: String::new(),
            weight: w,
            provenance: vec!["c-1".into()],
        }
    }

    #[test]
    fn upsert_is_idempotent() {
        let mut g = KnowledgeGraph::new();
        let a = g.upsert_node(node("a", vec![1.0, 0.0])).unwrap();
        let b = g.upsert_node(node("a", vec![1.0, 0.0])).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn dangling_and_invalid_edges() {
        let mut g = KnowledgeGraph::new();
        g.upsert_node(node("a", vec![1.0, 0.0])).unwrap();
        assert_eq!(g.upsert_edge(edge("e", "zz", "a", 0.5)), Err(KgError::DanglingEndpoint("zz".into())));
        assert_eq!(g.upsert_edge(edge("e", "a", "a", 0.5)), Err(KgError::SelfLoop("e".into())));
        let mut selfloop = edge("e", "a", "a", 0.5);
        selfloop.relation_type = SELF_LOOP_ATTRIBUTE.into();
        assert!(g.upsert_edge(selfloop).is_ok());
        g.upsert_node(node("b", vec![0.0, 1.0])).unwrap();
        assert_eq!(g.upsert_edge(edge("f", "a", "b", 1.5)), Err(KgError::InvalidWeight(1.5)));
        assert!(matches!(g.upsert_node(node("c", vec![1.0])), Err(KgError::DimensionMismatch { .. })));
    }

    #[test]
    fn provenance_round_trip() {
        let mut g = KnowledgeGraph::new();
        let mut n = node("a", vec![0.25, -0.5]);
        n.provenance = vec!["c-1".into(), "c-2".into(), "c-3".into()];
        n.attributes.insert("default".into(), "30s".into());
        g.upsert_node(n.clone()).unwrap();
        let back = KnowledgeGraph::import_jsonl(&g.export_jsonl()).unwrap();
        assert_eq!(back.node("a"), Some(&n));
        assert_eq!(back.export_jsonl(), g.export_jsonl());
    }

    #[test]
    fn match_entities_identity_saturation_and_brute_force() {
        let mut g = KnowledgeGraph::new();
        assert_eq!(g.match_entities(&[1.0, 0.0], 1), Err(KgError::EmptyGraph));
        let vecs = [
            ("n1", vec![1.0, 0.0, 0.0]),
            ("n2", vec![0.8, 0.6, 0.0]),
            ("n3", vec![0.0, 1.0, 0.0]),
            ("n4", vec![0.0, 0.0, 1.0]),
            ("n5", vec![0.6, 0.0, 0.8]),
        ];
        for (id, v) in &vecs {
            g.upsert_node(node(id, v.clone())).unwrap();
        }
        let top = g.match_entities(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(top[0].0, "n3");
        assert!((top[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(g.match_entities(&[1.0, 0.0, 0.0], 50).unwrap().len(), 5);

        let q = [0.5f32, 0.5, 0.7];
        let mut oracle: Vec<(String, f64)> = vecs
            .iter()
            .map(|(id, v)| {
                let dot: f64 = v.iter().zip(&q).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                let na: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let nb: f64 = q.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                (id.to_string(), dot / (na * nb))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let got = g.match_entities(&q, 5).unwrap();
        assert_eq!(got.iter().map(|x| &x.0).collect::<Vec<_>>(), oracle.iter().map(|x| &x.0).collect::<Vec<_>>());
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn name_lookup() {
        let mut g = KnowledgeGraph::new();
        g.upsert_node(node("a", vec![1.0])).unwrap();
        assert_eq!(g.find_by_name(" a ").len(), 1);
        assert!(g.find_by_name("b").is_empty());
    }
}
