use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BuildError, ExtractionResult, GraphMut};
use crate::digest::short_hash;
use crate::embed_index::{cosine_slices, Embedder};
use crate::kg_store::{EntityNode, EntityType, RelationEdge, SELF_LOOP_ATTRIBUTE};

/// Cosine thresholds for merging a draft into an existing node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Thresholds {
    pub default: f64,
    pub per_type: BTreeMap<EntityType, f64>,
}

impl Thresholds {
    pub fn for_type(&self, t: EntityType) -> f64 {
        self.per_type.get(&t).copied().unwrap_or(self.default)
    }
}

impl From<f64> for Thresholds {
    fn from(default: f64) -> Self {
        Self { default, per_type: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeReport {
    pub new_nodes: usize,
    pub merged_nodes: usize,
    pub new_edges: usize,
    pub updated_edges: usize,
    pub covariates: usize,
    /// Relations dropped because an endpoint could not be resolved or the
    /// relation was a self loop.
    pub skipped_relations: usize,
    pub skipped_covariates: usize,
}

impl MergeReport {
    pub fn add(&mut self, o: &MergeReport) {
        self.new_nodes += o.new_nodes;
        self.merged_nodes += o.merged_nodes;
        self.new_edges += o.new_edges;
        self.updated_edges += o.updated_edges;
        self.covariates += o.covariates;
        self.skipped_relations += o.skipped_relations;
        self.skipped_covariates += o.skipped_covariates;
    }
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let s = out.trim_matches('_');
    if s.is_empty() {
        "entity".into()
    } else {
        s.chars().take(48).collect()
    }
}

fn node_id_for(graph: &crate::kg_store::KnowledgeGraph, t: EntityType, name: &str) -> String {
    let base = format!("{}:{}", t.as_str(), slug(name));
    if graph.node(&base).is_none() {
        return base;
    }
    (2..).map(|i| format!("{base}#{i}")).find(|id| graph.node(id).is_none()).expect("unbounded range")
}

pub(crate) fn edge_id(head: &str, tail: &str, relation_type: &str) -> String {
    format!("e-{}", short_hash(&[head.as_bytes(), tail.as_bytes(), relation_type.as_bytes()], 16))
}

fn normalize_relation(r: &str) -> String {
    r.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join("_")
}

fn similarity(v: &[f32], node: &EntityNode) -> f64 {
    std::iter::once(&node.embedding)
        .chain(&node.merged_embeddings)
        .map(|e| if e.as_slice() == v { 1.0 } else { cosine_slices(v, e).unwrap_or(0.0) })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn append_unique(list: &mut Vec<String>, item: &str) -> bool {
    if list.iter().any(|x| x == item) {
        false
    } else {
        list.push(item.to_string());
        true
    }
}

fn append_description(current: &mut String, extra: &str) -> bool {
    if extra.is_empty() || current.contains(extra) {
        return false;
    }
    if current.is_empty() {
        *current = extra.to_string();
    } else {
        current.push(' ');
        current.push_str(extra);
    }
    true
}

/// Merges an extraction result into the graph.
///
/// A draft entity is embedded from its name and description and compared
/// with every node of the same type, using both the node's own embedding and
/// those of drafts previously merged into it. The best match at or above the
/// type's threshold absorbs the draft: provenance and description are
/// appended and the draft's embedding is remembered. Otherwise a new node is
/// created. Relation endpoints resolve against drafts of this result first,
/// then by name in the graph. Repeated relations keep the highest confidence.
pub fn merge_result(
    graph: &mut impl GraphMut,
    embedder: &dyn Embedder,
    result: &ExtractionResult,
    thresholds: &Thresholds,
) -> Result<MergeReport, BuildError> {
    let mut report = MergeReport::default();
    let mut local: BTreeMap<String, String> = BTreeMap::new();

    for draft in &result.entities {
        if draft.name.is_empty() {
            continue;
        }
        let text = if draft.description.is_empty() {
            draft.name.clone()
        } else {
            format!("{} {}", draft.name, draft.description)
        };
        let v = embedder.embed(&text)?.vector;
        let threshold = thresholds.for_type(draft.entity_type);
        let best = graph
            .view()
            .nodes()
            .filter(|n| n.entity_type == draft.entity_type)
            .map(|n| (similarity(&v, n), n))
            .filter(|(s, _)| *s >= threshold)
            .fold(None::<(f64, &EntityNode)>, |acc, (s, n)| match acc {
                Some((bs, _)) if bs >= s => acc,
                _ => Some((s, n)),
            })
            .map(|(_, n)| n.clone());
        let id = match best {
            Some(mut node) => {
                let mut changed = append_unique(&mut node.provenance, &draft.source_chunk_id);
                changed |= append_description(&mut node.description, &draft.description);
                if node.embedding != v && !node.merged_embeddings.contains(&v) {
                    node.merged_embeddings.push(v);
                    changed = true;
                }
                let id = node.node_id.clone();
                if changed {
                    graph.put_node(node)?;
                }
                report.merged_nodes += 1;
                id
            }
            None => {
                let id = node_id_for(graph.view(), draft.entity_type, &draft.name);
                graph.put_node(EntityNode {
                    node_id: id.clone(),
                    name: draft.name.clone(),
                    entity_type: draft.entity_type,
                    description: draft.description.clone(),
                    embedding: v,
                    attributes: BTreeMap::new(),
                    provenance: vec![draft.source_chunk_id.clone()],
                    merged_embeddings: Vec::new(),
                })?;
                report.new_nodes += 1;
                id
            }
        };
        local.entry(draft.name.to_lowercase()).or_insert(id);
    }

    let resolve = |graph: &dyn Fn(&str) -> Option<String>, name: &str| -> Option<String> {
        local.get(&name.to_lowercase()).cloned().or_else(|| graph(name))
    };

    for rel in &result.relations {
        let lookup = |name: &str| graph.view().find_by_name(name).first().map(|n| n.node_id.clone());
        let (Some(head), Some(tail)) = (resolve(&lookup, &rel.head_name), resolve(&lookup, &rel.tail_name)) else {
            report.skipped_relations += 1;
            continue;
        };
        let relation_type = normalize_relation(&rel.relation_type);
        if relation_type.is_empty() || (head == tail && relation_type != SELF_LOOP_ATTRIBUTE) {
            report.skipped_relations += 1;
            continue;
        }
        let id = edge_id(&head, &tail, &relation_type);
        let weight = rel.confidence.clamp(0.0, 1.0);
        match graph.view().edge(&id).cloned() {
            Some(mut edge) => {
                let mut changed = false;
                if weight > edge.weight {
                    edge.weight = weight;
                    changed = true;
                }
                changed |= append_unique(&mut edge.provenance, &rel.source_chunk_id);
                changed |= append_description(&mut edge.description, &rel.description);
                if changed {
                    graph.put_edge(edge)?;
                    report.updated_edges += 1;
                }
            }
            None => {
                graph.put_edge(RelationEdge {
                    edge_id: id,
                    head,
                    tail,
                    relation_type,
                    description: rel.description.clone(),
                    weight,
                    provenance: vec![rel.source_chunk_id.clone()],
                })?;
                report.new_edges += 1;
            }
        }
    }

    for cov in &result.covariates {
        let lookup = |name: &str| graph.view().find_by_name(name).first().map(|n| n.node_id.clone());
        let key = cov.attribute_key.trim().to_lowercase();
        let target = resolve(&lookup, &cov.target_name);
        let Some(mut node) = target.and_then(|id| graph.view().node(&id).cloned()).filter(|_| !key.is_empty()) else {
            report.skipped_covariates += 1;
            continue;
        };
        let mut changed = node.attributes.get(&key) != Some(&cov.attribute_value);
        node.attributes.insert(key, cov.attribute_value.clone());
        changed |= append_unique(&mut node.provenance, &cov.source_chunk_id);
        if changed {
            graph.put_node(node)?;
        }
        report.covariates += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_index::{EmbedError, Embedding};
    use crate::kg_builder::{CovariateDraft, EntityDraft, RelationDraft};
    use crate::kg_store::KnowledgeGraph;

    /// Embeds "x y" texts as fixed 2-d vectors looked up by name.
    struct Table(Vec<(&'static str, Vec<f32>)>);

    impl Embedder for Table {
        fn dim(&self) -> usize {
            2
        }
        fn model_tag(&self) -> &str {
            "table"
        }
        fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
            let name = text.split(' ').next().unwrap_or_default();
            self.0
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| Embedding::new(v.clone(), "table"))
                .ok_or(EmbedError::EmptyText)
        }
    }

    fn ent(name: &str, t: EntityType, chunk: &str) -> EntityDraft {
        EntityDraft {
            name: name.into(),
            entity_type: t,
            description: format!("about {name}"),
            source_chunk_id: chunk.into(),
        }
    }

    fn rel(h: &str, t: &str, c: f64) -> RelationDraft {
        RelationDraft {
            head_name: h.into(),
            tail_name: t.into(),
            relation_type: "calls".into(),
            description: String::new(),
            confidence: c,
            source_chunk_id: "c-1".into(),
        }
    }

    fn embedder() -> Table {
        let a = 0.95f32.acos();
        Table(vec![
            ("A", vec![1.0, 0.0]),
            ("A2", vec![a.cos(), a.sin()]),
            ("B", vec![0.0, 1.0]),
            ("C", vec![-1.0, 0.0]),
        ])
    }

    #[test]
    fn identical_merges_orthogonal_creates() {
        let e = embedder();
        let mut g = KnowledgeGraph::new();
        let r1 = ExtractionResult { entities: vec![ent("A", EntityType::Component, "c-1")], ..Default::default() };
        let rep = merge_result(&mut g, &e, &r1, &0.9.into()).unwrap();
        assert_eq!((rep.new_nodes, rep.merged_nodes), (1, 0));
        let r2 = ExtractionResult { entities: vec![ent("A", EntityType::Component, "c-2")], ..Default::default() };
        let rep = merge_result(&mut g, &e, &r2, &0.9.into()).unwrap();
        assert_eq!((rep.new_nodes, rep.merged_nodes), (0, 1));
        assert_eq!(g.node("component:a").unwrap().provenance, vec!["c-1", "c-2"]);
        let r3 = ExtractionResult { entities: vec![ent("B", EntityType::Component, "c-3")], ..Default::default() };
        assert_eq!(merge_result(&mut g, &e, &r3, &0.9.into()).unwrap().new_nodes, 1);
    }

    #[test]
    fn threshold_and_type_gate() {
        let e = embedder();
        let mut g = KnowledgeGraph::new();
        let r = ExtractionResult {
            entities: vec![ent("A", EntityType::Parameter, "c-1"), ent("A2", EntityType::Parameter, "c-2")],
            ..Default::default()
        };
        let rep = merge_result(&mut g, &e, &r, &0.90.into()).unwrap();
        assert_eq!((rep.new_nodes, rep.merged_nodes), (1, 1));
        let mut g2 = KnowledgeGraph::new();
        let rep = merge_result(&mut g2, &e, &r, &0.96.into()).unwrap();
        assert_eq!(rep.new_nodes, 2);
        let mut g3 = KnowledgeGraph::new();
        let mixed = ExtractionResult {
            entities: vec![ent("A", EntityType::Parameter, "c-1"), ent("A", EntityType::Component, "c-1")],
            ..Default::default()
        };
        assert_eq!(merge_result(&mut g3, &e, &mixed, &0.5.into()).unwrap().new_nodes, 2);
        let per_type = Thresholds { default: 0.5, per_type: [(EntityType::Parameter, 0.99)].into_iter().collect() };
        let mut g4 = KnowledgeGraph::new();
        assert_eq!(merge_result(&mut g4, &e, &r, &per_type).unwrap().new_nodes, 2);
    }

    #[test]
    fn relations_resolve_dedup_and_skip() {
        let e = embedder();
        let mut g = KnowledgeGraph::new();
        let r = ExtractionResult {
            entities: vec![ent("A", EntityType::Component, "c-1"), ent("B", EntityType::Api, "c-1")],
            relations: vec![rel("A", "B", 0.4), rel("a", "B", 0.7), rel("A", "A", 1.0), rel("A", "Z", 1.0)],
            covariates: vec![CovariateDraft {
                target_name: "B".into(),
                attribute_key: "Version".into(),
                attribute_value: "2".into(),
                source_chunk_id: "c-4".into(),
            }],
        };
        let rep = merge_result(&mut g, &e, &r, &0.9.into()).unwrap();
        assert_eq!(rep.new_edges, 1);
        assert_eq!(rep.updated_edges, 1);
        assert_eq!(rep.skipped_relations, 2);
        assert_eq!(rep.covariates, 1);
        let edge = g.edges().next().unwrap();
        assert_eq!(edge.weight, 0.7);
        assert_eq!(g.node("api:b").unwrap().attributes["version"], "2");
        assert_eq!(g.node("api:b").unwrap().provenance, vec!["c-1", "c-4"]);
        let again = merge_result(&mut g, &e, &r, &0.9.into()).unwrap();
        assert_eq!((again.new_nodes, again.new_edges, again.updated_edges), (0, 0, 0));
    }

    #[test]
    fn relation_to_existing_graph_node_by_name() {
        let e = embedder();
        let mut g = KnowledgeGraph::new();
        let r1 = ExtractionResult { entities: vec![ent("C", EntityType::Error, "c-1")], ..Default::default() };
        merge_result(&mut g, &e, &r1, &0.9.into()).unwrap();
        let r2 = ExtractionResult {
            entities: vec![ent("A", EntityType::Component, "c-2")],
            relations: vec![rel("A", "c", 0.9)],
            ..Default::default()
        };
        assert_eq!(merge_result(&mut g, &e, &r2, &0.9.into()).unwrap().new_edges, 1);
    }

    #[test]
    fn id_collisions_get_suffix() {
        let e = embedder();
        let mut g = KnowledgeGraph::new();
        let r = ExtractionResult { entities: vec![ent("A", EntityType::Component, "c-1")], ..Default::default() };
        merge_result(&mut g, &e, &r, &0.9.into()).unwrap();
        assert_eq!(node_id_for(&g, EntityType::Component, "A!"), "component:a#2");
        assert_eq!(node_id_for(&g, EntityType::Api, "A"), "api:a");
        assert_eq!(slug("  GSTART timeout (s) "), "gstart_timeout_s");
    }
}
