use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{KgError, KnowledgeGraph, RelationEdge, Subgraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraverseParams {
    pub max_hops: usize,
    pub min_edge_weight: f64,
    pub max_nodes: usize,
}

impl Default for TraverseParams {
    fn default() -> Self {
        Self { max_hops: 2, min_edge_weight: 0.2, max_nodes: 64 }
    }
}

/// Breadth-first expansion from the seeds over edges (either direction)
/// whose weight is at least `min_edge_weight`.
///
/// Each level is admitted in order of path score, ties by node id, until
/// `max_nodes` is reached. A node's path score is the best
/// `max(0, seed_sim) * mean(edge weights)` over shortest paths from any seed;
/// seeds themselves are ranked by similarity. Edges in the result are those
/// examined during expansion: both endpoints kept, hop difference at most one,
/// and the nearer endpoint closer than `max_hops`.
pub(super) fn traverse(
    graph: &KnowledgeGraph,
    seeds: &[(String, f64)],
    params: &TraverseParams,
) -> Result<Subgraph, KgError> {
    let mut seed_sims: BTreeMap<String, f64> = BTreeMap::new();
    for (id, sim) in seeds {
        if graph.node(id).is_none() {
            return Err(KgError::UnknownSeed(id.clone()));
        }
        seed_sims.entry(id.clone()).and_modify(|s| *s = s.max(*sim)).or_insert(*sim);
    }
    let mut ordered: Vec<(String, f64)> = seed_sims.into_iter().collect();
    ordered.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ordered.truncate(params.max_nodes);

    let mut hop_of: BTreeMap<String, usize> = BTreeMap::new();
    // best path-weight sum per (node, root seed)
    let mut sums: HashMap<String, BTreeMap<String, f64>> = HashMap::new();
    let mut root_sim: HashMap<String, f64> = HashMap::new();
    let mut frontier: Vec<String> = Vec::new();
    for (id, sim) in &ordered {
        hop_of.insert(id.clone(), 0);
        sums.insert(id.clone(), BTreeMap::from([(id.clone(), 0.0)]));
        root_sim.insert(id.clone(), sim.max(0.0));
        frontier.push(id.clone());
    }

    for hop in 1..=params.max_hops {
        if hop_of.len() >= params.max_nodes || frontier.is_empty() {
            break;
        }
        let mut candidates: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for parent in &frontier {
            let parent_sums = &sums[parent];
            for edge in graph.incident(parent) {
                if edge.weight < params.min_edge_weight || edge.head == edge.tail {
                    continue;
                }
                let next = edge.other_end(parent);
                if hop_of.contains_key(next) {
                    continue;
                }
                let entry = candidates.entry(next.to_string()).or_default();
                for (root, s) in parent_sums {
                    let cand = s + edge.weight;
                    entry.entry(root.clone()).and_modify(|v| *v = v.max(cand)).or_insert(cand);
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let mut scored: Vec<(String, f64)> = candidates
            .iter()
            .map(|(id, by_root)| {
                let score = by_root
                    .iter()
                    .map(|(root, sum)| root_sim[root] * sum / hop as f64)
                    .fold(f64::NEG_INFINITY, f64::max);
                (id.clone(), score)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(params.max_nodes - hop_of.len());
        frontier.clear();
        for (id, _) in scored {
            hop_of.insert(id.clone(), hop);
            let by_root = candidates.remove(&id).expect("candidate present");
            sums.insert(id.clone(), by_root);
            frontier.push(id);
        }
    }

    let mut edges: Vec<RelationEdge> = Vec::new();
    for (id, &hop) in &hop_of {
        for edge in graph.incident(id) {
            if edge.head != *id || edge.weight < params.min_edge_weight {
                continue;
            }
            let Some(&other) = hop_of.get(&edge.tail) else { continue };
            if edge.head == edge.tail {
                continue;
            }
            if hop.abs_diff(other) <= 1 && hop.min(other) < params.max_hops {
                edges.push(edge.clone());
            }
        }
    }

    let mut sub = Subgraph {
        nodes: hop_of.keys().filter_map(|id| graph.node(id).cloned()).collect(),
        edges,
        seed_similarities: ordered.into_iter().collect(),
        hop_of,
    };
    sub.sort();
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_store::{EntityNode, EntityType};

    fn graph_path(ab: f64, bc: f64) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for id in ["A", "B", "C"] {
            g.upsert_node(EntityNode {
                node_id: id.into(),
                name: id.into(),
                entity_type: EntityType::Component,
                description: String::new(),
                embedding: vec![1.0],
                attributes: Default::default(),
                provenance: vec!["c".into()],
                merged_embeddings: vec![],
            })
            .unwrap();
        }
        for (id, h, t, w) in [("e1", "A", "B", ab), ("e2", "B", "C", bc)] {
            g.upsert_edge(RelationEdge {
                edge_id: id.into(),
                head: h.into(),
                tail: t.into(),
                relation_type: "r".into(),
                description: String::new(),
                weight: w,
                provenance: vec!["c".into()],
            })
            .unwrap();
        }
        g
    }

    fn ids(sub: &Subgraph) -> Vec<&str> {
        sub.nodes.iter().map(|n| n.node_id.as_str()).collect()
    }

    #[test]
    fn zero_hops_is_seeds_only() {
        let g = graph_path(0.9, 0.9);
        let sub = g
            .traverse(&[("A".into(), 1.0), ("B".into(), 0.5)], &TraverseParams { max_hops: 0, ..Default::default() })
            .unwrap();
        assert_eq!(ids(&sub), vec!["A", "B"]);
        assert!(sub.edges.is_empty());
    }

    #[test]
    fn path_two_hops() {
        let g = graph_path(0.9, 0.7);
        let sub = g.traverse(&[("A".into(), 1.0)], &TraverseParams { max_hops: 2, ..Default::default() }).unwrap();
        assert_eq!(ids(&sub), vec!["A", "B", "C"]);
        assert_eq!(sub.hop_of["C"], 2);
        assert_eq!(sub.edges.len(), 2);
    }

    #[test]
    fn weight_filter_blocks_expansion() {
        let g = graph_path(0.3, 0.9);
        let params = TraverseParams { max_hops: 2, min_edge_weight: 0.5, max_nodes: 64 };
        let sub = g.traverse(&[("A".into(), 1.0)], &params).unwrap();
        assert_eq!(ids(&sub), vec!["A"]);
    }

    #[test]
    fn unknown_seed() {
        let g = graph_path(0.9, 0.9);
        assert_eq!(g.traverse(&[("Z".into(), 1.0)], &TraverseParams::default()), Err(KgError::UnknownSeed("Z".into())));
    }

    #[test]
    fn max_nodes_caps_result() {
        let g = graph_path(0.9, 0.9);
        let params = TraverseParams { max_hops: 2, min_edge_weight: 0.0, max_nodes: 2 };
        let sub = g.traverse(&[("A".into(), 1.0)], &params).unwrap();
        assert_eq!(ids(&sub), vec!["A", "B"]);
    }
}
