use std::collections::{BTreeMap, BTreeSet};

use super::merge::edge_id;
use super::{BuildError, GraphMut};
use crate::digest::short_hash;
use crate::embed_index::cosine_slices;
use crate::kg_store::{EntityNode, EntityType, RelationEdge, SUMMARIZES};

/// Groups same-typed nodes whose pairwise cosine similarity is at least
/// `threshold` and adds one synopsis node per group of `min_size` or more,
/// linked to each member by a `summarizes` edge of weight 1.
///
/// Groups are grown greedily in node id order: a node joins the first open
/// group all of whose members it is similar to. Synopsis nodes never join
/// groups, and nothing is removed from the graph. Returns the synopsis nodes
/// of this pass, in id order.
pub fn synthesize_synopsis(
    graph: &mut impl GraphMut,
    threshold: f64,
    min_size: usize,
) -> Result<Vec<EntityNode>, BuildError> {
    let mut by_type: BTreeMap<EntityType, Vec<&EntityNode>> = BTreeMap::new();
    for n in graph.view().nodes().filter(|n| n.entity_type != EntityType::Synopsis) {
        by_type.entry(n.entity_type).or_default().push(n);
    }
    let mut clusters: Vec<Vec<EntityNode>> = Vec::new();
    for nodes in by_type.values() {
        let mut groups: Vec<Vec<&EntityNode>> = Vec::new();
        for &n in nodes {
            let similar = |m: &&EntityNode| cosine_slices(&n.embedding, &m.embedding).is_ok_and(|s| s >= threshold);
            match groups.iter_mut().find(|g| g.iter().all(similar)) {
                Some(g) => g.push(n),
                None => groups.push(vec![n]),
            }
        }
        clusters.extend(
            groups.into_iter().filter(|g| g.len() >= min_size.max(1)).map(|g| g.into_iter().cloned().collect()),
        );
    }

    let mut out = Vec::new();
    for members in clusters {
        let node = synopsis_node(&members);
        graph.put_node(node.clone())?;
        for m in &members {
            graph.put_edge(RelationEdge {
                edge_id: edge_id(&node.node_id, &m.node_id, SUMMARIZES),
                head: node.node_id.clone(),
                tail: m.node_id.clone(),
                relation_type: SUMMARIZES.to_string(),
                description: format!("{} groups {}", node.name, m.name),
                weight: 1.0,
                provenance: m.provenance.clone(),
            })?;
        }
        out.push(node);
    }
    out.sort_by(|a, b| a.node_id.cmp(&b.node_id));
    Ok(out)
}

fn synopsis_node(members: &[EntityNode]) -> EntityNode {
    let ids: Vec<&[u8]> = members.iter().map(|m| m.node_id.as_bytes()).collect();
    let member_type = members[0].entity_type;
    let names: Vec<&str> = members.iter().map(|m| m.name.as_str()).collect();
    let d = members[0].embedding.len();
    let mut mean = vec![0f64; d];
    for m in members {
        for (acc, x) in mean.iter_mut().zip(&m.embedding) {
            *acc += *x as f64;
        }
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    let embedding =
        if norm > 0.0 { mean.iter().map(|x| (x / norm) as f32).collect() } else { members[0].embedding.clone() };
    let provenance: BTreeSet<&String> = members.iter().flat_map(|m| &m.provenance).collect();
    let attributes = [
        ("member_count".to_string(), members.len().to_string()),
        ("member_type".to_string(), member_type.as_str().to_string()),
    ]
    .into_iter()
    .collect();
    EntityNode {
        node_id: format!("synopsis:{}", short_hash(&ids, 12)),
        name: format!("{} group: {}", member_type.as_str(), names.join(", ")),
        entity_type: EntityType::Synopsis,
        description: format!(
            "Groups {} related {} entities: {}.",
            members.len(),
            member_type.as_str(),
            names.join(", ")
        ),
        embedding,
        attributes,
        provenance: provenance.into_iter().cloned().collect(),
        merged_embeddings: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_store::KnowledgeGraph;

    fn node(id: &str, t: EntityType, v: Vec<f32>) -> EntityNode {
        EntityNode {
            node_id: id.into(),
            name: id.to_uppercase(),
            entity_type: t,
            description: String::new(),
            embedding: v,
            attributes: BTreeMap::new(),
            provenance: vec![format!("c-{id}")],
            merged_embeddings: vec![],
        }
    }

    fn near(angle: f32) -> Vec<f32> {
        vec![angle.cos(), angle.sin(), 0.0]
    }

    #[test]
    fn below_min_size_is_empty() {
        let mut g = KnowledgeGraph::new();
        g.upsert_node(node("a", EntityType::Parameter, near(0.0))).unwrap();
        g.upsert_node(node("b", EntityType::Parameter, near(0.01))).unwrap();
        assert!(synthesize_synopsis(&mut g, 0.9, 3).unwrap().is_empty());
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn one_cluster_of_three() {
        let mut g = KnowledgeGraph::new();
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            g.upsert_node(node(id, EntityType::Parameter, near(i as f32 * 0.1))).unwrap();
        }
        g.upsert_node(node("z", EntityType::Parameter, vec![0.0, 0.0, 1.0])).unwrap();
        let syn = synthesize_synopsis(&mut g, 0.9, 3).unwrap();
        assert_eq!(syn.len(), 1);
        assert_eq!(syn[0].attributes["member_count"], "3");
        assert_eq!(syn[0].provenance, vec!["c-a", "c-b", "c-c"]);
        let summarizes: Vec<_> = g.edges().filter(|e| e.relation_type == SUMMARIZES).collect();
        assert_eq!(summarizes.len(), 3);
        assert!(summarizes.iter().all(|e| e.weight == 1.0 && e.head == syn[0].node_id));
        assert_eq!(g.node_count(), 5);
        // A second pass re-derives the same synopsis and adds nothing.
        let again = synthesize_synopsis(&mut g, 0.9, 3).unwrap();
        assert_eq!(again, syn);
        assert_eq!((g.node_count(), g.edge_count()), (5, 3));
    }

    #[test]
    fn two_disjoint_clusters_and_type_gate() {
        let mut g = KnowledgeGraph::new();
        for (i, id) in ["a1", "a2", "a3"].iter().enumerate() {
            g.upsert_node(node(id, EntityType::Api, near(i as f32 * 0.05))).unwrap();
        }
        for (i, id) in ["b1", "b2", "b3"].iter().enumerate() {
            g.upsert_node(node(id, EntityType::Api, vec![0.0, (i as f32 * 0.05).sin(), (i as f32 * 0.05).cos()]))
                .unwrap();
        }
        g.upsert_node(node("m", EntityType::Component, near(0.0))).unwrap();
        assert_eq!(synthesize_synopsis(&mut g, 0.9, 3).unwrap().len(), 2);
    }
}
