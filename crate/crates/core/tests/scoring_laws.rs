use std::collections::BTreeMap;

use dorag_core::evalkit::{
    answer_relevancy_from_cosines, composite, contextual_precision, contextual_recall_from_labels,
    faithfulness_from_labels, MetricReport,
};
use dorag_core::kg_store::{
    graph_relevance, EntityNode, EntityType, KnowledgeGraph, RelationEdge, Subgraph, TraverseParams,
};
use dorag_core::retrieval::fuse;
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_stay_in_unit_interval(flags in prop::collection::vec(any::<bool>(), 1..12), cos in prop::collection::vec(-1.0f64..=1.0, 1..5)) {
        let cp = contextual_precision(&flags);
        prop_assert!((0.0..=1.0).contains(&cp));
        prop_assert!((0.0..=1.0).contains(&contextual_recall_from_labels(&flags).unwrap()));
        prop_assert!((0.0..=1.0).contains(&faithfulness_from_labels(&flags).unwrap()));
        prop_assert!((0.0..=1.0).contains(&answer_relevancy_from_cosines(&cos)));
    }

    #[test]
    fn trailing_irrelevant_context_never_raises_precision(flags in prop::collection::vec(any::<bool>(), 0..12), extra in 1usize..5) {
        let before = contextual_precision(&flags);
        let mut longer = flags.clone();
        longer.extend(std::iter::repeat_n(false, extra));
        prop_assert!(contextual_precision(&longer) <= before + 1e-15);
    }

    #[test]
    fn composite_is_symmetric_and_strictly_monotone(a in unit(), b in unit(), c in unit(), d in unit(), bump in 1e-6f64..0.5) {
        let v = composite(a, b, c, d).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        for p in [[b, a, c, d], [d, c, b, a], [c, a, d, b]] {
            prop_assert!((composite(p[0], p[1], p[2], p[3]).unwrap() - v).abs() < 1e-15);
        }
        if a + bump <= 1.0 {
            prop_assert!(composite(a + bump, b, c, d).unwrap() > v);
        }
        let r = MetricReport::new(a, b, c, d).unwrap();
        prop_assert!((r.composite - (a + b + c + d) / 4.0).abs() <= 1e-12);
    }

    #[test]
    fn fusion_is_monotone(alpha in unit(), s in unit(), r in unit(), ds in 0.0f64..0.5, dr in 0.0f64..0.5) {
        let base = fuse(alpha, &[s], r).unwrap().value;
        prop_assert!(fuse(alpha, &[(s + ds).min(1.0)], r).unwrap().value >= base - 1e-15);
        prop_assert!(fuse(alpha, &[s], (r + dr).min(1.0)).unwrap().value >= base - 1e-15);
        prop_assert_eq!(fuse(1.0, &[s], r).unwrap().value, s);
        prop_assert_eq!(fuse(0.0, &[s], r).unwrap().value, r);
    }
}

fn node(id: &str) -> EntityNode {
    EntityNode {
        node_id: id.into(),
        name: id.into(),
        entity_type: EntityType::Component,
        description: String::new(),
        embedding: vec![1.0, 0.0],
        attributes: BTreeMap::new(),
        provenance: vec!["c-0".into()],
        merged_embeddings: Vec::new(),
    }
}

fn random_graph(n: usize, edges: &[(usize, usize, f64)]) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    for i in 0..n {
        g.upsert_node(node(&format!("n{i:02}"))).unwrap();
    }
    for (k, (h, t, w)) in edges.iter().enumerate() {
        let (h, t) = (h % n, t % n);
        if h == t {
            continue;
        }
        g.upsert_edge(RelationEdge {
            edge_id: format!("e{k:03}"),
            head: format!("n{h:02}"),
            tail: format!("n{t:02}"),
            relation_type: format!("r{k}"),
            description: String::new(),
            weight: *w,
            provenance: vec!["c-0".into()],
        })
        .unwrap();
    }
    g
}

fn with_seed_sim(sub: &Subgraph, id: &str, sim: f64) -> Subgraph {
    let mut s = sub.clone();
    s.seed_similarities.insert(id.to_string(), sim);
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn relevance_is_bounded_and_monotone_in_seed_similarity(
        n in 2usize..12,
        edges in prop::collection::vec((0usize..12, 0usize..12, 0.0f64..=1.0), 0..30),
        sims in prop::collection::vec(0.0f64..=1.0, 1..4),
        bump in 0.0f64..0.5,
    ) {
        let g = random_graph(n, &edges);
        let seeds: Vec<(String, f64)> = sims.iter().enumerate().map(|(i, s)| (format!("n{:02}", i % n), *s)).collect();
        let sub = g.traverse(&seeds, &TraverseParams::default()).unwrap();
        let r = graph_relevance(&sub, 0.5);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(r == 0.0 || !sub.is_empty());
        let (id, s) = sub.seed_similarities.iter().next().map(|(k, v)| (k.clone(), *v)).unwrap();
        let raised = with_seed_sim(&sub, &id, (s + bump).min(1.0));
        prop_assert!(graph_relevance(&raised, 0.5) >= r - 1e-12);
        prop_assert!(sub.nodes.iter().all(|n| g.node(&n.node_id).is_some()));
        prop_assert!(sub.edges.iter().all(|e| g.edge(&e.edge_id).is_some()));
    }
}

#[test]
fn relevance_reference_values() {
    assert_eq!(graph_relevance(&Subgraph::default(), 0.5), 0.0);
    let g = random_graph(2, &[(0, 1, 1.0)]);
    let sub = g.traverse(&[("n00".into(), 0.8)], &TraverseParams::default()).unwrap();
    assert!((graph_relevance(&sub, 0.5) - 0.8).abs() < 1e-12);
    let single = g.traverse(&[("n01".into(), 1.0)], &TraverseParams { max_hops: 0, ..Default::default() }).unwrap();
    assert_eq!(graph_relevance(&single, 0.5), 1.0);
}
