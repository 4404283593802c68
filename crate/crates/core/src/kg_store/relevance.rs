use std::collections::{BTreeMap, HashMap};

use super::Subgraph;

/// Default per-hop decay.
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Per-node path score over a subgraph.
///
/// A seed scores `max(0, sim)`. Any other node scores the best
/// `max(0, sim(root)) * mean(w)` over paths that start at a seed and strictly
/// increase in hop at every step; a node with no such path scores 0.
pub fn path_scores(sub: &Subgraph) -> BTreeMap<String, f64> {
    let hop = |id: &str| sub.hop_of.get(id).copied();
    let sim = |id: &str| sub.seed_similarities.get(id).copied().unwrap_or(0.0).max(0.0);

    let mut order: Vec<&str> = sub.nodes.iter().map(|n| n.node_id.as_str()).collect();
    order.sort_by_key(|id| (hop(id).unwrap_or(usize::MAX), *id));

    let mut incoming: HashMap<&str, Vec<(&str, f64)>> = HashMap::new();
    for e in &sub.edges {
        let (Some(hh), Some(ht)) = (hop(&e.head), hop(&e.tail)) else { continue };
        if hh < ht {
            incoming.entry(e.tail.as_str()).or_default().push((e.head.as_str(), e.weight));
        } else if ht < hh {
            incoming.entry(e.head.as_str()).or_default().push((e.tail.as_str(), e.weight));
        }
    }

    // (root, path length) -> best weight sum
    let mut states: HashMap<&str, BTreeMap<(&str, usize), f64>> = HashMap::new();
    let mut scores = BTreeMap::new();
    for id in order {
        if hop(id) == Some(0) {
            states.insert(id, BTreeMap::from([((id, 0usize), 0.0)]));
            scores.insert(id.to_string(), sim(id));
            continue;
        }
        let mut mine: BTreeMap<(&str, usize), f64> = BTreeMap::new();
        for (parent, w) in incoming.get(id).into_iter().flatten() {
            if let Some(ps) = states.get(parent) {
                for (&(root, len), s) in ps {
                    let cand = s + w;
                    mine.entry((root, len + 1)).and_modify(|v| *v = v.max(cand)).or_insert(cand);
                }
            }
        }
        let score = mine.iter().map(|(&(root, len), sum)| sim(root) * sum / len as f64).fold(0.0, f64::max);
        scores.insert(id.to_string(), score);
        states.insert(id, mine);
    }
    scores
}

/// Decay-weighted mean of path scores, `sum(gamma^hop * s) / sum(gamma^hop)`,
/// clamped to `[0, 1]`; an empty subgraph scores 0.
pub fn graph_relevance(sub: &Subgraph, gamma: f64) -> f64 {
    if sub.is_empty() {
        return 0.0;
    }
    let scores = path_scores(sub);
    let (mut num, mut den) = (0.0, 0.0);
    for n in &sub.nodes {
        let h = sub.hop_of.get(&n.node_id).copied().unwrap_or(0);
        let weight = gamma.powi(h as i32);
        num += weight * scores.get(&n.node_id).copied().unwrap_or(0.0);
        den += weight;
    }
    if den == 0.0 {
        return 0.0;
    }
    (num / den).clamp(0.0, 1.0)
}
