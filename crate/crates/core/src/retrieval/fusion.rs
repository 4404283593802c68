use serde::{Deserialize, Serialize};

use super::RetrievalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionScore {
    pub alpha: f64,
    pub max_chunk_sim: f64,
    pub graph_relevance: f64,
    pub value: f64,
}

/// `value = alpha * max(sims) + (1 - alpha) * relevance`, with `max` of no
/// hits taken as 0.
pub fn fuse(alpha: f64, sims: &[f64], relevance: f64) -> Result<FusionScore, RetrievalError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RetrievalError::AlphaOutOfRange(alpha));
    }
    if !(0.0..=1.0).contains(&relevance) {
        return Err(RetrievalError::RelevanceOutOfRange(relevance));
    }
    let max_chunk_sim = sims.iter().copied().reduce(f64::max).unwrap_or(0.0);
    Ok(FusionScore {
        alpha,
        max_chunk_sim,
        graph_relevance: relevance,
        value: alpha * max_chunk_sim + (1.0 - alpha) * relevance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_and_midpoint() {
        assert_eq!(fuse(1.0, &[0.8, 0.1], 0.3).unwrap().value, 0.8);
        assert_eq!(fuse(0.0, &[0.8], 0.3).unwrap().value, 0.3);
        assert!((fuse(0.5, &[0.8], 0.6).unwrap().value - 0.7).abs() < 1e-12);
        assert_eq!(fuse(0.5, &[], 0.6).unwrap().max_chunk_sim, 0.0);
        assert!(matches!(fuse(1.5, &[], 0.0), Err(RetrievalError::AlphaOutOfRange(_))));
        assert!(matches!(fuse(0.5, &[], f64::NAN), Err(RetrievalError::RelevanceOutOfRange(_))));
    }
}
