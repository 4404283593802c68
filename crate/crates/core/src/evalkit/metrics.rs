use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::embed_index::{cosine, Embedder};

/// Number of generated answers averaged by answer relevancy.
pub const ANSWER_SAMPLES: usize = 3;
/// Per-metric success threshold.
pub const PASS_THRESHOLD: f64 = 0.7;

/// Mean of the cosines, floored at 0.
pub fn answer_relevancy_from_cosines(cosines: &[f64]) -> f64 {
    if cosines.is_empty() {
        return 0.0;
    }
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    mean.clamp(0.0, 1.0)
}

/// Mean cosine similarity between the query embedding and each answer's.
pub fn answer_relevancy(embedder: &dyn Embedder, query: &str, answers: &[String]) -> Result<f64, EvalError> {
    if answers.len() != ANSWER_SAMPLES {
        return Err(EvalError::WrongAnswerCount(answers.len()));
    }
    if query.trim().is_empty() || answers.iter().any(|a| a.trim().is_empty()) {
        return Err(EvalError::EmptyText);
    }
    let q = embedder.embed(query)?;
    let mut cosines = Vec::with_capacity(answers.len());
    for a in answers {
        cosines.push(cosine(&embedder.embed(a)?, &q)?);
    }
    Ok(answer_relevancy_from_cosines(&cosines))
}

/// Attributable statements over all statements.
pub fn contextual_recall_from_labels(attributable: &[bool]) -> Result<f64, EvalError> {
    if attributable.is_empty() {
        return Err(EvalError::NoStatements);
    }
    Ok(attributable.iter().filter(|a| **a).count() as f64 / attributable.len() as f64)
}

/// Rank-weighted precision over the top-K relevance flags:
/// `sum_k precision@k * v_k / (relevant items in top K)`, and 0 when no item
/// is relevant.
pub fn contextual_precision(flags: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &v) in flags.iter().enumerate() {
        if v {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Truthful claims over all claims.
pub fn faithfulness_from_labels(truthful: &[bool]) -> Result<f64, EvalError> {
    if truthful.is_empty() {
        return Err(EvalError::NoClaims);
    }
    Ok(truthful.iter().filter(|t| **t).count() as f64 / truthful.len() as f64)
}

pub fn composite(ar: f64, cr: f64, cp: f64, f: f64) -> Result<f64, EvalError> {
    for x in [ar, cr, cp, f] {
        if !(0.0..=1.0).contains(&x) {
            return Err(EvalError::OutOfRange(x));
        }
    }
    Ok((ar + cr + cp + f) / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passed {
    pub answer_relevancy: bool,
    pub contextual_recall: bool,
    pub contextual_precision: bool,
    pub faithfulness: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub answer_relevancy: f64,
    pub contextual_recall: f64,
    pub contextual_precision: f64,
    pub faithfulness: f64,
    pub composite: f64,
    pub passed: Passed,
}

impl MetricReport {
    pub fn new(ar: f64, cr: f64, cp: f64, f: f64) -> Result<Self, EvalError> {
        let composite = composite(ar, cr, cp, f)?;
        Ok(Self {
            answer_relevancy: ar,
            contextual_recall: cr,
            contextual_precision: cp,
            faithfulness: f,
            composite,
            passed: Passed {
                answer_relevancy: ar >= PASS_THRESHOLD,
                contextual_recall: cr >= PASS_THRESHOLD,
                contextual_precision: cp >= PASS_THRESHOLD,
                faithfulness: f >= PASS_THRESHOLD,
            },
        })
    }
}
