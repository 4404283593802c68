//! The embedding function and exact top-k cosine search over chunk embeddings.

mod index;
mod provider;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{IndexEntry, VectorIndex};
pub use provider::{tokenize, Embedder, HashProjectionEmbedder, RemoteEmbedder, STOPWORDS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider failed: {0}")]
    ProviderFailure(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all-zero vector")]
    ZeroVector,
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index file: {0}")]
    Persistence(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub model_tag: String,
}

impl Embedding {
    pub fn new(vector: Vec<f32>, model_tag: impl Into<String>) -> Self {
        Self { vector, model_tag: model_tag.into() }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vector)
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|x| *x == 0.0)
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
}

/// Cosine similarity computed in f64.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    cosine_slices(&a.vector, &b.vector)
}

pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
