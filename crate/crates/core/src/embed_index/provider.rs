use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedding};

/// Produces embeddings of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn model_tag(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Words dropped before hashing.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "how", "i", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "this", "to", "was", "what", "when", "which", "with",
];

/// Lowercased alphanumeric runs with stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(seed: u64, token: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic offline embedder.
///
/// Each token `t` (see [`tokenize`]) is hashed with FNV-1a 64 over
/// `seed.to_le_bytes() ++ utf8(t)` to `h`. Component `j` of the token vector is
/// `u * 2 - 1` with `u = (splitmix64(h + (j + 1) * 0x9e3779b97f4a7c15) >> 11) / 2^53`.
/// Token vectors are summed in f64 and the sum is scaled to unit length, then
/// cast to f32. Text without any token is hashed as a single token made of its
/// trimmed, lowercased form.
#[derive(Debug, Clone)]
pub struct HashProjectionEmbedder {
    dim: usize,
    seed: u64,
    tag: String,
}

impl HashProjectionEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed, tag: format!("hash-projection-d{dim}-s{seed}") }
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        let h = fnv1a(self.seed, token);
        for (j, slot) in acc.iter_mut().enumerate() {
            let x = splitmix64(h.wrapping_add((j as u64 + 1).wrapping_mul(GOLDEN)));
            let u = (x >> 11) as f64 / (1u64 << 53) as f64;
            *slot += u * 2.0 - 1.0;
        }
    }
}

impl Default for HashProjectionEmbedder {
    fn default() -> Self {
        Self::new(64, 0)
    }
}

impl Embedder for HashProjectionEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut tokens = tokenize(trimmed);
        if tokens.is_empty() {
            tokens.push(trimmed.to_lowercase());
        }
        let mut acc = vec![0.0f64; self.dim];
        for t in &tokens {
            self.token_vector(t, &mut acc);
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Embedding::new(acc.iter().map(|x| (x / n) as f32).collect(), self.tag.clone()))
    }
}

/// HTTP embedder: `POST {url}` with `{"model": .., "text": ..}`, expecting
/// `{"vector": [..]}` back.
pub struct RemoteEmbedder {
    url: String,
    model: String,
    dim: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f32>,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), model: model.into(), dim, agent }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn model_tag(&self) -> &str {
        &self.model
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let body = EmbedRequest { model: &self.model, text };
        let mut resp =
            self.agent.post(&self.url).send_json(&body).map_err(|e| EmbedError::ProviderFailure(e.to_string()))?;
        let parsed: EmbedResponse =
            resp.body_mut().read_json().map_err(|e| EmbedError::ProviderFailure(e.to_string()))?;
        if parsed.vector.len() != self.dim {
            return Err(EmbedError::DimensionMismatch { expected: self.dim, got: parsed.vector.len() });
        }
        Ok(Embedding::new(parsed.vector, self.model.clone()))
    }
}
