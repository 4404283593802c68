use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dot, EmbedError, Embedding};
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub embedding: Embedding,
}

#[derive(Serialize, Deserialize)]
struct Header {
    d: usize,
    model_tag: String,
    count: usize,
    chunk_ids: Vec<String>,
}

/// Exact cosine index. The dimension is fixed at creation.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    d: usize,
    model_tag: String,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    norms: Vec<f64>,
    position: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(d: usize, model_tag: impl Into<String>) -> Self {
        Self {
            d,
            model_tag: model_tag.into(),
            ids: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            position: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.position.contains_key(chunk_id)
    }

    pub fn get(&self, chunk_id: &str) -> Option<Embedding> {
        self.position.get(chunk_id).map(|&i| Embedding::new(self.vectors[i].clone(), self.model_tag.clone()))
    }

    /// Inserts or replaces the entry for `chunk_id`.
    pub fn insert(&mut self, chunk_id: impl Into<String>, embedding: &Embedding) -> Result<(), EmbedError> {
        if embedding.dim() != self.d {
            return Err(EmbedError::DimensionMismatch { expected: self.d, got: embedding.dim() });
        }
        let n = embedding.norm();
        if n == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        let chunk_id = chunk_id.into();
        match self.position.get(&chunk_id) {
            Some(&i) => {
                self.vectors[i] = embedding.vector.clone();
                self.norms[i] = n;
            }
            None => {
                self.position.insert(chunk_id.clone(), self.ids.len());
                self.ids.push(chunk_id);
                self.vectors.push(embedding.vector.clone());
                self.norms.push(n);
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, chunk_id: &str) -> Option<Embedding> {
        let i = self.position.remove(chunk_id)?;
        let last = self.ids.len() - 1;
        self.ids.swap(i, last);
        self.vectors.swap(i, last);
        self.norms.swap(i, last);
        self.ids.pop();
        let v = self.vectors.pop().expect("parallel arrays");
        self.norms.pop();
        if i < last {
            self.position.insert(self.ids[i].clone(), i);
        }
        Some(Embedding::new(v, self.model_tag.clone()))
    }

    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<(String, f64)>, EmbedError> {
        self.search_with(ExecMode::Auto, query, k)
    }

    /// Exact top-k by cosine; ties go to the smaller chunk id.
    pub fn search_with(&self, mode: ExecMode, query: &Embedding, k: usize) -> Result<Vec<(String, f64)>, EmbedError> {
        if k == 0 {
            return Err(EmbedError::InvalidK);
        }
        if self.is_empty() {
            return Err(EmbedError::EmptyIndex);
        }
        if query.dim() != self.d {
            return Err(EmbedError::DimensionMismatch { expected: self.d, got: query.dim() });
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        let sims = par::map_indexed(mode, &self.vectors, |i, v| {
            (dot(v, &query.vector) / (self.norms[i] * qn)).clamp(-1.0, 1.0)
        });
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        let cmp = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then_with(|| self.ids[*a].cmp(&self.ids[*b]));
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_by(cmp);
        Ok(order.into_iter().map(|i| (self.ids[i].clone(), sims[i])).collect())
    }

    pub fn entries(&self) -> impl Iterator<Item = IndexEntry> + '_ {
        self.ids.iter().zip(&self.vectors).map(|(id, v)| IndexEntry {
            chunk_id: id.clone(),
            embedding: Embedding::new(v.clone(), self.model_tag.clone()),
        })
    }

    /// Writes a JSON header line `{d, model_tag, count, chunk_ids}` followed by
    /// `count * d` little-endian f32 values in header order.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), EmbedError> {
        let header =
            Header { d: self.d, model_tag: self.model_tag.clone(), count: self.len(), chunk_ids: self.ids.clone() };
        let io = |e: std::io::Error| EmbedError::Persistence(e.to_string());
        let line = serde_json::to_string(&header).map_err(|e| EmbedError::Persistence(e.to_string()))?;
        w.write_all(line.as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
        for v in &self.vectors {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_from(r: impl Read) -> Result<Self, EmbedError> {
        let io = |e: std::io::Error| EmbedError::Persistence(e.to_string());
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(io)?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|e| EmbedError::Persistence(e.to_string()))?;
        if header.chunk_ids.len() != header.count {
            return Err(EmbedError::Persistence("header count does not match chunk_ids".into()));
        }
        let mut index = VectorIndex::new(header.d, header.model_tag);
        let mut buf = vec![0u8; header.d * 4];
        for id in header.chunk_ids {
            reader.read_exact(&mut buf).map_err(io)?;
            let v: Vec<f32> = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let e = Embedding::new(v, index.model_tag.clone());
            index.insert(id, &e)?;
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let tmp = path.with_extension("tmp");
        let file = std::fs::File::create(&tmp).map_err(|e| EmbedError::Persistence(e.to_string()))?;
        self.write_to(std::io::BufWriter::new(file))?;
        std::fs::rename(&tmp, path).map_err(|e| EmbedError::Persistence(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let file = std::fs::File::open(path).map_err(|e| EmbedError::Persistence(e.to_string()))?;
        Self::read_from(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: Vec<f32>) -> Embedding {
        Embedding::new(v, "t")
    }

    fn sample() -> VectorIndex {
        let mut idx = VectorIndex::new(3, "t");
        idx.insert("c1", &emb(vec![1.0, 0.0, 0.0])).unwrap();
        idx.insert("c2", &emb(vec![0.0, 1.0, 0.0])).unwrap();
        idx.insert("c3", &emb(vec![1.0, 1.0, 0.0])).unwrap();
        idx
    }

    #[test]
    fn identity_top1_and_saturation() {
        let idx = sample();
        let hits = idx.search(&emb(vec![0.0, 1.0, 0.0]), 1).unwrap();
        assert_eq!(hits[0].0, "c2");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        let all = idx.search(&emb(vec![1.0, 0.0, 0.0]), 10).unwrap();
        assert_eq!(all.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), vec!["c1", "c3", "c2"]);
    }

    #[test]
    fn rejects_bad_inserts_and_queries() {
        let mut idx = VectorIndex::new(3, "t");
        assert_eq!(idx.search(&emb(vec![1.0, 0.0, 0.0]), 1), Err(EmbedError::EmptyIndex));
        assert_eq!(idx.insert("z", &emb(vec![0.0; 3])), Err(EmbedError::ZeroVector));
        assert!(matches!(idx.insert("z", &emb(vec![1.0])), Err(EmbedError::DimensionMismatch { .. })));
        idx.insert("a", &emb(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(idx.search(&emb(vec![1.0, 0.0, 0.0]), 0), Err(EmbedError::InvalidK));
    }

    #[test]
    fn ties_break_by_chunk_id() {
        let mut idx = VectorIndex::new(2, "t");
        for id in ["b", "a", "c"] {
            idx.insert(id, &emb(vec![1.0, 1.0])).unwrap();
        }
        let hits = idx.search(&emb(vec![1.0, 1.0]), 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn persistence_round_trip() {
        let idx = sample();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let header_end = buf.iter().position(|b| *b == b'\n').unwrap();
        assert_eq!(buf.len() - header_end - 1, 3 * 3 * 4);
        let back = VectorIndex::read_from(&buf[..]).unwrap();
        let q = emb(vec![0.2, 0.9, 0.1]);
        assert_eq!(idx.search(&q, 3).unwrap(), back.search(&q, 3).unwrap());
    }

    proptest! {
        #[test]
        fn insert_remove_round_trip(
            vecs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 2..40),
            extra in prop::collection::vec(-1.0f32..1.0, 4),
            q in prop::collection::vec(-1.0f32..1.0, 4),
        ) {
            prop_assume!(extra.iter().any(|x| *x != 0.0) && q.iter().any(|x| *x != 0.0));
            let mut idx = VectorIndex::new(4, "t");
            for (i, v) in vecs.iter().enumerate() {
                if v.iter().any(|x| *x != 0.0) {
                    idx.insert(format!("c{i:03}"), &emb(v.clone())).unwrap();
                }
            }
            prop_assume!(!idx.is_empty());
            let q = emb(q);
            let before = idx.search(&q, idx.len()).unwrap();
            idx.insert("zz-extra", &emb(extra)).unwrap();
            idx.remove("zz-extra").unwrap();
            prop_assert_eq!(before, idx.search(&q, idx.len()).unwrap());
        }

        #[test]
        fn sequential_matches_parallel(
            vecs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 8), 1..80),
            q in prop::collection::vec(0.1f32..1.0, 8),
            k in 1usize..20,
        ) {
            let mut idx = VectorIndex::new(8, "t");
            for (i, v) in vecs.iter().enumerate() {
                let _ = idx.insert(format!("c{i}"), &emb(v.clone()));
            }
            prop_assume!(!idx.is_empty());
            let q = emb(q);
            prop_assert_eq!(
                idx.search_with(ExecMode::Sequential, &q, k).unwrap(),
                idx.search_with(ExecMode::Auto, &q, k).unwrap()
            );
        }
    }
}
