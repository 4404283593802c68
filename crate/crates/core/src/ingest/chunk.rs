use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Chunk, ChunkMetadata, IngestError, LayoutTag, Part, PartKind, SourceDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkPolicy {
    pub target_chars: usize,
    pub overlap_chars: usize,
    pub respect_boundaries: bool,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self { target_chars: 1600, overlap_chars: 200, respect_boundaries: true }
    }
}

impl ChunkPolicy {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.target_chars == 0 || self.overlap_chars >= self.target_chars {
            return Err(IngestError::InvalidPolicy { target: self.target_chars, overlap: self.overlap_chars });
        }
        Ok(())
    }
}

fn layout_tags(part: &Part) -> BTreeSet<LayoutTag> {
    let tag = match part.kind {
        PartKind::Table => LayoutTag::Table,
        PartKind::Code => LayoutTag::Code,
        PartKind::ImageCaption => LayoutTag::Caption,
        PartKind::Text if part.content.lines().all(|l| l.starts_with("- ")) => LayoutTag::List,
        PartKind::Text => LayoutTag::Paragraph,
    };
    BTreeSet::from([tag])
}

/// Character windows `[start, end)` over a part of `len` characters.
///
/// Windows are at most `target` characters long and each one starts exactly
/// `overlap` characters before the previous one ended. When a whitespace
/// character is available in the last fifth of a window the window ends just
/// after it, so chunks tend to end on word boundaries.
fn windows(chars: &[char], policy: &ChunkPolicy) -> Vec<(usize, usize)> {
    let len = chars.len();
    let target = policy.target_chars;
    let overlap = policy.overlap_chars;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if len - start <= target {
            out.push((start, len));
            return out;
        }
        let hard_end = start + target;
        let lower = (start + target * 4 / 5).max(start + overlap + 1);
        let end = (lower..=hard_end).rev().find(|&e| chars[e - 1].is_whitespace()).unwrap_or(hard_end);
        out.push((start, end));
        start = end - overlap;
    }
}

/// Splits a document into chunks. Chunks never span parts; table and code
/// parts stay whole when `respect_boundaries` is set.
pub fn chunk_document(doc: &SourceDocument, policy: &ChunkPolicy) -> Result<Vec<Chunk>, IngestError> {
    policy.validate()?;
    let mut chunks = Vec::new();
    for part in &doc.modality_parts {
        let chars: Vec<char> = part.content.chars().collect();
        if chars.is_empty() {
            continue;
        }
        let keep_whole = policy.respect_boundaries && matches!(part.kind, PartKind::Table | PartKind::Code);
        let spans = if keep_whole { vec![(0, chars.len())] } else { windows(&chars, policy) };
        let tags = layout_tags(part);
        for (start, end) in spans {
            let content: String = chars[start..end].iter().collect();
            let seq = chunks.len();
            chunks.push(Chunk {
                chunk_id: Chunk::compute_id(&doc.doc_id, seq, &content),
                doc_id: doc.doc_id.clone(),
                seq,
                content,
                metadata: ChunkMetadata {
                    section_path: part.section_path.clone(),
                    page_range: part.page.map(|p| [p, p]),
                    layout_tags: tags.clone(),
                    char_span: [start, end],
                },
            });
        }
    }
    Ok(chunks)
}

/// Rebuilds part texts from chunks by dropping each chunk's overlap with its
/// predecessor in the same part (a chunk whose span starts at 0 opens a new part).
pub fn reconstruct_parts(chunks: &[Chunk]) -> Vec<String> {
    let mut parts: Vec<String> = Vec::new();
    let mut prev_end = 0usize;
    for c in chunks {
        let [start, end] = c.metadata.char_span;
        if start == 0 {
            parts.push(c.content.clone());
        } else {
            let skip = prev_end.saturating_sub(start);
            let last = parts.last_mut().expect("continuation chunk follows a first chunk");
            last.extend(c.content.chars().skip(skip));
        }
        prev_end = end;
    }
    parts
}
