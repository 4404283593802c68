//! Document parsing and chunking.
//!
//! Raw bytes are decoded according to a [`Format`], split into ordered
//! [`Part`]s (paragraphs, tables, code blocks, image captions) that carry their
//! heading path and page, and then cut into [`Chunk`]s by [`chunk_document`].

mod chunk;
mod html;
mod markdown;
mod normalize;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{chunk_document, reconstruct_parts, ChunkPolicy};
pub use normalize::{normalize_code, normalize_line, normalize_table_row};

use crate::digest::short_hash;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("input is not valid UTF-8: {0}")]
    UndecodableInput(String),
    #[error("document has no extractable content")]
    EmptyDocument,
    #[error("invalid chunk policy: overlap_chars ({overlap}) must be smaller than target_chars ({target})")]
    InvalidPolicy { target: usize, overlap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Plain,
    #[default]
    Markdown,
    Html,
}

impl Format {
    /// Guess the format from a file extension; unknown extensions are plain text.
    pub fn from_extension(ext: &str) -> Format {
        match ext.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Format::Markdown,
            "html" | "htm" => Format::Html,
            _ => Format::Plain,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "text" | "txt" => Ok(Format::Plain),
            "markdown" | "md" => Ok(Format::Markdown),
            "html" | "htm" => Ok(Format::Html),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Text,
    Table,
    Code,
    ImageCaption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub kind: PartKind,
    /// Normalized content. For image captions this is the caption or alt text.
    pub content: String,
    pub section_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    pub modality_parts: Vec<Part>,
    #[serde(default)]
    pub origin_uri: String,
    /// Milliseconds since the Unix epoch; zero until the document is stamped.
    #[serde(default)]
    pub ingest_time: u64,
}

impl SourceDocument {
    pub fn stamped(mut self, origin_uri: impl Into<String>, ingest_time: u64) -> Self {
        self.origin_uri = origin_uri.into();
        self.ingest_time = ingest_time;
        self
    }

    /// Every distinct heading path that occurs in the document, including all
    /// of their prefixes.
    pub fn heading_paths(&self) -> BTreeSet<Vec<String>> {
        let mut out = BTreeSet::new();
        for part in &self.modality_parts {
            for n in 0..=part.section_path.len() {
                out.insert(part.section_path[..n].to_vec());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutTag {
    Paragraph,
    Table,
    Code,
    Caption,
    List,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMetadata {
    pub section_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_range: Option<[u32; 2]>,
    pub layout_tags: BTreeSet<LayoutTag>,
    /// Character offsets `[start, end)` into the source part.
    pub char_span: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq: usize,
    pub content: String,
    pub metadata: ChunkMetadata,
}

impl Chunk {
    pub fn compute_id(doc_id: &str, seq: usize, content: &str) -> String {
        format!("c-{}", short_hash(&[doc_id.as_bytes(), &(seq as u64).to_le_bytes(), content.as_bytes()], 16))
    }

    pub fn page(&self) -> Option<u32> {
        self.metadata.page_range.map(|[lo, _]| lo)
    }
}

/// Parses raw bytes into a [`SourceDocument`].
///
/// The document id is a content hash of the raw bytes, so re-ingesting the
/// same file yields the same id.
pub fn parse_document(raw: &[u8], format: Format) -> Result<SourceDocument, IngestError> {
    let text = std::str::from_utf8(raw).map_err(|e| IngestError::UndecodableInput(e.to_string()))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (parts, title) = match format {
        Format::Plain => markdown::parse_plain(text),
        Format::Markdown => markdown::parse_markdown(text),
        Format::Html => html::parse_html(text),
    };
    if parts.is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    let title = title.unwrap_or_else(|| {
        let first = parts[0].content.lines().next().unwrap_or_default();
        first.chars().take(80).collect()
    });
    Ok(SourceDocument {
        doc_id: format!("doc-{}", short_hash(&[raw], 16)),
        title,
        modality_parts: parts,
        origin_uri: String::new(),
        ingest_time: 0,
    })
}

/// Serializes chunks as line-delimited JSON.
pub fn chunks_to_jsonl(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    for c in chunks {
        out.push_str(&serde_json::to_string(c).expect("chunk serializes"));
        out.push('\n');
    }
    out
}
