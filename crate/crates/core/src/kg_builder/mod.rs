//! Knowledge graph construction: four extraction agents per chunk, merging
//! with embedding-based deduplication, and synopsis nodes over clusters of
//! similar entities.

mod merge;
mod synopsis;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_index::{EmbedError, Embedder};
use crate::ingest::Chunk;
use crate::kg_store::{EntityNode, EntityType, GraphWriter, KgError, KgStore, KnowledgeGraph, RelationEdge};
use crate::llm_gateway::{schema, Gateway, GatewayError, GatewayRequest, EXTRACTION_TEMPERATURE};
use crate::par::{self, ExecMode};
use crate::prompt::{self, or_none, Template};

pub use merge::{merge_result, MergeReport, Thresholds};
pub use synopsis::synthesize_synopsis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    HighLevel,
    MidLevel,
    LowLevel,
    Covariate,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] =
        [AgentKind::HighLevel, AgentKind::MidLevel, AgentKind::LowLevel, AgentKind::Covariate];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::HighLevel => "high_level",
            AgentKind::MidLevel => "mid_level",
            AgentKind::LowLevel => "low_level",
            AgentKind::Covariate => "covariate",
        }
    }

    pub fn template(self) -> Template {
        match self {
            AgentKind::HighLevel => prompt::EXTRACT_HIGH_LEVEL,
            AgentKind::MidLevel => prompt::EXTRACT_MID_LEVEL,
            AgentKind::LowLevel => prompt::EXTRACT_LOW_LEVEL,
            AgentKind::Covariate => prompt::EXTRACT_COVARIATE,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDraft {
    pub name: String,
    pub entity_type: EntityType,
    pub description: String,
    pub source_chunk_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDraft {
    pub head_name: String,
    pub tail_name: String,
    pub relation_type: String,
    pub description: String,
    pub confidence: f64,
    pub source_chunk_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDraft {
    pub target_name: String,
    pub attribute_key: String,
    pub attribute_value: String,
    pub source_chunk_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub entities: Vec<EntityDraft>,
    pub relations: Vec<RelationDraft>,
    pub covariates: Vec<CovariateDraft>,
}

impl ExtractionResult {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty() && self.covariates.is_empty()
    }

    pub fn extend(&mut self, other: ExtractionResult) {
        self.entities.extend(other.entities);
        self.relations.extend(other.relations);
        self.covariates.extend(other.covariates);
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("gateway failure: {0}")]
    GatewayFailure(String),
    #[error("malformed extraction: {0}")]
    MalformedExtraction(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// Relation confidence used when the model omits one.
pub const DEFAULT_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgBuildConfig {
    pub dedup_threshold: f64,
    /// Per-entity-type overrides of `dedup_threshold`.
    pub type_thresholds: BTreeMap<EntityType, f64>,
    pub cluster_threshold: f64,
    pub min_cluster_size: usize,
    /// Number of nearby graph nodes summarised in each extraction prompt.
    pub context_nodes: usize,
    pub synopsis: bool,
}

impl Default for KgBuildConfig {
    fn default() -> Self {
        Self {
            dedup_threshold: 0.90,
            type_thresholds: BTreeMap::new(),
            cluster_threshold: 0.90,
            min_cluster_size: 3,
            context_nodes: 5,
            synopsis: true,
        }
    }
}

impl KgBuildConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds { default: self.dedup_threshold, per_type: self.type_thresholds.clone() }
    }
}

/// Write access to a graph, implemented by the bare graph and by a store's
/// logging writer.
pub trait GraphMut {
    fn view(&self) -> &KnowledgeGraph;
    fn put_node(&mut self, node: EntityNode) -> Result<String, KgError>;
    fn put_edge(&mut self, edge: RelationEdge) -> Result<String, KgError>;
}

impl GraphMut for KnowledgeGraph {
    fn view(&self) -> &KnowledgeGraph {
        self
    }
    fn put_node(&mut self, node: EntityNode) -> Result<String, KgError> {
        self.upsert_node(node)
    }
    fn put_edge(&mut self, edge: RelationEdge) -> Result<String, KgError> {
        self.upsert_edge(edge)
    }
}

impl GraphMut for GraphWriter<'_> {
    fn view(&self) -> &KnowledgeGraph {
        self.graph()
    }
    fn put_node(&mut self, node: EntityNode) -> Result<String, KgError> {
        self.upsert_node(node)
    }
    fn put_edge(&mut self, edge: RelationEdge) -> Result<String, KgError> {
        self.upsert_edge(edge)
    }
}

/// Names and types of the graph nodes nearest to the chunk, one per line.
pub fn graph_context(graph: &KnowledgeGraph, embedder: &dyn Embedder, chunk: &Chunk, n: usize) -> String {
    if graph.is_empty() || n == 0 {
        return String::new();
    }
    let Ok(q) = embedder.embed(&chunk.content) else { return String::new() };
    let Ok(hits) = graph.match_entities(&q.vector, n) else { return String::new() };
    hits.iter()
        .filter_map(|(id, _)| graph.node(id))
        .map(|node| format!("- {} ({})", node.name, node.entity_type.as_str()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn clean(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs one extraction agent on a chunk.
pub fn run_agent(
    gateway: &Gateway,
    kind: AgentKind,
    chunk: &Chunk,
    graph_context: &str,
) -> Result<ExtractionResult, BuildError> {
    let section = chunk.metadata.section_path.join(" > ");
    let rendered = kind.template().render(&[
        ("graph_context", or_none(graph_context)),
        ("section", or_none(&section)),
        ("chunk", &chunk.content),
    ]);
    let req = GatewayRequest::json(kind.template().id, rendered, schema::EXTRACTION, EXTRACTION_TEMPERATURE)
        .with_echo(chunk.content.clone());
    let json = gateway.complete(&req).map_err(|e| match e {
        GatewayError::MalformedReply { detail, .. } => BuildError::MalformedExtraction(detail),
        other => BuildError::GatewayFailure(other.to_string()),
    })?;
    let reply: schema::ExtractionReply = schema::parse(&json).map_err(BuildError::MalformedExtraction)?;
    let source = chunk.chunk_id.clone();
    let mut out = ExtractionResult::default();
    if kind != AgentKind::Covariate {
        for e in reply.entities {
            let entity_type = match (kind, EntityType::parse_lenient(&e.entity_type)) {
                (AgentKind::HighLevel, _) => EntityType::Structure,
                (_, EntityType::Synopsis) => EntityType::Other,
                (_, t) => t,
            };
            out.entities.push(EntityDraft {
                name: clean(&e.name),
                entity_type,
                description: clean(&e.description),
                source_chunk_id: source.clone(),
            });
        }
        for r in reply.relations {
            out.relations.push(RelationDraft {
                head_name: clean(&r.head),
                tail_name: clean(&r.tail),
                relation_type: clean(&r.relation_type),
                description: clean(&r.description),
                confidence: r.confidence.unwrap_or(DEFAULT_CONFIDENCE),
                source_chunk_id: source.clone(),
            });
        }
    }
    for c in reply.covariates {
        out.covariates.push(CovariateDraft {
            target_name: clean(&c.target),
            attribute_key: clean(&c.key),
            attribute_value: clean(&c.value),
            source_chunk_id: source.clone(),
        });
    }
    Ok(out)
}

/// Runs all four agents on a chunk, in agent order.
pub fn extract_chunk(gateway: &Gateway, chunk: &Chunk, graph_context: &str) -> Result<ExtractionResult, BuildError> {
    let mut all = ExtractionResult::default();
    for kind in AgentKind::ALL {
        all.extend(run_agent(gateway, kind, chunk, graph_context)?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub chunk_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub chunks_processed: usize,
    pub merge: MergeReport,
    pub synopsis_nodes: usize,
    /// Chunks whose extraction was malformed on the first pass and retried.
    pub requeued: Vec<String>,
    pub failures: Vec<ChunkFailure>,
}

/// Extracts from every chunk and merges the results into the store.
///
/// Agents run in parallel across chunks against a snapshot of the graph;
/// merges then apply one chunk at a time in input order. A chunk with a
/// malformed extraction is retried once after the batch.
pub fn build(
    gateway: &Gateway,
    embedder: &dyn Embedder,
    store: &KgStore,
    chunks: &[Chunk],
    config: &KgBuildConfig,
    mode: ExecMode,
) -> Result<BuildReport, BuildError> {
    let mut report = BuildReport::default();
    let thresholds = config.thresholds();

    let first: Vec<Result<ExtractionResult, BuildError>> = {
        let snapshot = store.read();
        par::map(mode, chunks, |chunk| {
            let ctx = graph_context(&snapshot, embedder, chunk, config.context_nodes);
            extract_chunk(gateway, chunk, &ctx)
        })
    };

    let mut retry = Vec::new();
    {
        let mut writer = store.write();
        for (chunk, result) in chunks.iter().zip(first) {
            match result {
                Ok(r) => {
                    report.merge.add(&merge_result(&mut writer, embedder, &r, &thresholds)?);
                    report.chunks_processed += 1;
                }
                Err(BuildError::MalformedExtraction(_)) => {
                    report.requeued.push(chunk.chunk_id.clone());
                    retry.push(chunk);
                }
                Err(e) => report.failures.push(ChunkFailure { chunk_id: chunk.chunk_id.clone(), error: e.to_string() }),
            }
        }
        writer.commit()?;
    }

    for chunk in retry {
        let ctx = graph_context(&store.read(), embedder, chunk, config.context_nodes);
        match extract_chunk(gateway, chunk, &ctx) {
            Ok(r) => {
                let mut writer = store.write();
                report.merge.add(&merge_result(&mut writer, embedder, &r, &thresholds)?);
                writer.commit()?;
                report.chunks_processed += 1;
            }
            Err(e) => report.failures.push(ChunkFailure { chunk_id: chunk.chunk_id.clone(), error: e.to_string() }),
        }
    }

    if config.synopsis && !store.read().is_empty() {
        let mut writer = store.write();
        let before = writer.view().node_count();
        synthesize_synopsis(&mut writer, config.cluster_threshold, config.min_cluster_size)?;
        report.synopsis_nodes = writer.view().node_count() - before;
        writer.commit()?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ChunkMetadata, LayoutTag};
    use crate::llm_gateway::{RetryPolicy, ScriptedMock, Transcript, TranscriptEntry};
    use std::sync::Arc;
    use std::time::Duration;

    pub(crate) fn chunk(id: &str, content: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            doc_id: "doc-1".into(),
            seq: 0,
            content: content.into(),
            metadata: ChunkMetadata {
                section_path: vec!["Startup".into()],
                page_range: None,
                layout_tags: [LayoutTag::Paragraph].into_iter().collect(),
                char_span: [0, content.len()],
            },
        }
    }

    fn gateway(entries: Vec<TranscriptEntry>) -> Gateway {
        let mock = Arc::new(ScriptedMock::new(Transcript::strict(entries)));
        Gateway::with_policy(mock, RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) }, 4)
    }

    #[test]
    fn covariate_agent_on_plain_chunk_is_empty() {
        let gw = gateway(vec![TranscriptEntry::reply(
            "extract.covariate",
            "{\"entities\":[],\"relations\":[],\"covariates\":[]}",
        )]);
        let r = run_agent(&gw, AgentKind::Covariate, &chunk("c-1", "Nothing to see."), "").unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn covariate_default_value() {
        let gw = gateway(vec![TranscriptEntry::reply(
            "extract.covariate",
            r#"{"entities":[{"name":"ignored","entity_type":"parameter","description":""}],"relations":[],
               "covariates":[{"target":"GSTART_TIMEOUT","key":"default","value":"30s"}]}"#,
        )]);
        let r = run_agent(&gw, AgentKind::Covariate, &chunk("c-1", "GSTART_TIMEOUT defaults to 30s"), "").unwrap();
        assert!(r.entities.is_empty() && r.relations.is_empty());
        assert_eq!(
            r.covariates,
            vec![CovariateDraft {
                target_name: "GSTART_TIMEOUT".into(),
                attribute_key: "default".into(),
                attribute_value: "30s".into(),
                source_chunk_id: "c-1".into(),
            }]
        );
    }

    #[test]
    fn mid_level_entities_and_relation() {
        let gw = gateway(vec![TranscriptEntry::reply(
            "extract.mid_level",
            r#"{"entities":[{"name":"A","entity_type":"component","description":"component A"},
                            {"name":"B","entity_type":"api","description":"API B"}],
               "relations":[{"head":"A","tail":"B","relation_type":"calls"}]}"#,
        )]);
        let r = run_agent(&gw, AgentKind::MidLevel, &chunk("c-9", "component A calls API B"), "").unwrap();
        assert_eq!(r.entities.len(), 2);
        assert_eq!(r.entities[1].entity_type, EntityType::Api);
        assert_eq!(r.relations[0].head_name, "A");
        assert_eq!(r.relations[0].relation_type, "calls");
        assert_eq!(r.relations[0].confidence, DEFAULT_CONFIDENCE);
        assert!(r.entities.iter().all(|e| e.source_chunk_id == "c-9"));
    }

    #[test]
    fn high_level_entities_are_structural() {
        let gw = gateway(vec![TranscriptEntry::reply(
            "extract.high_level",
            r#"{"entities":[{"name":"Chapter 2","entity_type":"component","description":"Startup"}]}"#,
        )]);
        let r = run_agent(&gw, AgentKind::HighLevel, &chunk("c-1", "x"), "").unwrap();
        assert_eq!(r.entities[0].entity_type, EntityType::Structure);
    }

    #[test]
    fn malformed_and_failed_calls() {
        let gw = gateway(vec![TranscriptEntry::reply("extract.mid_level", "not json")]);
        assert!(matches!(
            run_agent(&gw, AgentKind::MidLevel, &chunk("c-1", "x"), ""),
            Err(BuildError::MalformedExtraction(_))
        ));
        let gw = gateway(vec![]);
        assert!(matches!(
            run_agent(&gw, AgentKind::MidLevel, &chunk("c-1", "x"), ""),
            Err(BuildError::GatewayFailure(_))
        ));
    }

    #[test]
    fn build_requeues_malformed_chunk_once() {
        let good = r#"{"entities":[{"name":"A","entity_type":"component","description":"a"}]}"#;
        let empty = "{}";
        let mid = TranscriptEntry {
            template: Some("extract.mid_level".into()),
            // First pass: invalid twice (reply and repair); retry pass: valid.
            replies: vec!["oops".into(), "oops".into(), good.into()],
            ..Default::default()
        };
        let gw = gateway(vec![
            TranscriptEntry::reply("extract.high_level", empty),
            mid,
            TranscriptEntry::reply("extract.low_level", empty),
            TranscriptEntry::reply("extract.covariate", empty),
        ]);
        let store = KgStore::in_memory();
        let embedder = crate::embed_index::HashProjectionEmbedder::default();
        let cfg = KgBuildConfig { synopsis: false, ..Default::default() };
        let report = build(&gw, &embedder, &store, &[chunk("c-1", "A")], &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(report.requeued, vec!["c-1".to_string()]);
        assert!(report.failures.is_empty());
        assert_eq!(report.merge.new_nodes, 1);
        assert_eq!(store.read().node_count(), 1);
    }
}
