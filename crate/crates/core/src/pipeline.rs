//! File-backed engine tying the pipeline together.
//!
//! Everything lives under one data directory, one file per store:
//!
//! | file              | contents                                          |
//! |-------------------|---------------------------------------------------|
//! | `documents.jsonl` | document records, appended on every status change |
//! | `chunks.jsonl`    | chunks in ingest order                            |
//! | `index.bin`       | the vector index                                  |
//! | `graph.jsonl`     | knowledge graph append log                        |
//! | `sessions.jsonl`  | chat sessions                                     |
//! | `traces.jsonl`    | trace events                                      |
//!
//! The engine is shared by the CLI and the HTTP service, so both produce the
//! same envelopes for the same stores, configuration and transcript.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError, ExtractionMode};
use crate::digest::short_hash;
use crate::embed_index::{EmbedError, Embedder, VectorIndex};
use crate::evalkit::{self, EvalError, SuiteReport, SutAnswer, SystemUnderTest};
use crate::generation::{self, AnswerEnvelope};
use crate::ingest::{chunk_document, parse_document, Chunk, Format, IngestError};
use crate::kg_builder::{self, synthesize_synopsis, BuildError, BuildReport, KgBuildConfig, MergeReport};
use crate::kg_store::{GraphStats, KgError, KgStore};
use crate::llm_gateway::Gateway;
use crate::par::{self, ExecMode};
use crate::retrieval::{self, RetrievalConfig, RetrievalError, Stores};
use crate::session::{SessionError, SessionStore, Turn};
use crate::trace::{Clock, Step, Trace, TraceEvent, TraceLog};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("document already ingested as {doc_id}")]
    Duplicate { doc_id: String },
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Both the vector index and the knowledge graph are empty.
    #[error("nothing has been ingested yet, so the question cannot be answered")]
    Unanswerable,
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error(transparent)]
    Dataset(EvalError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

impl From<EmbedError> for EngineError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::ProviderFailure(m) => EngineError::Provider(m),
            EmbedError::Persistence(m) => EngineError::Io(m),
            other => EngineError::InvalidRequest(other.to_string()),
        }
    }
}

impl From<SessionError> for EngineError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownSession(id) => EngineError::UnknownSession(id),
            other => EngineError::Io(other.to_string()),
        }
    }
}

impl From<BuildError> for EngineError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Kg(k) => EngineError::Kg(k),
            BuildError::Embed(e) => e.into(),
            other => EngineError::Provider(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EngineError + '_ {
    move |e| EngineError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocStatus {
    /// Chunked and indexed; waiting for extraction.
    Queued,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    pub origin_uri: String,
    pub ingest_time: u64,
    pub chunk_ids: Vec<String>,
    pub status: DocStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg_delta: Option<MergeReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub doc_id: String,
    pub chunk_count: usize,
    /// Filled when extraction ran before returning.
    pub kg_delta: Option<MergeReport>,
    pub status: DocStatus,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildSummary {
    pub documents: Vec<String>,
    pub report: BuildReport,
}

/// Per-request overrides of the configured retrieval parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalOverrides {
    pub alpha: Option<f64>,
    pub k_chunks: Option<usize>,
    pub k_seed: Option<usize>,
    pub max_hops: Option<usize>,
    pub min_edge_weight: Option<f64>,
}

impl RetrievalOverrides {
    pub fn apply(&self, base: &RetrievalConfig) -> RetrievalConfig {
        RetrievalConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            k_chunks: self.k_chunks.unwrap_or(base.k_chunks),
            k_seed: self.k_seed.unwrap_or(base.k_seed),
            max_hops: self.max_hops.unwrap_or(base.max_hops),
            min_edge_weight: self.min_edge_weight.unwrap_or(base.min_edge_weight),
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    pub query: String,
    #[serde(default)]
    pub config: RetrievalOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    #[serde(flatten)]
    pub envelope: AnswerEnvelope,
}

#[derive(Default)]
struct DocState {
    records: BTreeMap<String, DocumentRecord>,
    /// Doc ids in ingest order.
    order: Vec<String>,
    chunks: HashMap<String, Chunk>,
}

struct Files {
    documents: BufWriter<File>,
    chunks: BufWriter<File>,
}

fn append_jsonl<T: Serialize>(w: &mut BufWriter<File>, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EngineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EngineError::Io(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub struct Engine {
    data_dir: PathBuf,
    config: Config,
    gateway: Gateway,
    embedder: Arc<dyn Embedder>,
    clock: Clock,
    docs: RwLock<DocState>,
    files: Mutex<Files>,
    index: RwLock<VectorIndex>,
    graph: KgStore,
    sessions: SessionStore,
    traces: TraceLog,
    build_lock: Mutex<()>,
}

impl Engine {
    /// Opens (creating if needed) the stores under `data_dir`.
    pub fn open(data_dir: &Path, config: Config) -> Result<Self, EngineError> {
        config.validate()?;
        let gateway = config.gateway()?;
        Self::with_gateway(data_dir, config, gateway)
    }

    /// Like [`Engine::open`] but with an explicit gateway, for tests and embedding.
    pub fn with_gateway(data_dir: &Path, config: Config, gateway: Gateway) -> Result<Self, EngineError> {
        std::fs::create_dir_all(data_dir).map_err(io_err(data_dir))?;
        let embedder = config.embedder();
        let path = |name: &str| data_dir.join(name);

        let mut docs = DocState::default();
        for rec in read_jsonl::<DocumentRecord>(&path("documents.jsonl"))? {
            if !docs.records.contains_key(&rec.doc_id) {
                docs.order.push(rec.doc_id.clone());
            }
            docs.records.insert(rec.doc_id.clone(), rec);
        }
        for c in read_jsonl::<Chunk>(&path("chunks.jsonl"))? {
            docs.chunks.insert(c.chunk_id.clone(), c);
        }

        let index_path = path("index.bin");
        let index = if index_path.exists() {
            let index = VectorIndex::load(&index_path)?;
            if index.dim() != embedder.dim() || index.model_tag() != embedder.model_tag() {
                return Err(EngineError::InvalidRequest(format!(
                    "index was built with {} (d={}) but the configured embedder is {} (d={})",
                    index.model_tag(),
                    index.dim(),
                    embedder.model_tag(),
                    embedder.dim()
                )));
            }
            index
        } else {
            VectorIndex::new(embedder.dim(), embedder.model_tag())
        };

        let open_append = |p: PathBuf| -> Result<BufWriter<File>, EngineError> {
            let f = OpenOptions::new().create(true).append(true).open(&p).map_err(io_err(&p))?;
            Ok(BufWriter::new(f))
        };
        let files =
            Files { documents: open_append(path("documents.jsonl"))?, chunks: open_append(path("chunks.jsonl"))? };
        let traces_path = path("traces.jsonl");
        let traces = TraceLog::open(&traces_path).map_err(io_err(&traces_path))?;

        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            clock: config.clock(),
            gateway,
            embedder,
            docs: RwLock::new(docs),
            files: Mutex::new(files),
            index: RwLock::new(index),
            graph: KgStore::open(&path("graph.jsonl"))?,
            sessions: SessionStore::open(&path("sessions.jsonl"))?,
            traces,
            build_lock: Mutex::new(()),
            config,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn graph(&self) -> &KgStore {
        &self.graph
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    fn persist_record(&self, rec: &DocumentRecord) -> Result<(), EngineError> {
        let mut files = self.files.lock().unwrap_or_else(|e| e.into_inner());
        append_jsonl(&mut files.documents, std::slice::from_ref(rec)).map_err(io_err(&self.data_dir))
    }

    /// Parses, chunks, embeds and indexes one document. Extraction is queued,
    /// or run before returning in [`ExtractionMode::Sync`].
    pub fn ingest(&self, raw: &[u8], format: Format, origin_uri: &str) -> Result<IngestReceipt, EngineError> {
        let doc = parse_document(raw, format)?;
        if self.docs.read().unwrap_or_else(|e| e.into_inner()).records.contains_key(&doc.doc_id) {
            return Err(EngineError::Duplicate { doc_id: doc.doc_id });
        }
        let doc = doc.stamped(origin_uri, self.clock.now_ms());
        let chunks = chunk_document(&doc, &self.config.chunking)?;
        let embedder = self.embedder.as_ref();
        let embedded = par::map(ExecMode::Auto, &chunks, |c| embedder.embed(&c.content));

        {
            let mut docs = self.docs.write().unwrap_or_else(|e| e.into_inner());
            // Re-check under the write lock: a concurrent ingest of the same bytes may have won.
            if docs.records.contains_key(&doc.doc_id) {
                return Err(EngineError::Duplicate { doc_id: doc.doc_id });
            }
            let mut index = self.index.write().unwrap_or_else(|e| e.into_inner());
            for (c, e) in chunks.iter().zip(embedded) {
                match e {
                    Ok(e) => index.insert(c.chunk_id.clone(), &e)?,
                    // Stopword-only or otherwise unembeddable chunks stay citable but unindexed.
                    Err(EmbedError::ZeroVector | EmbedError::EmptyText) => {}
                    Err(other) => return Err(other.into()),
                }
            }
            index.save(&self.data_dir.join("index.bin"))?;
            let rec = DocumentRecord {
                doc_id: doc.doc_id.clone(),
                title: doc.title.clone(),
                origin_uri: doc.origin_uri.clone(),
                ingest_time: doc.ingest_time,
                chunk_ids: chunks.iter().map(|c| c.chunk_id.clone()).collect(),
                status: DocStatus::Queued,
                kg_delta: None,
                errors: Vec::new(),
            };
            {
                let mut files = self.files.lock().unwrap_or_else(|e| e.into_inner());
                append_jsonl(&mut files.chunks, &chunks).map_err(io_err(&self.data_dir))?;
                append_jsonl(&mut files.documents, std::slice::from_ref(&rec)).map_err(io_err(&self.data_dir))?;
            }
            for c in &chunks {
                docs.chunks.insert(c.chunk_id.clone(), c.clone());
            }
            docs.order.push(doc.doc_id.clone());
            docs.records.insert(doc.doc_id.clone(), rec);
        }
        tracing::info!(doc_id = %doc.doc_id, chunks = chunks.len(), "document ingested");

        let mut receipt = IngestReceipt {
            doc_id: doc.doc_id.clone(),
            chunk_count: chunks.len(),
            kg_delta: None,
            status: DocStatus::Queued,
        };
        if self.config.extraction == ExtractionMode::Sync {
            self.build_kg()?;
            if let Some(rec) = self.document(&doc.doc_id) {
                receipt.kg_delta = rec.kg_delta;
                receipt.status = rec.status;
            }
        }
        Ok(receipt)
    }

    pub fn document(&self, doc_id: &str) -> Option<DocumentRecord> {
        self.docs.read().unwrap_or_else(|e| e.into_inner()).records.get(doc_id).cloned()
    }

    pub fn documents(&self) -> Vec<DocumentRecord> {
        let docs = self.docs.read().unwrap_or_else(|e| e.into_inner());
        docs.order.iter().filter_map(|id| docs.records.get(id).cloned()).collect()
    }

    /// Drains the extraction queue: every queued or failed document, in
    /// ingest order. Synopsis clustering runs once at the end.
    pub fn build_kg(&self) -> Result<BuildSummary, EngineError> {
        let _one_build = self.build_lock.lock().unwrap_or_else(|e| e.into_inner());
        let pending: Vec<(DocumentRecord, Vec<Chunk>)> = {
            let docs = self.docs.read().unwrap_or_else(|e| e.into_inner());
            docs.order
                .iter()
                .filter_map(|id| docs.records.get(id))
                .filter(|r| r.status != DocStatus::Ready)
                .map(|r| (r.clone(), r.chunk_ids.iter().filter_map(|c| docs.chunks.get(c).cloned()).collect()))
                .collect()
        };
        let mut summary = BuildSummary::default();
        let per_doc = KgBuildConfig { synopsis: false, ..self.config.kg.clone() };
        for (mut rec, chunks) in pending {
            let report = kg_builder::build(
                &self.gateway,
                self.embedder.as_ref(),
                &self.graph,
                &chunks,
                &per_doc,
                ExecMode::Auto,
            )?;
            rec.status = if report.failures.is_empty() { DocStatus::Ready } else { DocStatus::Failed };
            rec.errors = report.failures.iter().map(|f| format!("{}: {}", f.chunk_id, f.error)).collect();
            rec.kg_delta = Some(report.merge);
            self.persist_record(&rec)?;
            tracing::info!(doc_id = %rec.doc_id, status = ?rec.status, "extraction finished");
            summary.documents.push(rec.doc_id.clone());
            summary.report.chunks_processed += report.chunks_processed;
            summary.report.merge.add(&report.merge);
            summary.report.requeued.extend(report.requeued);
            summary.report.failures.extend(report.failures);
            self.docs.write().unwrap_or_else(|e| e.into_inner()).records.insert(rec.doc_id.clone(), rec);
        }
        if self.config.kg.synopsis && !summary.documents.is_empty() {
            let mut writer = self.graph.write();
            let added =
                synthesize_synopsis(&mut writer, self.config.kg.cluster_threshold, self.config.kg.min_cluster_size)?;
            writer.commit()?;
            summary.report.synopsis_nodes = added.len();
        }
        Ok(summary)
    }

    pub fn graph_stats(&self) -> GraphStats {
        self.graph.read().stats()
    }

    pub fn export_graph(&self, path: &Path) -> Result<(), EngineError> {
        let text = self.graph.read().export_jsonl();
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn trace(&self, trace_id: &str) -> Option<Vec<TraceEvent>> {
        self.traces.get(trace_id)
    }

    fn stores_empty(&self) -> bool {
        self.index.read().unwrap_or_else(|e| e.into_inner()).is_empty() && self.graph.read().is_empty()
    }

    /// Retrieval plus staged generation for one query; events go to `trace`.
    fn run_pipeline(
        &self,
        query: &str,
        history: &[Turn],
        config: &RetrievalConfig,
        seed: u32,
        trace: &mut Trace,
    ) -> Result<(AnswerEnvelope, Vec<String>), EngineError> {
        let docs = self.docs.read().unwrap_or_else(|e| e.into_inner());
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        let graph = self.graph.read();
        let stores = Stores { graph: &graph, index: &index, chunks: &docs.chunks };
        let bundle =
            retrieval::build_bundle(&self.gateway, self.embedder.as_ref(), &stores, query, history, config, trace)
                .map_err(|e| match e {
                    RetrievalError::EmptyQuery => EngineError::EmptyQuery,
                    RetrievalError::EmptyIndex => EngineError::Unanswerable,
                    other => EngineError::InvalidRequest(other.to_string()),
                })?;
        let contexts = bundle.contexts();
        let generated = generation::answer(&self.gateway, &bundle, seed, trace);
        Ok((generated.envelope, contexts))
    }

    /// One chat turn: creates or extends a session, answers with the last
    /// turns as history and persists the turns and the trace.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, EngineError> {
        let query = req.query.trim();
        if query.is_empty() {
            return Err(EngineError::EmptyQuery);
        }
        let config = req.config.apply(&self.config.retrieval);
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(EngineError::InvalidRequest(format!("alpha {} outside [0, 1]", config.alpha)));
        }
        if self.stores_empty() {
            return Err(EngineError::Unanswerable);
        }
        let session_id = match &req.session_id {
            Some(id) if self.sessions.contains(id) => id.clone(),
            Some(id) => return Err(EngineError::UnknownSession(id.clone())),
            None => self.sessions.create(self.clock.now_ms())?,
        };
        let lock = self.sessions.turn_lock(&session_id);
        let _turn = lock.lock().unwrap_or_else(|e| e.into_inner());

        let history = self.sessions.history(&session_id, config.history_turns);
        let mut trace = Trace::new(self.traces.next_id(query), self.clock);
        let (envelope, _) = self.run_pipeline(query, &history, &config, 0, &mut trace)?;
        self.traces.append(trace.events()).map_err(io_err(&self.data_dir))?;
        self.sessions.append(&session_id, Turn::user(query))?;
        self.sessions
            .append(&session_id, Turn::assistant(envelope.condensed.clone(), Some(envelope.trace_id.clone())))?;
        Ok(ChatResponse { session_id, envelope })
    }

    /// Runs the evaluation suite on a line-delimited JSON dataset. The judge
    /// shares the engine's gateway.
    pub fn eval(&self, dataset: &str) -> Result<SuiteReport, EngineError> {
        let records = evalkit::parse_dataset(dataset).map_err(EngineError::Dataset)?;
        if !records.is_empty() && self.stores_empty() {
            return Err(EngineError::Unanswerable);
        }
        let sut = EvalSut { engine: self, nonce: self.traces.len() as u64, pending: Mutex::new(BTreeMap::new()) };
        let report = evalkit::run_suite(&records, &sut, &self.gateway, self.embedder.as_ref(), self.config.eval.width);
        let pending = sut.pending.into_inner().unwrap_or_else(|e| e.into_inner());
        for events in pending.into_values() {
            self.traces.append(&events).map_err(io_err(&self.data_dir))?;
        }
        Ok(report)
    }
}

/// The engine as seen by the evaluation harness. Trace ids are derived from
/// the record position so that parallel runs stay reproducible; events are
/// buffered and written in (index, sample) order after the suite.
struct EvalSut<'a> {
    engine: &'a Engine,
    nonce: u64,
    pending: Mutex<BTreeMap<(usize, u32), Vec<TraceEvent>>>,
}

impl EvalSut<'_> {
    fn trace_id(&self, index: usize, sample: u32) -> String {
        let parts: [&[u8]; 4] =
            [b"eval", &self.nonce.to_le_bytes(), &(index as u64).to_le_bytes(), &sample.to_le_bytes()];
        format!("t-{}", short_hash(&parts, 16))
    }
}

impl SystemUnderTest for EvalSut<'_> {
    fn answer(&self, index: usize, question: &str, sample: u32) -> Result<SutAnswer, String> {
        let e = self.engine;
        let mut trace = Trace::new(self.trace_id(index, sample), e.clock);
        let (envelope, contexts) =
            e.run_pipeline(question, &[], &e.config.retrieval, sample, &mut trace).map_err(|err| err.to_string())?;
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).insert((index, sample), trace.into_events());
        Ok(SutAnswer { answer: envelope.condensed, contexts, trace_id: Some(envelope.trace_id) })
    }

    fn judged(&self, trace_id: &str, detail: serde_json::Value, started: Instant) {
        let mut pending = self.pending.lock().unwrap_or_else(|e| e.into_inner());
        let Some(events) = pending.values_mut().find(|evs| evs.first().is_some_and(|ev| ev.trace_id == trace_id))
        else {
            return;
        };
        let mut trace = Trace::new(trace_id, self.engine.clock);
        let text = detail.to_string();
        trace.record(Step::Judge, None, &text, &text, started, detail);
        let mut ev = trace.into_events().remove(0);
        ev.seq = events.len();
        events.push(ev);
    }
}
