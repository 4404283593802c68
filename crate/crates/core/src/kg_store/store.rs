use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::graph::Record;
use super::{EntityNode, KgError, KnowledgeGraph, RelationEdge};

/// Graph store: many readers, one writer.
///
/// With a backing file every upsert is appended to a line-delimited JSON log
/// that is replayed on open; later records win.
pub struct KgStore {
    graph: RwLock<KnowledgeGraph>,
    log: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

fn persist_err(e: impl std::fmt::Display) -> KgError {
    KgError::Persistence(e.to_string())
}

impl KgStore {
    pub fn in_memory() -> Self {
        Self { graph: RwLock::new(KnowledgeGraph::new()), log: None, path: None }
    }

    pub fn from_graph(graph: KnowledgeGraph) -> Self {
        Self { graph: RwLock::new(graph), log: None, path: None }
    }

    pub fn open(path: &Path) -> Result<Self, KgError> {
        let mut graph = KnowledgeGraph::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(persist_err)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record = serde_json::from_str(line)
                    .map_err(|e| KgError::Persistence(format!("{}:{}: {e}", path.display(), i + 1)))?;
                graph.apply(rec)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(persist_err)?;
        Ok(Self {
            graph: RwLock::new(graph),
            log: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// A consistent snapshot for the lifetime of the guard.
    pub fn read(&self) -> RwLockReadGuard<'_, KnowledgeGraph> {
        self.graph.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Exclusive write access; pair with [`KgStore::commit`] to persist.
    pub fn write(&self) -> GraphWriter<'_> {
        GraphWriter { store: self, graph: self.graph.write().unwrap_or_else(|e| e.into_inner()), pending: Vec::new() }
    }

    fn append(&self, records: &[Record]) -> Result<(), KgError> {
        let Some(log) = &self.log else { return Ok(()) };
        let mut w = log.lock().unwrap_or_else(|e| e.into_inner());
        for r in records {
            let line = serde_json::to_string(r).map_err(persist_err)?;
            w.write_all(line.as_bytes()).map_err(persist_err)?;
            w.write_all(b"\n").map_err(persist_err)?;
        }
        w.flush().map_err(persist_err)
    }

    pub fn upsert_node(&self, node: EntityNode) -> Result<String, KgError> {
        let mut w = self.write();
        let id = w.upsert_node(node)?;
        w.commit()?;
        Ok(id)
    }

    pub fn upsert_edge(&self, edge: RelationEdge) -> Result<String, KgError> {
        let mut w = self.write();
        let id = w.upsert_edge(edge)?;
        w.commit()?;
        Ok(id)
    }
}

/// Write guard that records changed nodes and edges for the append log.
pub struct GraphWriter<'a> {
    store: &'a KgStore,
    graph: RwLockWriteGuard<'a, KnowledgeGraph>,
    pending: Vec<Record>,
}

impl GraphWriter<'_> {
    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn upsert_node(&mut self, node: EntityNode) -> Result<String, KgError> {
        if self.graph.node(&node.node_id) == Some(&node) {
            return Ok(node.node_id);
        }
        let id = self.graph.upsert_node(node.clone())?;
        self.pending.push(Record::Node(node));
        Ok(id)
    }

    pub fn upsert_edge(&mut self, edge: RelationEdge) -> Result<String, KgError> {
        if self.graph.edge(&edge.edge_id) == Some(&edge) {
            return Ok(edge.edge_id);
        }
        let id = self.graph.upsert_edge(edge.clone())?;
        self.pending.push(Record::Edge(edge));
        Ok(id)
    }

    pub fn commit(mut self) -> Result<(), KgError> {
        let pending = std::mem::take(&mut self.pending);
        self.store.append(&pending)
    }
}

impl std::ops::Deref for GraphWriter<'_> {
    type Target = KnowledgeGraph;

    fn deref(&self) -> &KnowledgeGraph {
        &self.graph
    }
}
