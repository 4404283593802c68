//! Per-request trace events and the append-only trace log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::digest::{digest_str, short_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Decompose,
    KgMatch,
    Traverse,
    Rewrite,
    VectorSearch,
    Fuse,
    Naive,
    Refine,
    Condense,
    Followup,
    Judge,
}

impl Step {
    pub const PIPELINE: [Step; 10] = [
        Step::Decompose,
        Step::KgMatch,
        Step::Traverse,
        Step::Rewrite,
        Step::VectorSearch,
        Step::Fuse,
        Step::Naive,
        Step::Refine,
        Step::Condense,
        Step::Followup,
    ];
}

/// Wall-clock source. `Fixed` makes timestamps constant and durations zero so
/// that traces are reproducible byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(u64),
}

impl Clock {
    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::System => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
            Clock::Fixed(t) => *t,
        }
    }

    pub fn elapsed_ms(&self, since: Instant) -> f64 {
        match self {
            Clock::System => since.elapsed().as_secs_f64() * 1000.0,
            Clock::Fixed(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub trace_id: String,
    pub seq: usize,
    pub step: Step,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub input_digest: String,
    pub output_digest: String,
    pub duration_ms: f64,
    pub timestamp: u64,
    #[serde(default)]
    pub detail: serde_json::Value,
}

/// Collects the events of one request in execution order.
#[derive(Debug, Clone)]
pub struct Trace {
    pub trace_id: String,
    clock: Clock,
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(trace_id: impl Into<String>, clock: Clock) -> Self {
        Self { trace_id: trace_id.into(), clock, events: Vec::new() }
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn record(
        &mut self,
        step: Step,
        template_id: Option<&str>,
        input: &str,
        output: &str,
        started: Instant,
        detail: serde_json::Value,
    ) {
        self.events.push(TraceEvent {
            trace_id: self.trace_id.clone(),
            seq: self.events.len(),
            step,
            template_id: template_id.map(str::to_string),
            input_digest: digest_str(input),
            output_digest: digest_str(output),
            duration_ms: self.clock.elapsed_ms(started),
            timestamp: self.clock.now_ms(),
            detail,
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

/// Append-only store of trace events keyed by trace id, optionally backed by
/// a line-delimited JSON file.
pub struct TraceLog {
    inner: Mutex<LogInner>,
    next: AtomicU64,
}

struct LogInner {
    by_id: BTreeMap<String, Vec<TraceEvent>>,
    file: Option<BufWriter<File>>,
}

impl TraceLog {
    pub fn in_memory() -> Self {
        Self { inner: Mutex::new(LogInner { by_id: BTreeMap::new(), file: None }), next: AtomicU64::new(0) }
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut by_id: BTreeMap<String, Vec<TraceEvent>> = BTreeMap::new();
        if path.exists() {
            for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let ev: TraceEvent = serde_json::from_str(line).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                by_id.entry(ev.trace_id.clone()).or_default().push(ev);
            }
        }
        let next = by_id.len() as u64;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner: Mutex::new(LogInner { by_id, file: Some(BufWriter::new(file)) }), next: AtomicU64::new(next) })
    }

    /// A fresh trace id derived from a log-wide sequence number and the request text.
    pub fn next_id(&self, request: &str) -> String {
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        format!("t-{}", short_hash(&[&n.to_le_bytes(), request.as_bytes()], 16))
    }

    pub fn append(&self, events: &[TraceEvent]) -> std::io::Result<()> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = inner.file.as_mut() {
            for ev in events {
                serde_json::to_writer(&mut *f, ev)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
        }
        for ev in events {
            inner.by_id.entry(ev.trace_id.clone()).or_default().push(ev.clone());
        }
        Ok(())
    }

    pub fn get(&self, trace_id: &str) -> Option<Vec<TraceEvent>> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        inner.by_id.get(trace_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
