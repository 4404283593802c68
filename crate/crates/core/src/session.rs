//! Chat sessions with append-only turn history.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::short_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    /// Trace id of the envelope an assistant turn came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_ref: Option<String>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into(), envelope_ref: None }
    }

    pub fn assistant(text: impl Into<String>, envelope_ref: Option<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), envelope_ref }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub turns: Vec<Turn>,
    pub created: u64,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("turn role {got:?} breaks user/assistant alternation")]
    OutOfOrder { got: Role },
    #[error("session persistence: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Created { session_id: String, created: u64 },
    Turn { session_id: String, turn: Turn },
}

/// Session store. Each session also has a turn lock so that concurrent
/// requests on one session are handled one at a time.
pub struct SessionStore {
    inner: Mutex<Inner>,
}

struct Inner {
    sessions: BTreeMap<String, ChatSession>,
    locks: BTreeMap<String, Arc<Mutex<()>>>,
    file: Option<BufWriter<File>>,
    created_count: u64,
}

impl Inner {
    fn write(&mut self, rec: &Record) -> std::io::Result<()> {
        if let Some(f) = self.file.as_mut() {
            serde_json::to_writer(&mut *f, rec)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        Ok(())
    }
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                sessions: BTreeMap::new(),
                locks: BTreeMap::new(),
                file: None,
                created_count: 0,
            }),
        }
    }

    pub fn open(path: &Path) -> Result<Self, SessionError> {
        let mut sessions: BTreeMap<String, ChatSession> = BTreeMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
                let rec: Record =
                    serde_json::from_str(line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                match rec {
                    Record::Created { session_id, created } => {
                        sessions.insert(session_id.clone(), ChatSession { session_id, turns: Vec::new(), created });
                    }
                    Record::Turn { session_id, turn } => {
                        if let Some(s) = sessions.get_mut(&session_id) {
                            s.turns.push(turn);
                        }
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let created_count = sessions.len() as u64;
        Ok(Self {
            inner: Mutex::new(Inner {
                sessions,
                locks: BTreeMap::new(),
                file: Some(BufWriter::new(file)),
                created_count,
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create(&self, now: u64) -> Result<String, SessionError> {
        let mut inner = self.lock();
        let n = inner.created_count;
        inner.created_count += 1;
        let session_id = format!("s-{}", short_hash(&[b"session", &n.to_le_bytes()], 16));
        inner.write(&Record::Created { session_id: session_id.clone(), created: now })?;
        inner.sessions.insert(
            session_id.clone(),
            ChatSession { session_id: session_id.clone(), turns: Vec::new(), created: now },
        );
        Ok(session_id)
    }

    pub fn get(&self, session_id: &str) -> Option<ChatSession> {
        self.lock().sessions.get(session_id).cloned()
    }

    pub fn contains(&self, session_id: &str) -> bool {
        self.lock().sessions.contains_key(session_id)
    }

    /// Lock serializing turn handling for one session.
    pub fn turn_lock(&self, session_id: &str) -> Arc<Mutex<()>> {
        self.lock().locks.entry(session_id.to_string()).or_default().clone()
    }

    pub fn append(&self, session_id: &str, turn: Turn) -> Result<(), SessionError> {
        let mut inner = self.lock();
        let session =
            inner.sessions.get(session_id).ok_or_else(|| SessionError::UnknownSession(session_id.to_string()))?;
        let expected = match session.turns.last() {
            None | Some(Turn { role: Role::Assistant, .. }) => Role::User,
            Some(_) => Role::Assistant,
        };
        if turn.role != expected {
            return Err(SessionError::OutOfOrder { got: turn.role });
        }
        inner.write(&Record::Turn { session_id: session_id.to_string(), turn: turn.clone() })?;
        inner.sessions.get_mut(session_id).expect("checked above").turns.push(turn);
        Ok(())
    }

    /// The last `n` turns of a session, oldest first.
    pub fn history(&self, session_id: &str, n: usize) -> Vec<Turn> {
        let inner = self.lock();
        inner.sessions.get(session_id).map(|s| s.turns[s.turns.len().saturating_sub(n)..].to_vec()).unwrap_or_default()
    }
}
