//! Chat sessions, kept in memory and mirrored to an append-only log.
//!
//! Each session has its own file `<dir>/<id>.jsonl`. The first line records
//! creation; each later line records one finished turn with its events. A
//! session's turns run one at a time under its own lock, so appends to a
//! file never interleave.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex};

use meff_core::dialogue::Message;
use meff_core::router::ExpertId;
use meff_core::turn::ChatEvent;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session id `{0}`: use 1 to 64 letters, digits, `-` or `_`")]
    InvalidId(String),
    #[error("session log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub created_at: String,
    /// Expert that answered the latest turn.
    pub expert: Option<ExpertId>,
    /// Alternating human and assistant messages of completed turns.
    pub history: Vec<Message>,
    pub event_log: Vec<ChatEvent>,
    /// Turns attempted, including failed ones.
    pub turns: u64,
}

impl Session {
    fn new(id: String, created_at: String) -> Self {
        Session {
            id,
            created_at,
            expert: None,
            history: Vec::new(),
            event_log: Vec::new(),
            turns: 0,
        }
    }

    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Created { created_at, .. } => self.created_at = created_at,
            LogEntry::Turn {
                user,
                assistant,
                expert,
                events,
            } => {
                self.turns += 1;
                if let Some(answer) = assistant {
                    self.history.push(Message::human(user));
                    self.history.push(Message::assistant(answer));
                }
                self.expert = expert.or(self.expert);
                self.event_log.extend(events);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
enum LogEntry {
    Created {
        id: String,
        created_at: String,
    },
    Turn {
        user: String,
        /// Absent when the turn failed.
        assistant: Option<String>,
        expert: Option<ExpertId>,
        events: Vec<ChatEvent>,
    },
}

pub fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub type SessionHandle = Arc<Mutex<Session>>;

pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: StdMutex<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            dir: None,
            sessions: StdMutex::new(HashMap::new()),
        }
    }

    /// Opens a log directory, creating it if needed, and replays every
    /// session found there. Unreadable lines, such as a line cut short by a
    /// crash, are skipped.
    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        let io = |source| SessionError::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_id(s)) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|source| SessionError::Io {
                path: path.clone(),
                source,
            })?;
            let mut session = Session::new(id.to_string(), String::new());
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                match serde_json::from_str::<LogEntry>(line) {
                    Ok(entry) => session.apply(entry),
                    Err(e) => tracing::warn!(path = %path.display(), line = n + 1, error = %e, "skipping session log line"),
                }
            }
            sessions.insert(id.to_string(), Arc::new(Mutex::new(session)));
        }
        tracing::info!(dir = %dir.display(), sessions = sessions.len(), "loaded sessions");
        Ok(SessionStore {
            dir: Some(dir.to_path_buf()),
            sessions: StdMutex::new(sessions),
        })
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, entry: &LogEntry) -> Result<(), SessionError> {
        let Some(path) = self.path(id) else { return Ok(()) };
        let io = |source| SessionError::Io {
            path: path.clone(),
            source,
        };
        let mut line = serde_json::to_string(entry).expect("log entries serialize");
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        file.write_all(line.as_bytes()).map_err(io)?;
        file.flush().map_err(io)
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().expect("session map lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The session with `id`, created if new; a fresh id when `id` is `None`.
    pub fn get_or_create(&self, id: Option<&str>) -> Result<SessionHandle, SessionError> {
        let id = match id {
            Some(id) if !valid_id(id) => return Err(SessionError::InvalidId(id.to_string())),
            Some(id) => id.to_string(),
            None => uuid::Uuid::new_v4().simple().to_string(),
        };
        let mut map = self.sessions.lock().expect("session map lock");
        if let Some(s) = map.get(&id) {
            return Ok(s.clone());
        }
        let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        self.append(
            &id,
            &LogEntry::Created {
                id: id.clone(),
                created_at: created_at.clone(),
            },
        )?;
        let handle = Arc::new(Mutex::new(Session::new(id.clone(), created_at)));
        map.insert(id, handle.clone());
        Ok(handle)
    }

    /// Records a finished turn: persisted first, then applied in memory.
    pub fn record_turn(
        &self,
        session: &mut Session,
        user: &str,
        assistant: Option<&str>,
        expert: Option<ExpertId>,
        events: Vec<ChatEvent>,
    ) -> Result<(), SessionError> {
        let entry = LogEntry::Turn {
            user: user.to_string(),
            assistant: assistant.map(str::to_string),
            expert,
            events,
        };
        self.append(&session.id, &entry)?;
        session.apply(entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use meff_core::turn::EventPayload;

    #[tokio::test]
    async fn sessions_survive_a_restart() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let handle = store.get_or_create(Some("s-1")).unwrap();
        {
            let mut s = handle.lock().await;
            let ev = ChatEvent {
                seq: 0,
                payload: EventPayload::Token { text: "好".into() },
            };
            store.record_turn(&mut s, "你好", Some("好"), Some(ExpertId::Consulting), vec![ev]).unwrap();
            store.record_turn(&mut s, "再见", None, None, vec![]).unwrap();
        }
        let before = handle.lock().await.clone();
        assert_eq!(before.history.len(), 2);
        assert_eq!(before.turns, 2);

        let reopened = SessionStore::open(dir.path()).unwrap();
        let after = reopened.get("s-1").unwrap().lock().await.clone();
        assert_eq!(after, before);
    }

    #[test]
    fn ids_are_restricted() {
        let store = SessionStore::in_memory();
        assert!(store.get_or_create(Some("../etc")).is_err());
        assert!(store.get_or_create(Some("")).is_err());
        let a = store.get_or_create(None).unwrap();
        let b = store.get_or_create(None).unwrap();
        assert!(!Arc::ptr_eq(&a, &b));
    }
}
