//! File-backed persistence.
//!
//! Layout under the data directory:
//!
//! - `sessions/{id}.json`: one document per session, replaced atomically
//! - `events/{session_id}.jsonl`: append-only action log
//! - `images/*.png`: written by the image gateway

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{Session, SessionId, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0} not found")]
    NotFound(SessionId),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaMismatch { found: u64, expected: u32 },
    #[error("corrupt session document: {0}")]
    CorruptDocument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize)]
struct StoredSessionRef<'a> {
    schema_version: u32,
    session: &'a Session,
}

#[derive(Debug, Deserialize)]
struct StoredSession {
    schema_version: u64,
    session: Session,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    SessionCreated,
    QuestionsRequested,
    QuestionSelected,
    AnswersRequested,
    AnswersSelected,
    GenerationStarted,
    GenerationFinished,
    StepConfirmed,
    Reverted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub ts: DateTime<Utc>,
    pub session_id: SessionId,
    pub action: EventAction,
    pub payload: serde_json::Value,
}

impl EventRecord {
    pub fn now(session_id: SessionId, action: EventAction, payload: serde_json::Value) -> Self {
        Self {
            ts: Utc::now(),
            session_id,
            action,
            payload,
        }
    }
}

#[derive(Debug)]
pub struct SessionStore {
    data_dir: PathBuf,
    last_event_ts: Mutex<HashMap<SessionId, DateTime<Utc>>>,
}

impl SessionStore {
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Self {
            data_dir: data_dir.into(),
            last_event_ts: Mutex::new(HashMap::new()),
        };
        for dir in [store.sessions_dir(), store.events_dir(), store.images_dir()] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(store)
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.data_dir.join("sessions")
    }

    pub fn events_dir(&self) -> PathBuf {
        self.data_dir.join("events")
    }

    pub fn images_dir(&self) -> PathBuf {
        self.data_dir.join("images")
    }

    /// `None` for ids that could escape the sessions directory.
    pub fn session_path(&self, id: &SessionId) -> Option<PathBuf> {
        safe_name(id.as_str()).then(|| self.sessions_dir().join(format!("{id}.json")))
    }

    fn event_path(&self, id: &SessionId) -> Option<PathBuf> {
        safe_name(id.as_str()).then(|| self.events_dir().join(format!("{id}.jsonl")))
    }

    pub fn save(&self, session: &Session) -> Result<PathBuf, StoreError> {
        self.save_with_hook(session, |_| Ok(()))
    }

    /// Like [`save`](Self::save), running `before_rename` after the temporary
    /// file is fully written and synced but before it replaces the live
    /// document. An error from the hook aborts the save and leaves the prior
    /// document in place.
    pub fn save_with_hook<F>(
        &self,
        session: &Session,
        before_rename: F,
    ) -> Result<PathBuf, StoreError>
    where
        F: FnOnce(&Path) -> io::Result<()>,
    {
        let path = self
            .session_path(&session.id)
            .ok_or_else(|| StoreError::NotFound(session.id.clone()))?;
        let doc = StoredSessionRef {
            schema_version: SCHEMA_VERSION,
            session,
        };
        let bytes = serde_json::to_vec_pretty(&doc)
            .map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
        write_atomic(&path, &bytes, before_rename)?;
        Ok(path)
    }

    /// Raw bytes of the stored document.
    pub fn read_raw(&self, id: &SessionId) -> Result<Vec<u8>, StoreError> {
        let path = self
            .session_path(id)
            .ok_or_else(|| StoreError::NotFound(id.clone()))?;
        match fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(id.clone())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Load and fully re-validate a session.
    pub fn load(&self, id: &SessionId) -> Result<Session, StoreError> {
        let bytes = self.read_raw(id)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| StoreError::CorruptDocument("missing schema_version".into()))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(StoreError::SchemaMismatch {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        let stored: StoredSession = serde_json::from_value(value)
            .map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
        debug_assert_eq!(stored.schema_version, u64::from(SCHEMA_VERSION));
        let session = stored.session;
        if u64::from(session.schema_version) != version {
            return Err(StoreError::SchemaMismatch {
                found: session.schema_version.into(),
                expected: SCHEMA_VERSION,
            });
        }
        if &session.id != id {
            return Err(StoreError::CorruptDocument(format!(
                "document holds session {}",
                session.id
            )));
        }
        session
            .validate()
            .map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
        Ok(session)
    }

    pub fn delete(&self, id: &SessionId) -> Result<(), StoreError> {
        let path = self
            .session_path(id)
            .ok_or_else(|| StoreError::NotFound(id.clone()))?;
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(id.clone())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Append one line to the session's event log. Timestamps are clamped so
    /// they never go backwards within a session.
    pub fn append_event(&self, record: &EventRecord) -> Result<(), StoreError> {
        let path = self
            .event_path(&record.session_id)
            .ok_or_else(|| StoreError::NotFound(record.session_id.clone()))?;
        let mut record = record.clone();
        {
            let mut last = self.last_event_ts.lock().expect("event clock poisoned");
            let entry = last.entry(record.session_id.clone()).or_insert(record.ts);
            if record.ts < *entry {
                record.ts = *entry;
            }
            *entry = record.ts;
        }
        let mut line = serde_json::to_string(&record)
            .map_err(|e| StoreError::CorruptDocument(e.to_string()))?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        Ok(())
    }

    /// All events recorded for a session, oldest first. Missing log = empty.
    pub fn read_events(&self, id: &SessionId) -> Result<Vec<EventRecord>, StoreError> {
        let path = self
            .event_path(id)
            .ok_or_else(|| StoreError::NotFound(id.clone()))?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| StoreError::CorruptDocument(e.to_string()))
            })
            .collect()
    }
}

fn safe_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Write `bytes` to a temp file next to `path`, fsync, then rename over it.
pub fn write_atomic<F>(path: &Path, bytes: &[u8], before_rename: F) -> Result<(), StoreError>
where
    F: FnOnce(&Path) -> io::Result<()>,
{
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
    tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
    before_rename(tmp.path()).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::StepId;

    fn store() -> (tempfile::TempDir, SessionStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        (dir, store)
    }

    #[test]
    fn save_then_load_round_trips() {
        let (_d, store) = store();
        let s = Session::create("a welsh corgi").unwrap();
        store.save(&s).unwrap();
        assert_eq!(store.load(&s.id).unwrap(), s);
        // Overwrite
        let s2 = s
            .select_question(StepId(1), "what mood?", crate::QuestionSource::User)
            .unwrap();
        store.save(&s2).unwrap();
        assert_eq!(store.load(&s.id).unwrap(), s2);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let (_d, store) = store();
        let id = SessionId("nope".into());
        assert!(matches!(store.load(&id), Err(StoreError::NotFound(_))));
        let evil = SessionId("../etc/passwd".into());
        assert!(matches!(store.load(&evil), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn future_schema_rejected() {
        let (_d, store) = store();
        let s = Session::create("x").unwrap();
        let path = store.save(&s).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        doc["schema_version"] = 999.into();
        fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
        assert!(matches!(
            store.load(&s.id),
            Err(StoreError::SchemaMismatch {
                found: 999,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let (_d, store) = store();
        let s = Session::create("x").unwrap();
        let path = store.save(&s).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            store.load(&s.id),
            Err(StoreError::CorruptDocument(_))
        ));
    }

    #[test]
    fn invariant_breaking_document_is_corrupt() {
        let (_d, store) = store();
        let s = Session::create("x").unwrap();
        let path = store.save(&s).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        doc["session"]["active_step_id"] = 7.into();
        fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
        assert!(matches!(
            store.load(&s.id),
            Err(StoreError::CorruptDocument(_))
        ));
    }

    #[test]
    fn interrupted_save_keeps_prior_document() {
        let (_d, store) = store();
        let s = Session::create("a welsh corgi").unwrap();
        store.save(&s).unwrap();
        let before = store.read_raw(&s.id).unwrap();
        let s2 = s
            .select_question(StepId(1), "what mood?", crate::QuestionSource::User)
            .unwrap();
        let err = store
            .save_with_hook(&s2, |tmp| {
                assert!(tmp.exists());
                Err(io::Error::other("killed"))
            })
            .unwrap_err();
        assert!(matches!(err, StoreError::Io { .. }));
        assert_eq!(store.read_raw(&s.id).unwrap(), before);
        assert_eq!(store.load(&s.id).unwrap(), s);
        let leftovers = fs::read_dir(store.sessions_dir()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn events_append_as_lines() {
        let (_d, store) = store();
        let id = SessionId("abc".into());
        for action in [
            EventAction::SessionCreated,
            EventAction::QuestionsRequested,
            EventAction::QuestionSelected,
        ] {
            store
                .append_event(&EventRecord::now(id.clone(), action, serde_json::json!({})))
                .unwrap();
        }
        let text = fs::read_to_string(store.events_dir().join("abc.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 3);
        let events = store.read_events(&id).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[1].action, EventAction::QuestionsRequested);
    }

    #[test]
    fn event_timestamps_never_decrease() {
        let (_d, store) = store();
        let id = SessionId("abc".into());
        let late = EventRecord::now(
            id.clone(),
            EventAction::SessionCreated,
            serde_json::json!({}),
        );
        let mut early = late.clone();
        early.ts = late.ts - chrono::Duration::seconds(5);
        store.append_event(&late).unwrap();
        store.append_event(&early).unwrap();
        let events = store.read_events(&id).unwrap();
        assert!(events[1].ts >= events[0].ts);
    }

    #[test]
    fn events_outlive_session() {
        let (_d, store) = store();
        let s = Session::create("x").unwrap();
        store.save(&s).unwrap();
        store.delete(&s.id).unwrap();
        store
            .append_event(&EventRecord::now(
                s.id.clone(),
                EventAction::Reverted,
                serde_json::json!({}),
            ))
            .unwrap();
        assert_eq!(store.read_events(&s.id).unwrap().len(), 1);
    }
}
