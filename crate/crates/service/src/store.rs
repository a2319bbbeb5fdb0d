//! One JSON document per session, replaced atomically on every change.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use preclin_core::config::StudyFile;
use preclin_core::engine::TrialState;
use preclin_core::io::write_atomic;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session record {id}: {reason}")]
    Corrupt { id: String, reason: String },
    #[error("session record {id} has schema version {found}, expected {RECORD_SCHEMA_VERSION}")]
    SchemaVersion { id: String, found: u64 },
    #[error(transparent)]
    Core(#[from] preclin_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at_ms: u64,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub detail: Value,
}

/// A stored reply to a keyed request, returned verbatim on retry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReply {
    /// SHA-256 of the request that produced it.
    pub request: String,
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub study: StudyFile,
    pub trial: TrialState,
    /// Append-only.
    pub audit: Vec<AuditEntry>,
    #[serde(default)]
    pub replies: BTreeMap<String, StoredReply>,
}

impl SessionRecord {
    pub fn new(session_id: String, study: StudyFile, trial: TrialState) -> Self {
        let now = now_ms();
        SessionRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            session_id,
            created_at_ms: now,
            updated_at_ms: now,
            study,
            trial,
            audit: Vec::new(),
            replies: BTreeMap::new(),
        }
    }

    pub fn log(&mut self, action: &str, key: Option<&str>, detail: Value) {
        self.updated_at_ms = now_ms();
        self.audit.push(AuditEntry {
            at_ms: self.updated_at_ms,
            action: action.into(),
            idempotency_key: key.map(str::to_owned),
            detail,
        });
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Session ids are generated here, so anything else is simply unknown.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit() || b == b'-')
}

pub struct SessionStore {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    /// Create-request idempotency key -> session id.
    create_keys: Mutex<HashMap<String, String>>,
}

impl SessionStore {
    /// Opens (creating if needed) the store at `dir` and indexes the keyed creates.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let store = SessionStore { dir, locks: Mutex::default(), create_keys: Mutex::default() };
        let mut keys = HashMap::new();
        for entry in std::fs::read_dir(&store.dir)? {
            let path = entry?.path();
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if path.extension().is_some_and(|e| e == "json") && valid_id(id) {
                let rec = store.read(&path, id)?;
                for a in rec.audit.iter().filter(|a| a.action == "create") {
                    if let Some(k) = &a.idempotency_key {
                        keys.insert(k.clone(), rec.session_id.clone());
                    }
                }
            }
        }
        *store.create_keys.lock().unwrap() = keys;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn read(&self, path: &Path, id: &str) -> Result<SessionRecord, StoreError> {
        let text = std::fs::read_to_string(path)?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| StoreError::Corrupt { id: id.into(), reason: e.to_string() })?;
        let found = value.get("schema_version").and_then(Value::as_u64).unwrap_or(0);
        if found != RECORD_SCHEMA_VERSION as u64 {
            return Err(StoreError::SchemaVersion { id: id.into(), found });
        }
        serde_json::from_value(value).map_err(|e| StoreError::Corrupt { id: id.into(), reason: e.to_string() })
    }

    pub fn load(&self, id: &str) -> Result<Option<SessionRecord>, StoreError> {
        if !valid_id(id) {
            return Ok(None);
        }
        let path = self.path(id);
        if !path.exists() {
            return Ok(None);
        }
        self.read(&path, id).map(Some)
    }

    pub fn save(&self, rec: &SessionRecord) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(rec).map_err(|e| StoreError::Corrupt {
            id: rec.session_id.clone(),
            reason: e.to_string(),
        })?;
        write_atomic(&self.path(&rec.session_id), &bytes)?;
        Ok(())
    }

    /// The writer lock for `name` (a session id, or a create key).
    pub fn lock(&self, name: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.lock().unwrap().entry(name.to_owned()).or_default().clone()
    }

    pub fn session_for_key(&self, key: &str) -> Option<String> {
        self.create_keys.lock().unwrap().get(key).cloned()
    }

    pub fn remember_key(&self, key: &str, id: &str) {
        self.create_keys.lock().unwrap().insert(key.to_owned(), id.to_owned());
    }
}
