//! Refresh-grant storage.
//!
//! Records are keyed by the SHA-256 digest of the refresh handle, so the
//! store never holds a usable handle.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use captok_core::Scope;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("refresh store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("refresh store is corrupt: {0}")]
    Corrupt(String),
    #[error("refresh store `{0}` is locked by another writer")]
    Locked(PathBuf),
}

/// Digest under which a handle is stored.
pub fn handle_digest(handle: &str) -> String {
    URL_SAFE_NO_PAD.encode(Sha256::digest(handle.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshRecord {
    pub handle_digest: String,
    pub sub: String,
    pub groups: Vec<String>,
    pub scopes: Scope,
    pub audiences: Vec<String>,
    pub max_access_lifetime: i64,
    pub issued_at: i64,
    pub expires_at: i64,
    #[serde(default)]
    pub revoked: bool,
}

pub trait RefreshStore: Send + Sync {
    fn insert(&self, record: RefreshRecord) -> Result<(), StoreError>;

    fn get(&self, digest: &str) -> Result<Option<RefreshRecord>, StoreError>;

    /// Marks the record revoked. Returns whether a record existed.
    fn revoke(&self, digest: &str) -> Result<bool, StoreError>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    records: RwLock<HashMap<String, RefreshRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl RefreshStore for MemoryStore {
    fn insert(&self, record: RefreshRecord) -> Result<(), StoreError> {
        self.records
            .write()
            .unwrap()
            .insert(record.handle_digest.clone(), record);
        Ok(())
    }

    fn get(&self, digest: &str) -> Result<Option<RefreshRecord>, StoreError> {
        Ok(self.records.read().unwrap().get(digest).cloned())
    }

    fn revoke(&self, digest: &str) -> Result<bool, StoreError> {
        Ok(match self.records.write().unwrap().get_mut(digest) {
            Some(r) => {
                r.revoked = true;
                true
            }
            None => false,
        })
    }

    fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }
}

/// A JSON file rewritten atomically on every change. The process holds an
/// exclusive lock on `<path>.lock` for as long as the store is open.
#[derive(Debug)]
pub struct JsonFileStore {
    path: PathBuf,
    records: RwLock<HashMap<String, RefreshRecord>>,
    _lock: File,
}

impl JsonFileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let lock_path = path.with_extension("lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(path)),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let records = match fs::read(&path) {
            Ok(bytes) => {
                let list: Vec<RefreshRecord> = serde_json::from_slice(&bytes)
                    .map_err(|e| StoreError::Corrupt(e.to_string()))?;
                list.into_iter()
                    .map(|r| (r.handle_digest.clone(), r))
                    .collect()
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(JsonFileStore {
            path,
            records: RwLock::new(records),
            _lock: lock,
        })
    }

    fn persist(&self, records: &HashMap<String, RefreshRecord>) -> Result<(), StoreError> {
        let mut list: Vec<&RefreshRecord> = records.values().collect();
        list.sort_by(|a, b| a.handle_digest.cmp(&b.handle_digest));
        let json = serde_json::to_vec_pretty(&list).expect("records serialize");
        let tmp = self.path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&json)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

impl RefreshStore for JsonFileStore {
    fn insert(&self, record: RefreshRecord) -> Result<(), StoreError> {
        let mut records = self.records.write().unwrap();
        records.insert(record.handle_digest.clone(), record);
        self.persist(&records)
    }

    fn get(&self, digest: &str) -> Result<Option<RefreshRecord>, StoreError> {
        Ok(self.records.read().unwrap().get(digest).cloned())
    }

    fn revoke(&self, digest: &str) -> Result<bool, StoreError> {
        let mut records = self.records.write().unwrap();
        let Some(r) = records.get_mut(digest) else {
            return Ok(false);
        };
        if !r.revoked {
            r.revoked = true;
            self.persist(&records)?;
        }
        Ok(true)
    }

    fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }
}
