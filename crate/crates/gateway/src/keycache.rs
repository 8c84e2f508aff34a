use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::{Arc, RwLock};

use captok_core::KeySet;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

/// Key set plus the time it was obtained from the issuer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySnapshot {
    pub keys: KeySet,
    pub fetched_at: i64,
}

/// Read-mostly cache of the issuer's public keys. Readers take a cheap
/// `Arc` clone of the current snapshot; a refetch swaps the whole snapshot.
#[derive(Debug)]
pub struct KeyCache {
    current: RwLock<Option<Arc<KeySnapshot>>>,
    disk: Option<PathBuf>,
    last_attempt: AtomicI64,
    stale_warned: AtomicBool,
}

impl KeyCache {
    /// Opens the cache, seeding it from `disk` when a readable copy exists.
    pub fn open(disk: Option<PathBuf>) -> Self {
        let seeded = disk.as_ref().and_then(|p| {
            let bytes = std::fs::read(p).ok()?;
            match serde_json::from_slice::<KeySnapshot>(&bytes) {
                Ok(s) => {
                    info!(path = %p.display(), keys = s.keys.len(), "loaded key cache from disk");
                    Some(Arc::new(s))
                }
                Err(e) => {
                    warn!(path = %p.display(), error = %e, "ignoring unreadable key cache");
                    None
                }
            }
        });
        KeyCache {
            current: RwLock::new(seeded),
            disk,
            last_attempt: AtomicI64::new(i64::MIN),
            stale_warned: AtomicBool::new(false),
        }
    }

    pub fn snapshot(&self) -> Option<Arc<KeySnapshot>> {
        self.current.read().unwrap().clone()
    }

    pub fn install(&self, keys: KeySet, now: i64) {
        let snap = Arc::new(KeySnapshot {
            keys,
            fetched_at: now,
        });
        if let Some(path) = &self.disk {
            if let Err(e) = persist(path, &snap) {
                warn!(path = %path.display(), error = %e, "could not persist key cache");
            }
        }
        *self.current.write().unwrap() = Some(snap);
        self.stale_warned.store(false, Ordering::Relaxed);
    }

    /// Records an on-demand fetch attempt; returns false if one happened less than
    /// `gap` seconds ago.
    pub fn try_begin_fetch(&self, now: i64, gap: i64) -> bool {
        let last = self.last_attempt.load(Ordering::Relaxed);
        if last != i64::MIN && now - last < gap {
            return false;
        }
        self.last_attempt
            .compare_exchange(last, now, Ordering::AcqRel, Ordering::Relaxed)
            .is_ok()
    }

    /// True (and logs once per snapshot) when the snapshot is older than
    /// `max_age`.
    pub fn check_stale(&self, snap: &KeySnapshot, now: i64, max_age: i64) -> bool {
        let age = now - snap.fetched_at;
        if age <= max_age {
            return false;
        }
        if !self.stale_warned.swap(true, Ordering::Relaxed) {
            warn!(age, max_age, "serving with a stale issuer key set");
        }
        true
    }
}

fn persist(path: &PathBuf, snap: &KeySnapshot) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(snap)?)?;
    std::fs::rename(tmp, path)
}
