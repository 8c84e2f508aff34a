//! Execute-side cache of files already fetched from a gateway.

use std::collections::HashMap;
use std::sync::Mutex;

use captok_core::{CanonicalPath, KeySet, Operation};

use crate::decision::{AccessCheck, Denial};

/// Bytes previously downloaded on an execute node. A hit is only served
/// after the presented token is verified and checked against the path, so
/// an expired or narrower token never reads cached data.
#[derive(Debug, Default)]
pub struct LocalCache {
    files: Mutex<HashMap<CanonicalPath, Vec<u8>>>,
}

impl LocalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, path: CanonicalPath, bytes: Vec<u8>) {
        self.files.lock().unwrap().insert(path, bytes);
    }

    pub fn contains(&self, path: &CanonicalPath) -> bool {
        self.files.lock().unwrap().contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.files.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Ok(Some(bytes))` on an authorized hit, `Ok(None)` on an authorized
    /// miss (go to the gateway), `Err` when the token does not allow the
    /// read.
    pub fn authorize_cached_read(
        &self,
        check: &AccessCheck,
        keys: &KeySet,
        token: &str,
        raw_path: &str,
        client_id: Option<&str>,
        now: i64,
    ) -> Result<Option<Vec<u8>>, Denial> {
        let (_, path) = check.decide(Some(token), Operation::Read, raw_path, client_id, keys, now)?;
        Ok(self.files.lock().unwrap().get(&path).cloned())
    }
}
