use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Allow,
    Deny,
}

/// One line of the audit log; every request produces exactly one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub ts: i64,
    pub jti: Option<String>,
    pub sub: Option<String>,
    pub op: String,
    pub path: String,
    pub client_id: Option<String>,
    pub decision: Verdict,
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The presented bearer token, kept so decisions can be replayed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

/// Append-only JSON-lines sink, optionally mirrored in memory.
#[derive(Debug, Default)]
pub struct AuditLog {
    file: Option<Mutex<File>>,
    memory: Option<Mutex<Vec<AuditRecord>>>,
}

impl AuditLog {
    pub fn open(path: Option<&Path>, keep_in_memory: bool) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new().create(true).append(true).open(p)?,
            )),
            None => None,
        };
        Ok(AuditLog {
            file,
            memory: keep_in_memory.then(|| Mutex::new(Vec::new())),
        })
    }

    pub fn append(&self, record: AuditRecord) {
        if let Some(file) = &self.file {
            let mut line = serde_json::to_vec(&record).expect("audit record serializes");
            line.push(b'\n');
            let mut f = file.lock().unwrap();
            if let Err(e) = f.write_all(&line) {
                tracing::error!(error = %e, "audit log write failed");
            }
        }
        if let Some(mem) = &self.memory {
            mem.lock().unwrap().push(record);
        }
    }

    /// In-memory copy, if mirroring was enabled.
    pub fn records(&self) -> Vec<AuditRecord> {
        self.memory
            .as_ref()
            .map(|m| m.lock().unwrap().clone())
            .unwrap_or_default()
    }
}

pub fn read_audit_log(path: impl AsRef<Path>) -> std::io::Result<Vec<AuditRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
