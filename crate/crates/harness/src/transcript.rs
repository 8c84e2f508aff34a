//! Record of every token-bearing message that crosses a domain boundary.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A channel between two of the three domains (submit, execute, data) or
/// to the issuer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Edge {
    #[serde(rename = "submit->issuer")]
    SubmitIssuer,
    #[serde(rename = "submit->execute")]
    SubmitExecute,
    #[serde(rename = "execute->data")]
    ExecuteData,
    #[serde(rename = "execute->issuer")]
    ExecuteIssuer,
    #[serde(rename = "data->issuer")]
    DataIssuer,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Edge::SubmitIssuer => "submit->issuer",
            Edge::SubmitExecute => "submit->execute",
            Edge::ExecuteData => "execute->data",
            Edge::ExecuteIssuer => "execute->issuer",
            Edge::DataIssuer => "data->issuer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Request,
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub t: i64,
    pub edge: Edge,
    pub direction: Direction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job: Option<String>,
    pub kind: String,
    pub body: serde_json::Value,
}

/// A refresh handle found outside the submit->issuer channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leak {
    pub seq: u64,
    pub edge: Edge,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub messages: u64,
    pub by_edge: BTreeMap<String, u64>,
    /// SHA-256 over every serialized message, in order.
    pub digest: String,
    pub handles_tracked: usize,
    pub leaks: Vec<Leak>,
}

#[derive(Debug, Default)]
struct Inner {
    seq: u64,
    by_edge: BTreeMap<Edge, u64>,
    hasher: Sha256,
    messages: Option<Vec<Message>>,
    lines: Option<Vec<String>>,
    handles: Vec<String>,
    leaks: Vec<Leak>,
}

/// Collector shared by every recording wrapper. Appends are serialized;
/// each message is scanned for known refresh handles as it arrives.
#[derive(Debug, Default)]
pub struct Transcript {
    inner: Mutex<Inner>,
}

impl Transcript {
    pub fn new(keep_messages: bool) -> Self {
        Transcript {
            inner: Mutex::new(Inner {
                messages: keep_messages.then(Vec::new),
                lines: keep_messages.then(Vec::new),
                ..Inner::default()
            }),
        }
    }

    /// Starts watching for `handle` in every later message.
    pub fn track_handle(&self, handle: &str) {
        let mut inner = self.inner.lock().unwrap();
        if !inner.handles.iter().any(|h| h == handle) {
            inner.handles.push(handle.to_owned());
        }
    }

    pub fn record(
        &self,
        t: i64,
        edge: Edge,
        direction: Direction,
        job: Option<&str>,
        kind: &str,
        body: serde_json::Value,
    ) {
        let mut inner = self.inner.lock().unwrap();
        inner.seq += 1;
        let msg = Message {
            seq: inner.seq,
            t,
            edge,
            direction,
            job: job.map(str::to_owned),
            kind: kind.to_owned(),
            body,
        };
        let line = serde_json::to_string(&msg).expect("message serializes");
        inner.hasher.update(line.as_bytes());
        inner.hasher.update(b"\n");
        *inner.by_edge.entry(edge).or_default() += 1;
        if edge != Edge::SubmitIssuer && inner.handles.iter().any(|h| line.contains(h.as_str())) {
            let leak = Leak {
                seq: msg.seq,
                edge,
                kind: msg.kind.clone(),
            };
            inner.leaks.push(leak);
        }
        if let Some(lines) = inner.lines.as_mut() {
            lines.push(line);
        }
        if let Some(messages) = inner.messages.as_mut() {
            messages.push(msg);
        }
    }

    pub fn handles(&self) -> Vec<String> {
        self.inner.lock().unwrap().handles.clone()
    }

    /// Stored messages (empty unless kept).
    pub fn messages(&self) -> Vec<Message> {
        self.inner.lock().unwrap().messages.clone().unwrap_or_default()
    }

    /// Stored messages as JSON lines (empty unless kept).
    pub fn to_json_lines(&self) -> String {
        let inner = self.inner.lock().unwrap();
        let mut out = String::new();
        for line in inner.lines.iter().flatten() {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> TranscriptSummary {
        let inner = self.inner.lock().unwrap();
        TranscriptSummary {
            messages: inner.seq,
            by_edge: inner
                .by_edge
                .iter()
                .map(|(e, n)| (e.to_string(), *n))
                .collect(),
            digest: format!("{:x}", inner.hasher.clone().finalize()),
            handles_tracked: inner.handles.len(),
            leaks: inner.leaks.clone(),
        }
    }
}
