use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::transcript::TranscriptSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pending,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounts {
    pub stage_in: u32,
    pub execute: u32,
    pub stage_out: u32,
}

/// Per-job result. Times are seconds from the start of the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobReport {
    pub id: String,
    pub outcome: Outcome,
    pub error_codes: Vec<String>,
    pub faults: Vec<String>,
    pub deliveries: PhaseCounts,
    pub holds: u32,
    pub retries: Vec<i64>,
    pub started: Option<i64>,
    pub finished: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub jobs: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub deliveries: u64,
    pub execute_deliveries: u64,
    pub refreshes: u64,
    pub mints: u64,
    pub cache_hits: u64,
    pub holds: u64,
    pub gateway_requests: u64,
    pub gateway_denied: u64,
    pub local_cache_hits: u64,
    /// Gateway-to-issuer calls after the initial key fetch.
    pub gateway_issuer_calls: u64,
    /// Discovery, key-set and introspection calls seen by the issuer after
    /// warm-up.
    pub issuer_verifier_calls: u64,
    /// Simulated seconds from first to last event.
    pub span: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantCheck {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        InvariantCheck {
            name: name.to_owned(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub jobs: Vec<JobReport>,
    pub totals: Totals,
    /// Issuer mints per `scope | audience | origin`.
    pub mints_by_key: BTreeMap<String, u64>,
    pub transcript: TranscriptSummary,
    pub invariants: Vec<InvariantCheck>,
}

impl RunReport {
    pub fn all_invariants_hold(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    pub fn invariant(&self, name: &str) -> Option<&InvariantCheck> {
        self.invariants.iter().find(|c| c.name == name)
    }

    pub fn job(&self, id: &str) -> Option<&JobReport> {
        self.jobs.iter().find(|j| j.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
