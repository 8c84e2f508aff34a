//! Workflow file format.

use std::collections::BTreeSet;
use std::path::PathBuf;

use captok_core::{Operation, Scope};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: String,
    /// Stage-in permissions; every `read:` path is fetched as a file.
    pub inputs: Scope,
    /// Stage-out permissions; one file named `<id>.out` is written below
    /// every `write:` path.
    pub outputs: Scope,
    /// Permissions the running job needs; `read:` paths are read at start,
    /// at every token refresh and at completion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execute: Option<Scope>,
    /// Simulated run time in seconds.
    pub duration: i64,
    /// Execute-node identifier.
    pub node: String,
}

impl JobSpec {
    pub fn read_paths(scope: &Scope) -> Vec<String> {
        scope
            .iter()
            .filter(|p| p.op == Operation::Read)
            .map(|p| p.path.to_string())
            .collect()
    }

    pub fn output_paths(&self) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|p| p.op == Operation::Write)
            .map(|p| {
                let dir = p.path.as_str().trim_end_matches('/');
                format!("{dir}/{}.out", self.id)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Real,
    #[default]
    Simulated,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Services are called directly in memory.
    #[default]
    InProcess,
    /// Issuer and gateway listen on loopback sockets and are reached
    /// through the HTTP clients.
    Http,
}

/// A fault injected into one job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultKind {
    /// The job sits on its stage-in token until it has expired.
    ExpireToken,
    /// One character of the stage-in token's signature is altered.
    TamperToken,
    /// Stage-in token is requested for a different audience.
    WrongAudience,
    /// The job also reads a path outside its stage-in scope.
    OutOfScopePath,
    /// The issuer refuses this job's mints during `[start, end)`, in
    /// seconds from the start of the run.
    IssuerOutageWindow { start: i64, end: i64 },
}

impl FaultKind {
    /// Error code the fault is expected to surface.
    pub fn designated_code(&self) -> &'static str {
        match self {
            FaultKind::ExpireToken => "expired",
            FaultKind::TamperToken => "signature_invalid",
            FaultKind::WrongAudience => "audience_mismatch",
            FaultKind::OutOfScopePath => "insufficient_scope",
            FaultKind::IssuerOutageWindow { .. } => "issuer_unavailable",
        }
    }

    /// Whether the job is expected to finish despite the fault.
    pub fn recoverable(&self) -> bool {
        matches!(self, FaultKind::IssuerOutageWindow { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub job: String,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub seed: u64,
    pub user: String,
    pub password: String,
    pub issuer: String,
    pub audience: String,
    /// Audience of the second grant used by the wrong-audience fault.
    pub decoy_audience: String,
    pub access_lifetime: i64,
    pub refresh_lifetime: i64,
    pub refresh_margin: i64,
    /// Share access tokens between jobs with identical requests.
    pub share_tokens: bool,
    /// Bind every job's tokens to its execute node.
    pub origin_binding: bool,
    /// Maximum number of jobs in flight.
    pub parallelism: usize,
    /// Simulated start time (seconds since the epoch).
    pub start_time: i64,
    pub skew: i64,
    pub transport: Transport,
    /// Keep every transcript message in memory (otherwise only counts, the
    /// digest and leak findings are kept).
    pub keep_transcript: bool,
    /// Gateway document root; a temporary directory when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_root: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 1,
            user: "alice".into(),
            password: "submit-secret".into(),
            issuer: "https://issuer.example.org".into(),
            audience: "https://data.example.org".into(),
            decoy_audience: "https://decoy.example.org".into(),
            access_lifetime: 600,
            refresh_lifetime: 30 * 86_400,
            refresh_margin: 60,
            share_tokens: true,
            origin_binding: false,
            parallelism: 1000,
            start_time: 1_700_000_000,
            skew: captok_core::DEFAULT_SKEW,
            transport: Transport::InProcess,
            keep_transcript: true,
            doc_root: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowRun {
    pub jobs: Vec<JobSpec>,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub settings: RunSettings,
}

impl WorkflowRun {
    pub fn from_json(json: &str) -> Result<Self, HarnessError> {
        let run: WorkflowRun =
            serde_json::from_str(json).map_err(|e| HarnessError::Workflow(e.to_string()))?;
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Workflow(m));
        let mut ids = BTreeSet::new();
        for job in &self.jobs {
            if job.id.is_empty() || job.id.contains('/') {
                return bad(format!("job id `{}` must be non-empty without `/`", job.id));
            }
            if !ids.insert(job.id.as_str()) {
                return bad(format!("duplicate job id `{}`", job.id));
            }
            if job.duration <= 0 {
                return bad(format!("job `{}`: duration must be positive", job.id));
            }
            if job.inputs.is_empty() && job.outputs.is_empty() {
                return bad(format!("job `{}` has neither inputs nor outputs", job.id));
            }
        }
        for fault in &self.faults {
            if !ids.contains(fault.job.as_str()) {
                return bad(format!("fault targets unknown job `{}`", fault.job));
            }
            if let FaultKind::IssuerOutageWindow { start, end } = fault.kind {
                if end <= start {
                    return bad(format!("outage window for `{}` is empty", fault.job));
                }
            }
            if matches!(fault.kind, FaultKind::ExpireToken | FaultKind::TamperToken | FaultKind::WrongAudience | FaultKind::OutOfScopePath)
                && self.jobs.iter().any(|j| j.id == fault.job && j.inputs.is_empty())
            {
                return bad(format!("fault on `{}` needs stage-in inputs", fault.job));
            }
        }
        let s = &self.settings;
        if s.access_lifetime <= s.refresh_margin {
            return bad("access lifetime must exceed the refresh margin".into());
        }
        if s.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        Ok(())
    }

    pub fn faults_for(&self, job: &str) -> Vec<FaultKind> {
        self.faults
            .iter()
            .filter(|f| f.job == job)
            .map(|f| f.kind.clone())
            .collect()
    }
}
