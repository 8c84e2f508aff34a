//! Brings up issuer, token manager and gateway for one run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use captok_client::{GatewayClient, IssuerClient};
use captok_core::wire::IssuerApi;
use captok_core::{Clock, KeySet, ManualClock, Permission, Scope, SystemClock};
use captok_gateway::{Gateway, GatewayConfig};
use captok_issuer::{Issuer, IssuerConfig, MemoryStore, Policy, UserDirectory};
use captok_manager::{ManagerConfig, TokenManager, Vault, VaultKey};
use serde_json::json;
use tempfile::TempDir;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tracing::warn;

use crate::spec::{ClockMode, FaultKind, JobSpec, Transport, WorkflowRun};
use crate::transcript::{Edge, Transcript};
use crate::wiring::{DataPlane, Outage, RecordingIssuer};
use crate::HarnessError;

/// Low iteration count: the harness authenticates once per run and the
/// directory never leaves memory.
const HARNESS_PBKDF2_ITERATIONS: u32 = 1_000;

/// Time source for a run: a manual clock that jumps between events, or
/// the wall clock with real sleeps.
#[derive(Debug, Clone)]
pub enum RunClock {
    Simulated(ManualClock),
    Real,
}

impl RunClock {
    pub fn new(mode: ClockMode, start: i64) -> Self {
        match mode {
            ClockMode::Simulated => RunClock::Simulated(ManualClock::new(start)),
            ClockMode::Real => RunClock::Real,
        }
    }

    pub fn shared(&self) -> Arc<dyn Clock> {
        match self {
            RunClock::Simulated(c) => Arc::new(c.clone()),
            RunClock::Real => Arc::new(SystemClock),
        }
    }

    pub fn now(&self) -> i64 {
        match self {
            RunClock::Simulated(c) => c.now(),
            RunClock::Real => SystemClock.now(),
        }
    }

    pub async fn advance_to(&self, t: i64) {
        match self {
            RunClock::Simulated(c) => {
                if t > c.now() {
                    c.set(t);
                }
            }
            RunClock::Real => {
                let wait = t - SystemClock.now();
                if wait > 0 {
                    tokio::time::sleep(Duration::from_secs(wait as u64)).await;
                }
            }
        }
    }
}

pub struct Environment {
    pub clock: RunClock,
    pub issuer: Arc<Issuer>,
    pub issuer_url: String,
    pub manager: Arc<TokenManager>,
    pub gateway: Arc<Gateway>,
    pub data: Box<dyn DataPlane>,
    pub submit_issuer: Arc<RecordingIssuer>,
    /// Key set the execute nodes use to re-verify tokens for local reads.
    pub exec_keys: KeySet,
    pub policy: Policy,
    pub doc_root: PathBuf,
    servers: Vec<JoinHandle<()>>,
    _tmp: TempDir,
}

impl Drop for Environment {
    fn drop(&mut self) {
        for s in &self.servers {
            s.abort();
        }
    }
}

/// Every permission any job asks for, deduplicated.
pub fn union_scope(jobs: &[JobSpec]) -> Scope {
    let mut all: BTreeSet<Permission> = BTreeSet::new();
    for job in jobs {
        all.extend(job.inputs.iter().cloned());
        all.extend(job.outputs.iter().cloned());
        if let Some(e) = &job.execute {
            all.extend(e.iter().cloned());
        }
    }
    Scope::new(all.into_iter().collect())
}

fn seed_doc_root(root: &Path, jobs: &[JobSpec]) {
    let mut paths = BTreeSet::new();
    for job in jobs {
        paths.extend(JobSpec::read_paths(&job.inputs));
        if let Some(e) = &job.execute {
            paths.extend(JobSpec::read_paths(e));
        }
    }
    for p in paths {
        let local = root.join(p.trim_start_matches('/'));
        if local.exists() {
            continue;
        }
        let ok = local
            .parent()
            .map(std::fs::create_dir_all)
            .transpose()
            .and_then(|_| std::fs::write(&local, format!("contents of {p}\n")));
        if let Err(e) = ok {
            warn!(path = %p, error = %e, "could not seed input file");
        }
    }
}

async fn listener() -> Result<(TcpListener, String), HarnessError> {
    let l = TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| HarnessError::Setup(format!("bind: {e}")))?;
    let url = format!("http://{}", l.local_addr().expect("bound socket has an address"));
    Ok((l, url))
}

fn serve(l: TcpListener, app: axum::Router) -> JoinHandle<()> {
    tokio::spawn(async move {
        if let Err(e) = axum::serve(l, app).await {
            warn!(error = %e, "harness server stopped");
        }
    })
}

impl Environment {
    pub async fn start(run: &WorkflowRun, transcript: Arc<Transcript>) -> Result<Self, HarnessError> {
        let s = &run.settings;
        let clock = RunClock::new(run.clock, s.start_time);
        let shared_clock = clock.shared();
        let setup = |what: &str, e: &dyn std::fmt::Display| HarnessError::Setup(format!("{what}: {e}"));

        let tmp = tempfile::tempdir().map_err(|e| setup("tempdir", &e))?;
        let doc_root = match &s.doc_root {
            Some(p) => p.clone(),
            None => tmp.path().join("data"),
        };
        std::fs::create_dir_all(&doc_root).map_err(|e| setup("document root", &e))?;
        seed_doc_root(&doc_root, &run.jobs);

        let grantable = union_scope(&run.jobs);
        let templates: Vec<String> = grantable.iter().map(|p| p.to_string()).collect();
        let policy = Policy::from_json(
            &json!([{
                "match": {"user": s.user},
                "grantable": templates,
                "max_access_lifetime": s.access_lifetime,
                "max_refresh_lifetime": s.refresh_lifetime,
                "audiences": [s.audience, s.decoy_audience],
            }])
            .to_string(),
        )
        .map_err(|e| setup("policy", &e))?;
        let mut users = UserDirectory::default();
        users
            .add_user(&s.user, &s.password, vec![], HARNESS_PBKDF2_ITERATIONS)
            .map_err(|e| setup("user directory", &e))?;

        let mut servers = Vec::new();
        let issuer_listener = match s.transport {
            Transport::InProcess => None,
            Transport::Http => Some(listener().await?),
        };
        let issuer_url = match &issuer_listener {
            Some((_, url)) => url.clone(),
            None => s.issuer.clone(),
        };
        let mut config = IssuerConfig::new(&issuer_url);
        config.access_lifetime = s.access_lifetime;
        config.refresh_lifetime = s.refresh_lifetime;
        config.seed = Some(s.seed);
        let issuer = Arc::new(Issuer::new(
            config,
            policy.clone(),
            users,
            Arc::new(MemoryStore::new()),
            shared_clock.clone(),
        ));
        let issuer_api = |issuer: &Arc<Issuer>| -> Arc<dyn IssuerApi> {
            match s.transport {
                Transport::InProcess => issuer.clone(),
                Transport::Http => Arc::new(IssuerClient::new(&issuer_url)),
            }
        };
        if let Some((l, _)) = issuer_listener {
            servers.push(serve(l, captok_issuer::router(issuer.clone())));
        }

        let outages = run
            .faults
            .iter()
            .filter_map(|f| match f.kind {
                FaultKind::IssuerOutageWindow { start, end } => {
                    let node = &run.jobs.iter().find(|j| j.id == f.job)?.node;
                    Some(Outage {
                        origin: node.clone(),
                        start: s.start_time + start,
                        end: s.start_time + end,
                    })
                }
                _ => None,
            })
            .collect();
        let submit_issuer = Arc::new(RecordingIssuer::new(
            issuer_api(&issuer),
            Edge::SubmitIssuer,
            transcript.clone(),
            shared_clock.clone(),
            outages,
        ));
        let data_issuer = Arc::new(RecordingIssuer::new(
            issuer_api(&issuer),
            Edge::DataIssuer,
            transcript.clone(),
            shared_clock.clone(),
            Vec::new(),
        ));
        let exec_issuer = RecordingIssuer::new(
            issuer_api(&issuer),
            Edge::ExecuteIssuer,
            transcript.clone(),
            shared_clock.clone(),
            Vec::new(),
        );

        let mut gw_config = GatewayConfig::new(&doc_root, &issuer_url, &s.audience);
        gw_config.enforce_origin = true;
        gw_config.skew = s.skew;
        gw_config.refetch_interval = 86_400;
        let gateway = Arc::new(
            Gateway::start(gw_config, data_issuer, shared_clock.clone(), s.keep_transcript)
                .await
                .map_err(|e| setup("gateway", &e))?,
        );
        if run.clock == ClockMode::Real {
            servers.push(gateway.spawn_refetch());
        }
        let data: Box<dyn DataPlane> = match s.transport {
            Transport::InProcess => Box::new(gateway.clone()),
            Transport::Http => {
                let (l, url) = listener().await?;
                servers.push(serve(l, captok_gateway::http::router(gateway.clone())));
                Box::new(GatewayClient::new(&url))
            }
        };

        let manager = Arc::new(TokenManager::new(
            ManagerConfig {
                refresh_margin: s.refresh_margin,
                share_by_default: s.share_tokens,
                ..ManagerConfig::default()
            },
            Vault::in_memory(Some(VaultKey::generate())),
            shared_clock.clone(),
        ));
        manager.add_issuer(&issuer_url, submit_issuer.clone());

        // The user authenticates once on the submit host; the handles go
        // straight into the vault.
        // The decoy grant covers only the stage-in scopes of the jobs that
        // misuse it; the vault keeps one entry per (user, issuer, scopes),
        // so it must not coincide with the main grant's scope.
        let decoy_jobs: Vec<JobSpec> = run
            .jobs
            .iter()
            .filter(|j| run.faults_for(&j.id).contains(&FaultKind::WrongAudience))
            .map(|j| JobSpec {
                outputs: Scope::new(vec![]),
                execute: None,
                ..j.clone()
            })
            .collect();
        let mut grants = vec![(grantable.clone(), s.audience.clone())];
        if !decoy_jobs.is_empty() {
            let decoy_scope = union_scope(&decoy_jobs);
            if decoy_scope.canonical_string() == grantable.canonical_string() {
                return Err(HarnessError::Workflow(
                    "wrong-audience fault needs a job pool whose scopes differ from the faulted stage-in scopes".into(),
                ));
            }
            grants.push((decoy_scope, s.decoy_audience.clone()));
        }
        for (scope, audience) in grants {
            let grant = submit_issuer
                .password_grant(&s.user, &s.password, &scope, &audience)
                .await
                .map_err(|e| setup("refresh grant", &e))?;
            let scopes: Scope = grant.scope.parse().map_err(|e| setup("granted scope", &e))?;
            manager
                .store_refresh(
                    &s.user,
                    &issuer_url,
                    &grant.refresh_token,
                    scopes,
                    vec![audience],
                    clock.now() + grant.expires_in,
                )
                .map_err(|e| setup("vault", &e))?;
        }

        let exec_keys = exec_issuer
            .fetch_keys()
            .await
            .map_err(|e| setup("execute-side key fetch", &e))?;

        Ok(Environment {
            clock,
            issuer,
            issuer_url,
            manager,
            gateway,
            data,
            submit_issuer,
            exec_keys,
            policy,
            doc_root,
            servers,
            _tmp: tmp,
        })
    }
}
