use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use captok_core::wire::{IssuerApi, IssuerError, MintRequest};
use captok_core::{attenuate, decode_unverified, Clock, Scope};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::vault::{RefreshHandle, Vault, VaultEntry, VaultError, VaultListing};

pub const DEFAULT_REFRESH_MARGIN: i64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    StageIn,
    Execute,
    StageOut,
}

/// A job's request for an access token in one phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRequest {
    pub job: String,
    pub user: String,
    pub phase: Phase,
    pub scopes: Scope,
    pub audience: String,
    /// Execute-node id to bind the token to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    /// Whether the token may be shared with other jobs; `None` uses the
    /// manager default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<bool>,
}

/// An access token handed to a job. Never carries a refresh handle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub job: String,
    pub phase: Phase,
    pub token: String,
    pub expires_at: i64,
    pub at: i64,
    /// True when this delivery replaced a token for a running job.
    pub refresh: bool,
}

/// Exponential backoff: `min(base * factor^attempt, cap)` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backoff {
    pub base: i64,
    pub factor: i64,
    pub cap: i64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: 1,
            factor: 2,
            cap: 60,
        }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> i64 {
        let mut d = self.base;
        for _ in 0..attempt {
            d = d.saturating_mul(self.factor);
            if d >= self.cap {
                return self.cap;
            }
        }
        d.min(self.cap)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManagerConfig {
    pub refresh_margin: i64,
    pub backoff: Backoff,
    /// Default for [`TokenRequest::share`].
    pub share_by_default: bool,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            refresh_margin: DEFAULT_REFRESH_MARGIN,
            backoff: Backoff::default(),
            share_by_default: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error("no stored grant covers the requested scopes and audience")]
    NoDominatingGrant,
    #[error("the covering refresh grant has expired")]
    RefreshExpired,
    #[error("job `{0}` has not reported completion; stage-out refused")]
    PhaseViolation(String),
    #[error("no issuer client configured for `{0}`")]
    UnknownIssuer(String),
    #[error("job `{0}` is {1:?}")]
    JobNotActive(String, JobState),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Issuer(#[from] IssuerError),
}

impl ManagerError {
    pub fn code(&self) -> &str {
        match self {
            ManagerError::Vault(e) => e.code(),
            ManagerError::NoDominatingGrant => "no_dominating_grant",
            ManagerError::RefreshExpired => "refresh_expired",
            ManagerError::PhaseViolation(_) => "phase_violation",
            ManagerError::UnknownIssuer(_) => "unknown_issuer",
            ManagerError::JobNotActive(..) => "job_not_active",
            ManagerError::InvalidRequest(_) => "invalid_request",
            ManagerError::Issuer(e) => e.code(),
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, ManagerError::Issuer(e) if e.is_transient())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Running,
    Completed,
    Held {
        cause: String,
        attempts: u32,
        next_retry: i64,
    },
    /// Needs a new refresh grant before it can continue.
    TerminalHold { cause: String },
}

#[derive(Debug)]
struct TrackedJob {
    state: JobState,
    resume_to: JobState,
    pending: Option<TokenRequest>,
    execute: Option<(TokenRequest, i64)>,
    retries: Vec<i64>,
}

impl TrackedJob {
    fn new() -> Self {
        TrackedJob {
            state: JobState::Running,
            resume_to: JobState::Running,
            pending: None,
            execute: None,
            retries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    scope: String,
    audience: String,
    origin: String,
    job: Option<String>,
}

#[derive(Debug, Clone)]
struct Cached {
    token: String,
    exp: i64,
}

type Slot = Arc<tokio::sync::Mutex<Option<Cached>>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerStats {
    pub mints: u64,
    pub cache_hits: u64,
    pub deliveries: u64,
    pub refreshes: u64,
    pub holds: u64,
}

#[derive(Debug, Default)]
struct Counters {
    mints: AtomicU64,
    cache_hits: AtomicU64,
    deliveries: AtomicU64,
    refreshes: AtomicU64,
    holds: AtomicU64,
}

/// Submit-side credential manager.
///
/// Holds refresh handles in the vault and hands out only access tokens.
/// Tokens are cached per (scope set, audience, origin); concurrent requests
/// for the same key wait on a single mint.
pub struct TokenManager {
    config: ManagerConfig,
    vault: RwLock<Vault>,
    issuers: RwLock<HashMap<String, Arc<dyn IssuerApi>>>,
    cache: Mutex<HashMap<CacheKey, Slot>>,
    jobs: Mutex<HashMap<String, TrackedJob>>,
    clock: Arc<dyn Clock>,
    counters: Counters,
}

impl std::fmt::Debug for TokenManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TokenManager")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl TokenManager {
    pub fn new(config: ManagerConfig, vault: Vault, clock: Arc<dyn Clock>) -> Self {
        TokenManager {
            config,
            vault: RwLock::new(vault),
            issuers: RwLock::new(HashMap::new()),
            cache: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            clock,
            counters: Counters::default(),
        }
    }

    pub fn add_issuer(&self, url: impl Into<String>, api: Arc<dyn IssuerApi>) {
        self.issuers.write().unwrap().insert(url.into(), api);
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    pub fn stats(&self) -> ManagerStats {
        let c = &self.counters;
        ManagerStats {
            mints: c.mints.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            deliveries: c.deliveries.load(Ordering::Relaxed),
            refreshes: c.refreshes.load(Ordering::Relaxed),
            holds: c.holds.load(Ordering::Relaxed),
        }
    }

    /// Persists a refresh handle in the encrypted vault.
    pub fn store_refresh(
        &self,
        user: &str,
        issuer: &str,
        handle: &str,
        scopes: Scope,
        audiences: Vec<String>,
        expires_at: i64,
    ) -> Result<(), ManagerError> {
        self.vault.write().unwrap().store(VaultEntry {
            user: user.to_owned(),
            issuer: issuer.to_owned(),
            handle: RefreshHandle::new(handle),
            scopes,
            audiences,
            expires_at,
        })?;
        info!(user, issuer, "refresh handle stored");
        Ok(())
    }

    pub fn list_vault(&self) -> Result<Vec<VaultListing>, ManagerError> {
        Ok(self.vault.read().unwrap().list()?)
    }

    /// Picks the stored grant that dominates the request.
    fn find_grant(&self, req: &TokenRequest, now: i64) -> Result<VaultEntry, ManagerError> {
        let vault = self.vault.read().unwrap();
        let mut expired = false;
        for entry in vault.entries()? {
            if entry.user != req.user
                || !entry.audiences.iter().any(|a| a == &req.audience)
                || attenuate(entry.scopes.permissions(), req.scopes.permissions()).is_err()
            {
                continue;
            }
            if now >= entry.expires_at {
                expired = true;
                continue;
            }
            return Ok(entry.clone());
        }
        Err(if expired {
            ManagerError::RefreshExpired
        } else {
            ManagerError::NoDominatingGrant
        })
    }

    fn check_phase(&self, req: &TokenRequest) -> Result<(), ManagerError> {
        let jobs = self.jobs.lock().unwrap();
        let state = jobs.get(&req.job).map(|j| &j.state);
        match (req.phase, state) {
            (_, Some(s @ JobState::TerminalHold { .. })) => {
                Err(ManagerError::JobNotActive(req.job.clone(), s.clone()))
            }
            (Phase::StageOut, Some(JobState::Completed)) => Ok(()),
            (Phase::StageOut, Some(JobState::Held { .. })) => {
                match jobs.get(&req.job).map(|j| &j.resume_to) {
                    Some(JobState::Completed) => Ok(()),
                    _ => Err(ManagerError::PhaseViolation(req.job.clone())),
                }
            }
            (Phase::StageOut, _) => Err(ManagerError::PhaseViolation(req.job.clone())),
            _ => Ok(()),
        }
    }

    /// Returns a cached access token for `req` when it has more than the
    /// refresh margin left, otherwise mints a narrowed one.
    pub async fn get_access(&self, req: &TokenRequest, now: i64) -> Result<Delivery, ManagerError> {
        if req.scopes.is_empty() {
            return Err(ManagerError::InvalidRequest("empty scope request".into()));
        }
        self.check_phase(req)?;
        let grant = self.find_grant(req, now)?;
        let api = self
            .issuers
            .read()
            .unwrap()
            .get(&grant.issuer)
            .cloned()
            .ok_or_else(|| ManagerError::UnknownIssuer(grant.issuer.clone()))?;

        let scope = req.scopes.canonical_string();
        let share = req.share.unwrap_or(self.config.share_by_default);
        let key = CacheKey {
            scope: scope.clone(),
            audience: req.audience.clone(),
            origin: req.origin.clone().unwrap_or_default(),
            job: (!share).then(|| req.job.clone()),
        };
        let slot = self.cache.lock().unwrap().entry(key).or_default().clone();
        let mut cached = slot.lock().await;
        if let Some(c) = cached.as_ref() {
            if c.exp - now > self.config.refresh_margin {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(self.delivery(req, c, now));
            }
        }
        let minted = api
            .mint_access(&MintRequest {
                refresh_token: grant.handle.expose().to_owned(),
                scope: Some(scope.parse().expect("canonical scope reparses")),
                audience: Some(req.audience.clone()),
                origin: req.origin.clone(),
            })
            .await?;
        self.counters.mints.fetch_add(1, Ordering::Relaxed);
        let exp = decode_unverified(&minted.access_token)
            .map(|(_, c)| c.exp)
            .unwrap_or(now + minted.expires_in);
        let entry = Cached {
            token: minted.access_token,
            exp,
        };
        debug!(job = %req.job, phase = ?req.phase, exp, "minted access token");
        let out = self.delivery(req, &entry, now);
        *cached = Some(entry);
        Ok(out)
    }

    fn delivery(&self, req: &TokenRequest, c: &Cached, now: i64) -> Delivery {
        Delivery {
            job: req.job.clone(),
            phase: req.phase,
            token: c.token.clone(),
            expires_at: c.exp,
            at: now,
            refresh: false,
        }
    }

    pub fn register_job(&self, job: &str) {
        self.jobs
            .lock()
            .unwrap()
            .entry(job.to_owned())
            .or_insert_with(TrackedJob::new);
    }

    pub fn job_state(&self, job: &str) -> Option<JobState> {
        self.jobs.lock().unwrap().get(job).map(|j| j.state.clone())
    }

    /// Timestamps of every retry attempt made while the job was held.
    pub fn retry_log(&self, job: &str) -> Vec<i64> {
        self.jobs
            .lock()
            .unwrap()
            .get(job)
            .map(|j| j.retries.clone())
            .unwrap_or_default()
    }

    /// The job finished executing; stage-out tokens may now be served and
    /// its execute token is no longer refreshed.
    pub fn mark_complete(&self, job: &str) {
        let mut jobs = self.jobs.lock().unwrap();
        let j = jobs.entry(job.to_owned()).or_insert_with(TrackedJob::new);
        j.execute = None;
        match j.state {
            JobState::Held { .. } => j.resume_to = JobState::Completed,
            JobState::Running => j.state = JobState::Completed,
            _ => {}
        }
    }

    /// Forgets the job: no further refreshes or retries.
    pub fn finish(&self, job: &str) {
        self.jobs.lock().unwrap().remove(job);
    }

    /// Serves `req` for a tracked job. Transient issuer failures put the job
    /// on hold with `req` queued for retry; the error is still returned.
    pub async fn deliver(&self, req: TokenRequest, now: i64) -> Result<Delivery, ManagerError> {
        self.register_job(&req.job);
        if let Some(state @ JobState::Held { .. }) = self.job_state(&req.job) {
            return Err(ManagerError::JobNotActive(req.job.clone(), state));
        }
        match self.get_access(&req, now).await {
            Ok(d) => {
                self.record_delivery(&req, &d, false);
                Ok(d)
            }
            Err(e) => {
                if e.is_transient() || is_terminal(&e) {
                    self.hold_and_retry(&req, &e, now);
                }
                Err(e)
            }
        }
    }

    fn record_delivery(&self, req: &TokenRequest, d: &Delivery, refresh: bool) {
        self.counters.deliveries.fetch_add(1, Ordering::Relaxed);
        if refresh {
            self.counters.refreshes.fetch_add(1, Ordering::Relaxed);
        }
        if req.phase == Phase::Execute {
            let mut jobs = self.jobs.lock().unwrap();
            if let Some(j) = jobs.get_mut(&req.job) {
                if matches!(j.state, JobState::Running) {
                    j.execute = Some((req.clone(), d.expires_at));
                }
            }
        }
    }

    /// Puts the job on hold after a failed token request. Transient
    /// failures schedule a retry after the first backoff step; anything the
    /// issuer will keep refusing is a terminal hold.
    pub fn hold_and_retry(&self, req: &TokenRequest, error: &ManagerError, now: i64) {
        let mut jobs = self.jobs.lock().unwrap();
        let j = jobs.entry(req.job.clone()).or_insert_with(TrackedJob::new);
        let cause = error.code().to_owned();
        if !error.is_transient() {
            warn!(job = %req.job, %cause, "terminal hold");
            j.state = JobState::TerminalHold { cause };
            j.pending = None;
            j.execute = None;
            return;
        }
        if !matches!(j.state, JobState::Held { .. }) {
            j.resume_to = j.state.clone();
            self.counters.holds.fetch_add(1, Ordering::Relaxed);
        }
        warn!(job = %req.job, %cause, "job held");
        j.state = JobState::Held {
            cause,
            attempts: 0,
            next_retry: now + self.config.backoff.delay(0),
        };
        j.pending = Some(req.clone());
    }

    /// Retries every held job whose backoff has elapsed.
    pub async fn retry_held(&self, now: i64) -> Vec<Delivery> {
        let due: Vec<TokenRequest> = {
            let mut jobs = self.jobs.lock().unwrap();
            let mut due: Vec<TokenRequest> = jobs
                .iter_mut()
                .filter_map(|(_, j)| match j.state {
                    JobState::Held { next_retry, .. } if next_retry <= now => {
                        j.retries.push(now);
                        j.pending.clone()
                    }
                    _ => None,
                })
                .collect();
            due.sort_by(|a, b| a.job.cmp(&b.job));
            due
        };
        let mut out = Vec::new();
        for req in due {
            let result = self.get_access(&req, now).await;
            let mut jobs = self.jobs.lock().unwrap();
            let Some(j) = jobs.get_mut(&req.job) else { continue };
            match result {
                Ok(mut d) => {
                    info!(job = %req.job, "job released from hold");
                    j.state = j.resume_to.clone();
                    j.pending = None;
                    d.refresh = req.phase == Phase::Execute && j.execute.is_some();
                    drop(jobs);
                    self.record_delivery(&req, &d, d.refresh);
                    out.push(d);
                }
                Err(e) if e.is_transient() => {
                    if let JobState::Held { attempts, next_retry, .. } = &mut j.state {
                        *attempts += 1;
                        *next_retry = now + self.config.backoff.delay(*attempts);
                    }
                }
                Err(e) => {
                    warn!(job = %req.job, cause = e.code(), "terminal hold");
                    j.state = JobState::TerminalHold {
                        cause: e.code().to_owned(),
                    };
                    j.pending = None;
                    j.execute = None;
                }
            }
        }
        out
    }

    /// Replaces execute-phase tokens that are within the refresh margin of
    /// expiry. A failure holds that job only.
    pub async fn refresh_running(&self, now: i64) -> Vec<Delivery> {
        let due: Vec<TokenRequest> = {
            let jobs = self.jobs.lock().unwrap();
            let mut due: Vec<TokenRequest> = jobs
                .values()
                .filter(|j| matches!(j.state, JobState::Running))
                .filter_map(|j| j.execute.as_ref())
                .filter(|(_, exp)| exp - now <= self.config.refresh_margin)
                .map(|(req, _)| req.clone())
                .collect();
            due.sort_by(|a, b| a.job.cmp(&b.job));
            due
        };
        let mut out = Vec::new();
        for req in due {
            match self.get_access(&req, now).await {
                Ok(mut d) => {
                    d.refresh = true;
                    self.record_delivery(&req, &d, true);
                    out.push(d);
                }
                Err(e) => self.hold_and_retry(&req, &e, now),
            }
        }
        out
    }

    /// Retries held jobs, then refreshes running ones.
    pub async fn tick(&self, now: i64) -> Vec<Delivery> {
        let mut out = self.retry_held(now).await;
        out.extend(self.refresh_running(now).await);
        out
    }

    /// Earliest time at which [`TokenManager::tick`] has work to do.
    pub fn next_wakeup(&self) -> Option<i64> {
        let margin = self.config.refresh_margin;
        self.jobs
            .lock()
            .unwrap()
            .values()
            .filter_map(|j| match &j.state {
                JobState::Held { next_retry, .. } => Some(*next_retry),
                JobState::Running => j.execute.as_ref().map(|(_, exp)| exp - margin),
                _ => None,
            })
            .min()
    }
}

fn is_terminal(e: &ManagerError) -> bool {
    match e {
        ManagerError::RefreshExpired => true,
        ManagerError::Issuer(IssuerError::Rejected { code, .. }) => {
            matches!(code.as_str(), "revoked" | "refresh_expired" | "unknown_handle")
        }
        _ => false,
    }
}
