use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use captok_core::wire::{IssuerApi, IssuerError};
use captok_core::{CanonicalPath, Clock, Operation, VerifiedClaims, ANY_AUDIENCE};
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::audit::{AuditLog, AuditRecord, Verdict};
use crate::config::{GatewayConfig, ValidationMode};
use crate::decision::{AccessCheck, Denial};
use crate::keycache::KeyCache;
use crate::GatewayError;

/// Minimum spacing of key refetches triggered by an unknown `kid`.
pub const UNKNOWN_KID_REFETCH_GAP: i64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Get,
    Put,
}

impl Method {
    pub fn op(self) -> Operation {
        match self {
            Method::Get => Operation::Read,
            Method::Put => Operation::Write,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayRequest {
    pub method: Method,
    pub path: String,
    pub bearer: Option<String>,
    pub client_id: Option<String>,
    pub body: Vec<u8>,
}

impl GatewayRequest {
    pub fn get(path: impl Into<String>, bearer: Option<&str>) -> Self {
        GatewayRequest {
            method: Method::Get,
            path: path.into(),
            bearer: bearer.map(str::to_owned),
            client_id: None,
            body: Vec::new(),
        }
    }

    pub fn put(path: impl Into<String>, bearer: Option<&str>, body: impl Into<Vec<u8>>) -> Self {
        GatewayRequest {
            method: Method::Put,
            body: body.into(),
            ..GatewayRequest::get(path, bearer)
        }
    }

    pub fn from_client(mut self, client_id: impl Into<String>) -> Self {
        self.client_id = Some(client_id.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayResponse {
    pub status: u16,
    pub body: Vec<u8>,
    /// Set for every non-2xx response.
    pub error: Option<Denial>,
}

impl GatewayResponse {
    fn ok(status: u16, body: Vec<u8>) -> Self {
        GatewayResponse {
            status,
            body,
            error: None,
        }
    }

    fn err(d: Denial) -> Self {
        GatewayResponse {
            status: d.status,
            body: Vec::new(),
            error: Some(d),
        }
    }

    pub fn code(&self) -> Option<&str> {
        self.error.as_ref().map(|d| d.code.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub allowed: u64,
    pub denied: u64,
    /// Calls this gateway made to the issuer (key fetches and
    /// introspections).
    pub issuer_calls: u64,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    allowed: AtomicU64,
    denied: AtomicU64,
    issuer_calls: AtomicU64,
}

/// The data server: checks bearer tokens and serves files under the
/// document root.
pub struct Gateway {
    config: GatewayConfig,
    check: AccessCheck,
    keys: KeyCache,
    issuer: Arc<dyn IssuerApi>,
    clock: Arc<dyn Clock>,
    audit: AuditLog,
    counters: Counters,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    /// Validates the configuration and warms the key cache. Fails only when
    /// the issuer is unreachable and no cached key set exists on disk.
    pub async fn start(
        config: GatewayConfig,
        issuer: Arc<dyn IssuerApi>,
        clock: Arc<dyn Clock>,
        keep_audit_in_memory: bool,
    ) -> Result<Self, GatewayError> {
        let config = config.validate()?;
        let audit = AuditLog::open(config.audit_log.as_deref(), keep_audit_in_memory)
            .map_err(|e| GatewayError::Config(format!("audit log: {e}")))?;
        let gateway = Gateway {
            check: AccessCheck {
                validation: config.validation(),
                mount: config.mount.clone(),
                enforce_origin: config.enforce_origin,
            },
            keys: KeyCache::open(config.key_cache.clone()),
            issuer,
            clock,
            audit,
            counters: Counters::default(),
            config,
        };
        if gateway.config.mode == ValidationMode::Offline {
            if let Err(e) = gateway.refetch_keys().await {
                if gateway.keys.snapshot().is_none() {
                    return Err(GatewayError::Startup(e));
                }
                warn!(error = %e, "issuer unreachable at startup; using cached keys");
            }
        }
        info!(root = %gateway.config.doc_root.display(), mount = %gateway.config.mount, "gateway ready");
        Ok(gateway)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn access_check(&self) -> &AccessCheck {
        &self.check
    }

    pub fn audit_records(&self) -> Vec<AuditRecord> {
        self.audit.records()
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            requests: c.requests.load(Ordering::Relaxed),
            allowed: c.allowed.load(Ordering::Relaxed),
            denied: c.denied.load(Ordering::Relaxed),
            issuer_calls: c.issuer_calls.load(Ordering::Relaxed),
        }
    }

    pub fn key_snapshot(&self) -> Option<Arc<crate::KeySnapshot>> {
        self.keys.snapshot()
    }

    /// Fetches the issuer key set and swaps it in.
    pub async fn refetch_keys(&self) -> Result<(), IssuerError> {
        let now = self.clock.now();
        self.counters.issuer_calls.fetch_add(1, Ordering::Relaxed);
        let keys = self.issuer.fetch_keys().await?;
        debug!(keys = keys.len(), "key set refreshed");
        self.keys.install(keys, now);
        Ok(())
    }

    /// Refetches keys every `refetch_interval` seconds until the task is
    /// aborted. Failures keep the previous snapshot.
    pub fn spawn_refetch(self: &Arc<Self>) -> tokio::task::JoinHandle<()> {
        let gw = Arc::clone(self);
        let period = Duration::from_secs(gw.config.refetch_interval as u64);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            tick.tick().await;
            loop {
                tick.tick().await;
                if let Err(e) = gw.refetch_keys().await {
                    warn!(error = %e, "background key refetch failed");
                }
            }
        })
    }

    pub async fn handle(&self, req: GatewayRequest) -> GatewayResponse {
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let now = self.clock.now();
        let op = req.method.op();
        let mut record = AuditRecord {
            ts: now,
            jti: None,
            sub: None,
            op: op.to_string(),
            path: req.path.clone(),
            client_id: req.client_id.clone(),
            decision: Verdict::Deny,
            status: 0,
            error: None,
            token: req.bearer.clone(),
        };
        let response = match self.authorize(&req, now, &mut record).await {
            Err(denial) => {
                self.counters.denied.fetch_add(1, Ordering::Relaxed);
                debug!(code = %denial.code, path = %req.path, "request denied");
                GatewayResponse::err(denial)
            }
            Ok(path) => {
                self.counters.allowed.fetch_add(1, Ordering::Relaxed);
                record.decision = Verdict::Allow;
                self.serve(&req, &path).await
            }
        };
        record.status = response.status;
        record.error = response.code().map(str::to_owned);
        self.audit.append(record);
        response
    }

    async fn authorize(
        &self,
        req: &GatewayRequest,
        now: i64,
        record: &mut AuditRecord,
    ) -> Result<CanonicalPath, Denial> {
        let token = req
            .bearer
            .as_deref()
            .ok_or_else(|| Denial::unauthenticated("missing_token", "no bearer token presented"))?;
        let claims = match self.config.mode {
            ValidationMode::Offline => self.verify_offline(token, now).await?,
            ValidationMode::Introspect => self.verify_remote(token).await?,
        };
        record.jti = Some(claims.jti.clone());
        record.sub = Some(claims.sub.clone());
        let path = AccessCheck::request_path(&req.path)?;
        record.path = path.as_str().to_owned();
        self.check
            .authorize(&claims, req.method.op(), &path, req.client_id.as_deref())?;
        Ok(path)
    }

    async fn verify_offline(&self, token: &str, now: i64) -> Result<VerifiedClaims, Denial> {
        let snap = self
            .keys
            .snapshot()
            .ok_or_else(|| Denial::new(503, "keys_unavailable", "no issuer key set loaded"))?;
        if self.keys.check_stale(&snap, now, self.config.refetch_interval) && self.config.fail_closed
        {
            return Err(Denial::new(503, "keys_stale", "issuer key set is out of date"));
        }
        match self.check.verify(token, &snap.keys, now) {
            Err(d) if d.code == "unknown_kid"
                && self.keys.try_begin_fetch(now, UNKNOWN_KID_REFETCH_GAP) =>
            {
                // Possibly a freshly rotated key; look once, then give up.
                if self.refetch_keys().await.is_ok() {
                    if let Some(snap) = self.keys.snapshot() {
                        return self.check.verify(token, &snap.keys, now);
                    }
                }
                Err(d)
            }
            r => r,
        }
    }

    async fn verify_remote(&self, token: &str) -> Result<VerifiedClaims, Denial> {
        self.counters.issuer_calls.fetch_add(1, Ordering::Relaxed);
        let report = self
            .issuer
            .introspect(token)
            .await
            .map_err(|e| Denial::new(503, e.code(), e.to_string()))?;
        if !report.active {
            return Err(Denial::unauthenticated("token_inactive", "issuer reports token inactive"));
        }
        let claims = report
            .to_claims()
            .ok_or_else(|| Denial::unauthenticated("malformed", "incomplete introspection report"))?;
        let v = &self.check.validation;
        if claims.iss != v.issuer {
            return Err(Denial::unauthenticated("issuer_mismatch", claims.iss));
        }
        if claims.aud != v.audience && !(v.accept_any_audience && claims.aud == ANY_AUDIENCE) {
            return Err(Denial::unauthenticated("audience_mismatch", claims.aud));
        }
        Ok(VerifiedClaims::vouched(claims))
    }

    fn local_path(&self, path: &CanonicalPath) -> PathBuf {
        let mut p = self.config.doc_root.clone();
        p.extend(path.segments());
        p
    }

    fn confined(&self, p: &Path) -> bool {
        p.starts_with(&self.config.doc_root)
    }

    async fn serve(&self, req: &GatewayRequest, path: &CanonicalPath) -> GatewayResponse {
        let local = self.local_path(path);
        let result = match req.method {
            Method::Get => self.read(&local).await,
            Method::Put => self.write(&local, &req.body).await,
        };
        result.unwrap_or_else(|e| {
            warn!(path = %path, error = %e, "file operation failed");
            GatewayResponse::err(Denial::new(500, "io_error", e.to_string()))
        })
    }

    async fn read(&self, local: &Path) -> std::io::Result<GatewayResponse> {
        let not_found = || GatewayResponse::err(Denial::new(404, "not_found", "no such file"));
        let real = match tokio::fs::canonicalize(local).await {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(not_found()),
            Err(e) => return Err(e),
        };
        if !self.confined(&real) || !tokio::fs::metadata(&real).await?.is_file() {
            return Ok(not_found());
        }
        Ok(GatewayResponse::ok(200, tokio::fs::read(&real).await?))
    }

    async fn write(&self, local: &Path, body: &[u8]) -> std::io::Result<GatewayResponse> {
        let conflict = |what: &str| GatewayResponse::err(Denial::new(409, "conflict", what));
        let Some(parent) = local.parent().filter(|_| local != self.config.doc_root) else {
            return Ok(conflict("cannot write the mount root"));
        };
        tokio::fs::create_dir_all(parent).await?;
        if !self.confined(&tokio::fs::canonicalize(parent).await?) {
            return Ok(conflict("parent resolves outside the document root"));
        }
        let existed = match tokio::fs::symlink_metadata(local).await {
            Ok(m) if m.is_file() => true,
            Ok(_) => return Ok(conflict("target is not a regular file")),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
            Err(e) => return Err(e),
        };
        tokio::fs::write(local, body).await?;
        Ok(GatewayResponse::ok(if existed { 204 } else { 201 }, Vec::new()))
    }
}
