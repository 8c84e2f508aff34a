use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use async_trait::async_trait;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use captok_core::wire::{
    AccessTokenResponse, Discovery, IntrospectionReport, IssuerApi, IssuerError, MintRequest,
    RefreshGrant,
};
use captok_core::{
    attenuate, decode_unverified, encode_token, verify_token, Algorithm, Clock, EncodeError,
    KeySet, Permission, Scope, SigningKey, TokenClaims, Validation, FORMAT_VERSION,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info};

use crate::keyring::Keyring;
use crate::policy::{Policy, PolicyError};
use crate::store::{handle_digest, RefreshRecord, RefreshStore, StoreError};
use crate::users::{UserDirectory, UserError};

pub const DEFAULT_ACCESS_LIFETIME: i64 = 600;
pub const DEFAULT_REFRESH_LIFETIME: i64 = 30 * 24 * 3600;
pub const DEFAULT_KEY_OVERLAP: i64 = 24 * 3600;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssuerConfig {
    /// Public base URL; also the `iss` claim.
    pub issuer: String,
    #[serde(default = "default_access")]
    pub access_lifetime: i64,
    #[serde(default = "default_refresh")]
    pub refresh_lifetime: i64,
    #[serde(default = "default_overlap")]
    pub key_overlap: i64,
    /// Seeds every random draw (keys, handles, jti). Unset means OS entropy.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_access() -> i64 {
    DEFAULT_ACCESS_LIFETIME
}

fn default_refresh() -> i64 {
    DEFAULT_REFRESH_LIFETIME
}

fn default_overlap() -> i64 {
    DEFAULT_KEY_OVERLAP
}

impl IssuerConfig {
    pub fn new(issuer: impl Into<String>) -> Self {
        IssuerConfig {
            issuer: issuer.into().trim_end_matches('/').to_owned(),
            access_lifetime: DEFAULT_ACCESS_LIFETIME,
            refresh_lifetime: DEFAULT_REFRESH_LIFETIME,
            key_overlap: DEFAULT_KEY_OVERLAP,
            seed: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum IssueError {
    #[error(transparent)]
    Auth(#[from] UserError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown refresh token")]
    UnknownHandle,
    #[error("refresh token revoked")]
    Revoked,
    #[error("refresh token expired")]
    RefreshExpired,
    #[error("requested `{0}` exceeds the refresh grant")]
    Escalation(Permission),
    #[error("audience `{0}` not permitted for this grant")]
    AudienceNotPermitted(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("signing failed: {0}")]
    Encode(#[from] EncodeError),
}

impl IssueError {
    pub fn code(&self) -> &'static str {
        match self {
            IssueError::Auth(_) => "authentication_failed",
            IssueError::Policy(e) => e.code(),
            IssueError::InvalidRequest(_) => "invalid_request",
            IssueError::UnknownHandle => "unknown_handle",
            IssueError::Revoked => "revoked",
            IssueError::RefreshExpired => "refresh_expired",
            IssueError::Escalation(_) => "escalation",
            IssueError::AudienceNotPermitted(_) => "audience_not_permitted",
            IssueError::Store(_) | IssueError::Encode(_) => "server_error",
        }
    }

    pub fn is_server_fault(&self) -> bool {
        matches!(self, IssueError::Store(_) | IssueError::Encode(_))
    }
}

impl From<IssueError> for IssuerError {
    fn from(e: IssueError) -> Self {
        if e.is_server_fault() {
            IssuerError::Unavailable(e.to_string())
        } else {
            IssuerError::rejected(e.code(), e.to_string())
        }
    }
}

/// Request counters, one per endpoint.
#[derive(Debug, Default)]
pub struct Metrics {
    discovery: AtomicU64,
    jwks: AtomicU64,
    password_grants: AtomicU64,
    mints: AtomicU64,
    introspections: AtomicU64,
    revocations: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub discovery: u64,
    pub jwks: u64,
    pub password_grants: u64,
    pub mints: u64,
    pub introspections: u64,
    pub revocations: u64,
}

impl MetricsSnapshot {
    /// Calls a data server can make: key fetches, discovery and introspection.
    pub fn verifier_calls(&self) -> u64 {
        self.discovery + self.jwks + self.introspections
    }
}

impl Metrics {
    fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            discovery: self.discovery.load(Ordering::Relaxed),
            jwks: self.jwks.load(Ordering::Relaxed),
            password_grants: self.password_grants.load(Ordering::Relaxed),
            mints: self.mints.load(Ordering::Relaxed),
            introspections: self.introspections.load(Ordering::Relaxed),
            revocations: self.revocations.load(Ordering::Relaxed),
        }
    }
}

/// The token server.
pub struct Issuer {
    config: IssuerConfig,
    policy: Policy,
    users: UserDirectory,
    store: Arc<dyn RefreshStore>,
    keyring: RwLock<Keyring>,
    clock: Arc<dyn Clock>,
    rng: Mutex<ChaCha20Rng>,
    metrics: Metrics,
}

impl std::fmt::Debug for Issuer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Issuer")
            .field("issuer", &self.config.issuer)
            .finish_non_exhaustive()
    }
}

impl Issuer {
    pub fn new(
        config: IssuerConfig,
        policy: Policy,
        users: UserDirectory,
        store: Arc<dyn RefreshStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let mut rng = match config.seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        let key = fresh_key(&mut rng);
        Self::build(config, policy, users, store, clock, rng, key)
    }

    /// Like [`Issuer::new`] but signs with a provisioned key.
    pub fn with_signing_key(
        config: IssuerConfig,
        policy: Policy,
        users: UserDirectory,
        store: Arc<dyn RefreshStore>,
        clock: Arc<dyn Clock>,
        key: SigningKey,
    ) -> Self {
        let rng = match config.seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        Self::build(config, policy, users, store, clock, rng, key)
    }

    fn build(
        config: IssuerConfig,
        policy: Policy,
        users: UserDirectory,
        store: Arc<dyn RefreshStore>,
        clock: Arc<dyn Clock>,
        rng: ChaCha20Rng,
        key: SigningKey,
    ) -> Self {
        Issuer {
            keyring: RwLock::new(Keyring::new(key, config.key_overlap)),
            config,
            policy,
            users,
            store,
            clock,
            rng: Mutex::new(rng),
            metrics: Metrics::default(),
        }
    }

    pub fn config(&self) -> &IssuerConfig {
        &self.config
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn users(&self) -> &UserDirectory {
        &self.users
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    fn random_string(&self, bytes: usize) -> String {
        let mut buf = vec![0u8; bytes];
        self.rng.lock().unwrap().fill_bytes(&mut buf);
        URL_SAFE_NO_PAD.encode(buf)
    }

    pub fn discovery(&self) -> Discovery {
        Metrics::bump(&self.metrics.discovery);
        let base = &self.config.issuer;
        Discovery {
            issuer: base.clone(),
            jwks_uri: format!("{base}/jwks"),
            token_endpoint: format!("{base}/token"),
            introspection_endpoint: format!("{base}/introspect"),
        }
    }

    pub fn jwks(&self) -> KeySet {
        Metrics::bump(&self.metrics.jwks);
        self.published_keys()
    }

    /// Current key set, without counting a fetch.
    pub fn published_keys(&self) -> KeySet {
        self.keyring.read().unwrap().published(self.clock.now())
    }

    pub fn current_kid(&self) -> String {
        self.keyring.read().unwrap().current().kid().to_owned()
    }

    /// Authenticates the user and records a refresh grant for the scopes
    /// their policy allows.
    pub fn grant_refresh(
        &self,
        username: &str,
        password: &str,
        requested: &[Permission],
        audience: &str,
    ) -> Result<RefreshGrant, IssueError> {
        Metrics::bump(&self.metrics.password_grants);
        let groups = self.users.authenticate(username, password)?;
        let grant = self.policy.evaluate(username, &groups, requested, audience)?;
        let now = self.clock.now();
        let lifetime = grant.max_refresh_lifetime.min(self.config.refresh_lifetime);
        let handle = self.random_string(32);
        let scopes = Scope::new(grant.scopes);
        self.store.insert(RefreshRecord {
            handle_digest: handle_digest(&handle),
            sub: username.to_owned(),
            groups,
            scopes: scopes.clone(),
            audiences: vec![grant.audience],
            max_access_lifetime: grant.max_access_lifetime,
            issued_at: now,
            expires_at: now + lifetime,
            revoked: false,
        })?;
        info!(sub = username, scope = %scopes, "refresh grant issued");
        Ok(RefreshGrant {
            refresh_token: handle,
            scope: scopes.to_string(),
            expires_in: lifetime,
        })
    }

    /// Exchanges a refresh handle for a short-lived access token, optionally
    /// narrowed in scope and bound to an execution origin.
    pub fn mint_access(&self, req: &MintRequest) -> Result<AccessTokenResponse, IssueError> {
        Metrics::bump(&self.metrics.mints);
        let record = self
            .store
            .get(&handle_digest(&req.refresh_token))?
            .ok_or(IssueError::UnknownHandle)?;
        if record.revoked {
            return Err(IssueError::Revoked);
        }
        let now = self.clock.now();
        if now >= record.expires_at {
            return Err(IssueError::RefreshExpired);
        }
        let requested = req.scope.as_ref().map(Scope::permissions).unwrap_or(&[]);
        let scopes = attenuate(record.scopes.permissions(), requested)
            .map_err(|e| IssueError::Escalation(e.0))?;
        let aud = match &req.audience {
            Some(a) if record.audiences.contains(a) => a.clone(),
            Some(a) => return Err(IssueError::AudienceNotPermitted(a.clone())),
            None => record.audiences[0].clone(),
        };
        let lifetime = record.max_access_lifetime.min(self.config.access_lifetime);
        let claims = TokenClaims {
            iss: self.config.issuer.clone(),
            sub: record.sub.clone(),
            aud,
            exp: now + lifetime,
            nbf: now,
            iat: now,
            jti: self.random_string(16),
            scope: Scope::new(scopes),
            ver: FORMAT_VERSION.to_owned(),
            origin: req.origin.clone(),
            extra: Default::default(),
        };
        // Holding the read lock across signing makes rotation atomic with
        // respect to minting.
        let token = {
            let ring = self.keyring.read().unwrap();
            encode_token(&claims, ring.current(), &ring.published(now))?
        };
        debug!(sub = %claims.sub, jti = %claims.jti, "access token minted");
        Ok(AccessTokenResponse {
            access_token: token,
            token_type: "bearer".to_owned(),
            expires_in: lifetime,
            scope: claims.scope.to_string(),
        })
    }

    /// Active iff the token verifies here with zero skew.
    pub fn introspect(&self, token: &str) -> IntrospectionReport {
        Metrics::bump(&self.metrics.introspections);
        let Ok((_, unverified)) = decode_unverified(token) else {
            return IntrospectionReport::inactive();
        };
        let expect = Validation::new(self.config.issuer.clone(), unverified.aud).with_skew(0);
        match verify_token(token, &self.published_keys(), &expect, self.clock.now()) {
            Ok(claims) => IntrospectionReport::active(&claims),
            Err(_) => IntrospectionReport::inactive(),
        }
    }

    /// Idempotent; unknown handles are acknowledged too.
    pub fn revoke(&self, handle: &str) -> Result<(), IssueError> {
        Metrics::bump(&self.metrics.revocations);
        if self.store.revoke(&handle_digest(handle))? {
            info!("refresh grant revoked");
        }
        Ok(())
    }

    /// Installs a new signing key; returns its kid.
    pub fn rotate_keys(&self) -> String {
        let key = fresh_key(&mut self.rng.lock().unwrap());
        let kid = self
            .keyring
            .write()
            .unwrap()
            .rotate(key, self.clock.now());
        info!(%kid, "signing key rotated");
        kid
    }
}

fn fresh_key(rng: &mut ChaCha20Rng) -> SigningKey {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    SigningKey::from_seed(Algorithm::DEFAULT, seed)
}

#[async_trait]
impl IssuerApi for Issuer {
    async fn discovery(&self) -> Result<Discovery, IssuerError> {
        Ok(Issuer::discovery(self))
    }

    async fn fetch_keys(&self) -> Result<KeySet, IssuerError> {
        Ok(self.jwks())
    }

    async fn password_grant(
        &self,
        username: &str,
        password: &str,
        scope: &Scope,
        audience: &str,
    ) -> Result<RefreshGrant, IssuerError> {
        Ok(self.grant_refresh(username, password, scope.permissions(), audience)?)
    }

    async fn mint_access(&self, req: &MintRequest) -> Result<AccessTokenResponse, IssuerError> {
        Ok(Issuer::mint_access(self, req)?)
    }

    async fn introspect(&self, token: &str) -> Result<IntrospectionReport, IssuerError> {
        Ok(Issuer::introspect(self, token))
    }

    async fn revoke(&self, refresh_token: &str) -> Result<(), IssuerError> {
        Ok(Issuer::revoke(self, refresh_token)?)
    }
}
