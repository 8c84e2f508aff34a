//! Adapters placed on every cross-domain channel: they record traffic in
//! the transcript and inject issuer faults.

use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use captok_client::GatewayClient;
use captok_core::wire::{
    AccessTokenResponse, Discovery, IntrospectionReport, IssuerApi, IssuerError, MintRequest,
    RefreshGrant, TokenForm,
};
use captok_core::{Clock, KeySet, Scope};
use captok_gateway::{Gateway, GatewayRequest, Method};
use serde_json::{json, Value};

use crate::transcript::{Direction, Edge, Transcript};

/// Mints for `origin` fail as if the issuer were down during `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outage {
    pub origin: String,
    pub start: i64,
    pub end: i64,
}

/// Issuer proxy that logs each call on one edge of the transcript.
pub struct RecordingIssuer {
    inner: Arc<dyn IssuerApi>,
    edge: Edge,
    transcript: Arc<Transcript>,
    clock: Arc<dyn Clock>,
    outages: Vec<Outage>,
    minted: Mutex<Vec<String>>,
}

impl RecordingIssuer {
    pub fn new(
        inner: Arc<dyn IssuerApi>,
        edge: Edge,
        transcript: Arc<Transcript>,
        clock: Arc<dyn Clock>,
        outages: Vec<Outage>,
    ) -> Self {
        RecordingIssuer {
            inner,
            edge,
            transcript,
            clock,
            outages,
            minted: Mutex::new(Vec::new()),
        }
    }

    /// Every access token that passed through this proxy.
    pub fn minted(&self) -> Vec<String> {
        self.minted.lock().unwrap().clone()
    }

    fn log(&self, direction: Direction, kind: &str, body: Value) {
        self.transcript
            .record(self.clock.now(), self.edge, direction, None, kind, body);
    }

    fn log_result<T: serde::Serialize>(&self, kind: &str, r: &Result<T, IssuerError>) {
        let body = match r {
            Ok(v) => serde_json::to_value(v).expect("response serializes"),
            Err(e) => json!({"error": e.code(), "detail": e.to_string()}),
        };
        self.log(Direction::Response, kind, body);
    }

    fn in_outage(&self, origin: Option<&str>) -> bool {
        let now = self.clock.now();
        origin.is_some_and(|o| {
            self.outages
                .iter()
                .any(|w| w.origin == o && now >= w.start && now < w.end)
        })
    }
}

#[async_trait]
impl IssuerApi for RecordingIssuer {
    async fn discovery(&self) -> Result<Discovery, IssuerError> {
        self.log(Direction::Request, "discovery", Value::Null);
        let r = self.inner.discovery().await;
        self.log_result("discovery", &r);
        r
    }

    async fn fetch_keys(&self) -> Result<KeySet, IssuerError> {
        self.log(Direction::Request, "jwks", Value::Null);
        let r = self.inner.fetch_keys().await;
        self.log_result("jwks", &r);
        r
    }

    async fn password_grant(
        &self,
        username: &str,
        password: &str,
        scope: &Scope,
        audience: &str,
    ) -> Result<RefreshGrant, IssuerError> {
        // The password itself is not recorded.
        self.log(
            Direction::Request,
            "password_grant",
            json!({"username": username, "scope": scope, "audience": audience}),
        );
        let r = self.inner.password_grant(username, password, scope, audience).await;
        if let Ok(grant) = &r {
            self.transcript.track_handle(&grant.refresh_token);
        }
        self.log_result("password_grant", &r);
        r
    }

    async fn mint_access(&self, req: &MintRequest) -> Result<AccessTokenResponse, IssuerError> {
        self.log(
            Direction::Request,
            "mint",
            serde_json::to_value(TokenForm::from(req.clone())).expect("form serializes"),
        );
        let r = if self.in_outage(req.origin.as_deref()) {
            Err(IssuerError::Unavailable("injected outage".into()))
        } else {
            self.inner.mint_access(req).await
        };
        if let Ok(resp) = &r {
            self.minted.lock().unwrap().push(resp.access_token.clone());
        }
        self.log_result("mint", &r);
        r
    }

    async fn introspect(&self, token: &str) -> Result<IntrospectionReport, IssuerError> {
        self.log(Direction::Request, "introspect", json!({"token": token}));
        let r = self.inner.introspect(token).await;
        self.log_result("introspect", &r);
        r
    }

    async fn revoke(&self, handle: &str) -> Result<(), IssuerError> {
        self.log(Direction::Request, "revoke", json!({"token": handle}));
        let r = self.inner.revoke(handle).await;
        self.log_result("revoke", &r);
        r
    }
}

/// Result of one data-plane request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataReply {
    pub status: u16,
    pub body: Vec<u8>,
    pub error: Option<String>,
}

impl DataReply {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// How execute nodes reach the gateway.
#[async_trait]
pub trait DataPlane: Send + Sync {
    async fn send(&self, req: GatewayRequest) -> DataReply;
}

#[async_trait]
impl DataPlane for Arc<Gateway> {
    async fn send(&self, req: GatewayRequest) -> DataReply {
        let r = self.handle(req).await;
        DataReply {
            status: r.status,
            body: r.body,
            error: r.error.map(|d| d.code),
        }
    }
}

#[async_trait]
impl DataPlane for GatewayClient {
    async fn send(&self, req: GatewayRequest) -> DataReply {
        let mut client = self.clone();
        if let Some(id) = &req.client_id {
            client = client.with_client_id(id.clone());
        }
        let token = req.bearer.as_deref();
        let reply = match req.method {
            Method::Get => client.get(&req.path, token).await,
            Method::Put => client.put(&req.path, token, req.body).await,
        };
        match reply {
            Ok(r) => DataReply {
                status: r.status,
                body: r.body,
                error: r.error,
            },
            Err(e) => DataReply {
                status: 0,
                body: Vec::new(),
                error: Some(e.code().to_owned()),
            },
        }
    }
}
