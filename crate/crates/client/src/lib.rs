//! Thin HTTP clients for the captok services.
//!
//! [`IssuerClient`] implements [`IssuerApi`], so the token manager and the
//! gateway can talk to a remote issuer exactly as they would to an
//! in-process one.

use std::time::Duration;

use async_trait::async_trait;
use captok_core::wire::{
    AccessTokenResponse, Discovery, ErrorBody, IntrospectionReport, IssuerApi, IssuerError,
    MintRequest, RefreshGrant, TokenForm, TokenParam,
};
use captok_core::{KeySet, Scope};
use captok_manager::http::StoreRequest;
use captok_manager::{Delivery, JobState, ManagerStats, TokenRequest, VaultListing};
use reqwest::{Client, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::OnceCell;

pub const DISCOVERY_PATH: &str = "/.well-known/captok-configuration";
pub const CLIENT_ID_HEADER: &str = "x-captok-client";

const TIMEOUT: Duration = Duration::from_secs(30);

fn http() -> Client {
    Client::builder()
        .timeout(TIMEOUT)
        .build()
        .expect("HTTP client builds")
}

fn trim(base: &str) -> String {
    base.trim_end_matches('/').to_owned()
}

/// Issuer over HTTP. Transport failures and 5xx answers map to
/// [`IssuerError::Unavailable`]; 4xx answers carry the issuer's error code.
#[derive(Debug, Clone)]
pub struct IssuerClient {
    base: String,
    http: Client,
    discovery: OnceCell<Discovery>,
}

impl IssuerClient {
    pub fn new(base: &str) -> Self {
        IssuerClient {
            base: trim(base),
            http: http(),
            discovery: OnceCell::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, IssuerError> {
        let resp = req
            .send()
            .await
            .map_err(|e| IssuerError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(IssuerError::Unavailable(format!("issuer answered {status}")));
        }
        if !status.is_success() {
            let body: ErrorBody = resp.json().await.unwrap_or(ErrorBody {
                error: "invalid_response".into(),
                error_description: format!("issuer answered {status}"),
            });
            return Err(IssuerError::rejected(body.error, body.error_description));
        }
        resp.json()
            .await
            .map_err(|e| IssuerError::rejected("invalid_response", e.to_string()))
    }

    async fn endpoints(&self) -> Result<&Discovery, IssuerError> {
        self.discovery
            .get_or_try_init(|| IssuerApi::discovery(self))
            .await
    }

    pub async fn metrics(&self) -> Result<serde_json::Value, IssuerError> {
        self.send(self.http.get(format!("{}/metrics", self.base))).await
    }
}

#[async_trait]
impl IssuerApi for IssuerClient {
    async fn discovery(&self) -> Result<Discovery, IssuerError> {
        self.send(self.http.get(format!("{}{DISCOVERY_PATH}", self.base)))
            .await
    }

    async fn fetch_keys(&self) -> Result<KeySet, IssuerError> {
        let uri = self.endpoints().await?.jwks_uri.clone();
        self.send(self.http.get(uri)).await
    }

    async fn password_grant(
        &self,
        username: &str,
        password: &str,
        scope: &Scope,
        audience: &str,
    ) -> Result<RefreshGrant, IssuerError> {
        let uri = self.endpoints().await?.token_endpoint.clone();
        let form = TokenForm::Password {
            username: username.to_owned(),
            password: password.to_owned(),
            scope: scope.to_string(),
            audience: audience.to_owned(),
        };
        self.send(self.http.post(uri).form(&form)).await
    }

    async fn mint_access(&self, req: &MintRequest) -> Result<AccessTokenResponse, IssuerError> {
        let uri = self.endpoints().await?.token_endpoint.clone();
        let form = TokenForm::from(req.clone());
        self.send(self.http.post(uri).form(&form)).await
    }

    async fn introspect(&self, token: &str) -> Result<IntrospectionReport, IssuerError> {
        let uri = self.endpoints().await?.introspection_endpoint.clone();
        let form = TokenParam {
            token: token.to_owned(),
        };
        self.send(self.http.post(uri).form(&form)).await
    }

    async fn revoke(&self, handle: &str) -> Result<(), IssuerError> {
        let form = TokenParam {
            token: handle.to_owned(),
        };
        let _: serde_json::Value = self
            .send(self.http.post(format!("{}/revoke", self.base)).form(&form))
            .await?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{code}: {detail}")]
    Service {
        status: u16,
        code: String,
        detail: String,
    },
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Transport(_) => "unreachable",
            ClientError::Service { code, .. } => code,
        }
    }
}

#[derive(Deserialize)]
struct ServiceError {
    error: String,
    #[serde(default)]
    detail: String,
}

async fn service_error(resp: Response) -> ClientError {
    let status = resp.status().as_u16();
    match resp.json::<ServiceError>().await {
        Ok(e) => ClientError::Service {
            status,
            code: e.error,
            detail: e.detail,
        },
        Err(_) => ClientError::Service {
            status,
            code: "http_error".into(),
            detail: format!("status {status}"),
        },
    }
}

async fn json_or_error<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    if resp.status().is_success() {
        Ok(resp.json().await?)
    } else {
        Err(service_error(resp).await)
    }
}

/// Outcome of a gateway request: the status plus body or error code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayReply {
    pub status: u16,
    pub body: Vec<u8>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GatewayClient {
    base: String,
    http: Client,
    client_id: Option<String>,
}

impl GatewayClient {
    pub fn new(base: &str) -> Self {
        GatewayClient {
            base: trim(base),
            http: http(),
            client_id: None,
        }
    }

    /// Identifies this client to the gateway for origin-bound tokens.
    pub fn with_client_id(mut self, id: impl Into<String>) -> Self {
        self.client_id = Some(id.into());
        self
    }

    async fn send(&self, mut req: RequestBuilder, token: Option<&str>) -> Result<GatewayReply, ClientError> {
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(id) = &self.client_id {
            req = req.header(CLIENT_ID_HEADER, id);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(GatewayReply {
                status: status.as_u16(),
                body: resp.bytes().await?.to_vec(),
                error: None,
            });
        }
        let err = service_error(resp).await;
        Ok(GatewayReply {
            status: status.as_u16(),
            body: Vec::new(),
            error: Some(err.code().to_owned()),
        })
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> Result<GatewayReply, ClientError> {
        self.send(self.http.get(format!("{}{path}", self.base)), token).await
    }

    pub async fn put(&self, path: &str, token: Option<&str>, body: Vec<u8>) -> Result<GatewayReply, ClientError> {
        self.send(self.http.put(format!("{}{path}", self.base)).body(body), token)
            .await
    }
}

/// Client of the token manager's local API.
#[derive(Debug, Clone)]
pub struct ManagerClient {
    base: String,
    http: Client,
}

impl ManagerClient {
    pub fn new(base: &str) -> Self {
        ManagerClient {
            base: trim(base),
            http: http(),
        }
    }

    pub async fn access(&self, req: &TokenRequest) -> Result<Delivery, ClientError> {
        let resp = self
            .http
            .post(format!("{}/access", self.base))
            .json(req)
            .send()
            .await?;
        json_or_error(resp).await
    }

    pub async fn store(&self, req: &StoreRequest) -> Result<(), ClientError> {
        let resp = self
            .http
            .post(format!("{}/vault", self.base))
            .json(req)
            .send()
            .await?;
        json_or_error::<serde_json::Value>(resp).await.map(drop)
    }

    pub async fn list(&self) -> Result<Vec<VaultListing>, ClientError> {
        json_or_error(self.http.get(format!("{}/vault", self.base)).send().await?).await
    }

    pub async fn job(&self, job: &str) -> Result<JobState, ClientError> {
        json_or_error(self.http.get(format!("{}/jobs/{job}", self.base)).send().await?).await
    }

    pub async fn complete(&self, job: &str) -> Result<(), ClientError> {
        let resp = self.http.post(format!("{}/jobs/{job}/complete", self.base)).send().await?;
        json_or_error::<serde_json::Value>(resp).await.map(drop)
    }

    pub async fn finish(&self, job: &str) -> Result<(), ClientError> {
        let resp = self.http.post(format!("{}/jobs/{job}/finish", self.base)).send().await?;
        json_or_error::<serde_json::Value>(resp).await.map(drop)
    }

    pub async fn stats(&self) -> Result<ManagerStats, ClientError> {
        json_or_error(self.http.get(format!("{}/stats", self.base)).send().await?).await
    }
}
