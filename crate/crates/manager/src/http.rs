//! Local HTTP API for jobs and submit-side tooling.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use captok_core::Scope;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manager::{ManagerError, TokenManager, TokenRequest};

/// Body of `POST /vault`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreRequest {
    pub user: String,
    pub issuer: String,
    pub refresh_token: String,
    pub scope: Scope,
    pub audiences: Vec<String>,
    pub expires_at: i64,
}

pub fn router(manager: Arc<TokenManager>) -> Router {
    Router::new()
        .route("/access", post(access))
        .route("/vault", get(list_vault).post(store))
        .route("/jobs/{job}", get(job_state))
        .route("/jobs/{job}/complete", post(complete))
        .route("/jobs/{job}/finish", post(finish))
        .route("/stats", get(stats))
        .with_state(manager)
}

struct ApiError(ManagerError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ManagerError::Vault(_) | ManagerError::UnknownIssuer(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            ManagerError::NoDominatingGrant | ManagerError::PhaseViolation(_) => {
                StatusCode::FORBIDDEN
            }
            ManagerError::RefreshExpired | ManagerError::JobNotActive(..) => StatusCode::CONFLICT,
            ManagerError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ManagerError::Issuer(e) if e.is_transient() => StatusCode::SERVICE_UNAVAILABLE,
            ManagerError::Issuer(_) => StatusCode::FORBIDDEN,
        };
        let body = json!({"error": self.0.code(), "detail": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

impl From<ManagerError> for ApiError {
    fn from(e: ManagerError) -> Self {
        ApiError(e)
    }
}

async fn access(
    State(m): State<Arc<TokenManager>>,
    Json(req): Json<TokenRequest>,
) -> Result<Response, ApiError> {
    let now = m.now();
    let d = m.deliver(req, now).await?;
    Ok(Json(d).into_response())
}

async fn store(
    State(m): State<Arc<TokenManager>>,
    Json(req): Json<StoreRequest>,
) -> Result<Response, ApiError> {
    m.store_refresh(
        &req.user,
        &req.issuer,
        &req.refresh_token,
        req.scope,
        req.audiences,
        req.expires_at,
    )?;
    Ok(Json(json!({"stored": true})).into_response())
}

async fn list_vault(State(m): State<Arc<TokenManager>>) -> Result<Response, ApiError> {
    Ok(Json(m.list_vault()?).into_response())
}

async fn job_state(State(m): State<Arc<TokenManager>>, Path(job): Path<String>) -> Response {
    match m.job_state(&job) {
        Some(s) => Json(s).into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({"error": "unknown_job", "detail": job})),
        )
            .into_response(),
    }
}

async fn complete(State(m): State<Arc<TokenManager>>, Path(job): Path<String>) -> Response {
    m.mark_complete(&job);
    Json(json!({})).into_response()
}

async fn finish(State(m): State<Arc<TokenManager>>, Path(job): Path<String>) -> Response {
    m.finish(&job);
    Json(json!({})).into_response()
}

async fn stats(State(m): State<Arc<TokenManager>>) -> Response {
    Json(m.stats()).into_response()
}
