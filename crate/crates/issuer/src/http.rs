//! HTTP surface of the token server.

use std::sync::Arc;

use axum::extract::rejection::FormRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Json, Router};
use captok_core::wire::{ErrorBody, MintRequest, TokenForm, TokenParam};
use captok_core::Scope;

use crate::service::{IssueError, Issuer};

pub const DISCOVERY_PATH: &str = "/.well-known/captok-configuration";

pub fn router(issuer: Arc<Issuer>) -> Router {
    Router::new()
        .route(DISCOVERY_PATH, get(discovery))
        .route("/jwks", get(jwks))
        .route("/token", post(token))
        .route("/introspect", post(introspect))
        .route("/revoke", post(revoke))
        .route("/metrics", get(metrics))
        .with_state(issuer)
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn invalid_request(detail: impl ToString) -> Self {
        ApiError(
            StatusCode::BAD_REQUEST,
            ErrorBody {
                error: "invalid_request".into(),
                error_description: detail.to_string(),
            },
        )
    }
}

impl From<IssueError> for ApiError {
    fn from(e: IssueError) -> Self {
        let status = match e.code() {
            "authentication_failed" => StatusCode::UNAUTHORIZED,
            "no_matching_rule" | "audience_not_permitted" | "escalation" => StatusCode::FORBIDDEN,
            "server_error" | "invalid_policy" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(
            status,
            ErrorBody {
                error: e.code().to_owned(),
                error_description: e.to_string(),
            },
        )
    }
}

impl From<FormRejection> for ApiError {
    fn from(e: FormRejection) -> Self {
        ApiError::invalid_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

async fn discovery(State(issuer): State<Arc<Issuer>>) -> impl IntoResponse {
    Json(issuer.discovery())
}

async fn jwks(State(issuer): State<Arc<Issuer>>) -> impl IntoResponse {
    Json(issuer.jwks())
}

async fn metrics(State(issuer): State<Arc<Issuer>>) -> impl IntoResponse {
    Json(issuer.metrics())
}

fn parse_scope_param(raw: &str) -> Result<Scope, ApiError> {
    raw.parse::<Scope>().map_err(ApiError::invalid_request)
}

async fn token(
    State(issuer): State<Arc<Issuer>>,
    form: Result<Form<TokenForm>, FormRejection>,
) -> Result<Response, ApiError> {
    let Form(form) = form?;
    match form {
        TokenForm::Password {
            username,
            password,
            scope,
            audience,
        } => {
            let scope = parse_scope_param(&scope)?;
            // Password hashing is deliberately slow; keep it off the reactor.
            let grant = tokio::task::spawn_blocking(move || {
                issuer.grant_refresh(&username, &password, scope.permissions(), &audience)
            })
            .await
            .map_err(|e| {
                ApiError(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    ErrorBody {
                        error: "server_error".into(),
                        error_description: e.to_string(),
                    },
                )
            })??;
            Ok(Json(grant).into_response())
        }
        TokenForm::RefreshToken {
            refresh_token,
            scope,
            audience,
            origin,
        } => {
            let scope = match scope.as_deref() {
                None | Some("") => None,
                Some(s) => Some(parse_scope_param(s)?),
            };
            let req = MintRequest {
                refresh_token,
                scope,
                audience: audience.filter(|a| !a.is_empty()),
                origin: origin.filter(|o| !o.is_empty()),
            };
            Ok(Json(issuer.mint_access(&req)?).into_response())
        }
    }
}

async fn introspect(
    State(issuer): State<Arc<Issuer>>,
    form: Result<Form<TokenParam>, FormRejection>,
) -> Result<Response, ApiError> {
    let Form(param) = form?;
    Ok(Json(issuer.introspect(&param.token)).into_response())
}

async fn revoke(
    State(issuer): State<Arc<Issuer>>,
    form: Result<Form<TokenParam>, FormRejection>,
) -> Result<Response, ApiError> {
    let Form(param) = form?;
    issuer.revoke(&param.token)?;
    Ok(Json(serde_json::json!({})).into_response())
}
