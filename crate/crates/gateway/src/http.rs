use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, Method as HttpMethod, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde_json::json;

use crate::gateway::{Gateway, GatewayRequest, Method};

/// Header carrying the transport-level client identifier compared against
/// a token's `origin` claim.
pub const CLIENT_ID_HEADER: &str = "x-captok-client";

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new().fallback(serve).with_state(gateway)
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme
        .eq_ignore_ascii_case("bearer")
        .then(|| token.trim().to_owned())
}

async fn serve(
    State(gw): State<Arc<Gateway>>,
    method: HttpMethod,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let method = match method {
        HttpMethod::GET => Method::Get,
        HttpMethod::PUT => Method::Put,
        _ => {
            return (
                StatusCode::METHOD_NOT_ALLOWED,
                [(header::ALLOW, "GET, PUT")],
                Json(json!({"error": "method_not_allowed", "detail": "only GET and PUT are supported"})),
            )
                .into_response()
        }
    };
    let req = GatewayRequest {
        method,
        path: uri.path().to_owned(),
        bearer: bearer(&headers),
        client_id: headers
            .get(CLIENT_ID_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned),
        body: body.to_vec(),
    };
    let resp = gw.handle(req).await;
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    match resp.error {
        None => (status, resp.body).into_response(),
        Some(d) => {
            let mut r = (status, Json(json!({"error": d.code, "detail": d.detail}))).into_response();
            if status == StatusCode::UNAUTHORIZED {
                let challenge = format!("Bearer error=\"invalid_token\", error_description=\"{}\"", d.code);
                if let Ok(v) = HeaderValue::from_str(&challenge) {
                    r.headers_mut().insert(header::WWW_AUTHENTICATE, v);
                }
            }
            r
        }
    }
}
