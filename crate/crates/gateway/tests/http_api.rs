mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use captok_gateway::http::{router, CLIENT_ID_HEADER};
use common::*;
use tower::ServiceExt;

#[tokio::test]
async fn bearer_requests_over_http() {
    let w = world();
    let mut config = w.config();
    config.enforce_origin = true;
    let app = router(Arc::new(w.gateway(config).await));
    let tok = w.token_with("read:/ligo write:/ligo/output", DATA, Some("node-1"));

    let send = |req: Request<Body>| {
        let app = app.clone();
        async move {
            let resp = app.oneshot(req).await.unwrap();
            let status = resp.status();
            let challenge = resp.headers().get(header::WWW_AUTHENTICATE).cloned();
            let body = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
            (status, body, challenge)
        }
    };

    let (status, body, _) = send(
        Request::get("/ligo/frames/x.gwf")
            .header(header::AUTHORIZATION, format!("Bearer {tok}"))
            .header(CLIENT_ID_HEADER, "node-1")
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!((status, &body[..]), (StatusCode::OK, &b"frame-bytes"[..]));

    let (status, _, _) = send(
        Request::put("/ligo/output/new.dat")
            .header(header::AUTHORIZATION, format!("bearer {tok}"))
            .header(CLIENT_ID_HEADER, "node-1")
            .body(Body::from("payload"))
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(std::fs::read(w.root.join("ligo/output/new.dat")).unwrap(), b"payload");

    let (status, body, challenge) =
        send(Request::get("/ligo/frames/x.gwf").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(json["error"], "missing_token");
    assert!(json["detail"].is_string());
    assert!(challenge.is_some());

    let (status, body, _) = send(
        Request::get("/ligo/%2e%2e/secret")
            .header(header::AUTHORIZATION, format!("Bearer {tok}"))
            .body(Body::empty())
            .unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let json: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(json["error"], "traversal_rejected");

    let (status, _, _) = send(Request::delete("/ligo/frames/x.gwf").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
}
