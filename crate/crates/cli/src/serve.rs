//! Long-running service commands.

use std::sync::Arc;
use std::time::Duration;

use captok_client::IssuerClient;
use captok_core::wire::IssuerApi;
use captok_core::{normalize_path, Clock, SystemClock};
use captok_gateway::{Gateway, GatewayConfig, ValidationMode};
use captok_issuer::{
    Issuer, IssuerConfig, JsonFileStore, MemoryStore, Policy, RefreshStore, UserDirectory,
};
use captok_manager::{ManagerConfig, TokenManager};
use tokio::net::TcpListener;
use tracing::{info, warn};

use crate::args::{ServeGatewayArgs, ServeIssuerArgs, ServeManagerArgs};
use crate::commands::{load_signing_key, open_vault};
use crate::CliError;

async fn serve(listen: &str, app: axum::Router, what: &str) -> Result<(), CliError> {
    let listener = TcpListener::bind(listen)
        .await
        .map_err(|e| CliError::Serve(format!("bind {listen}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::Serve(e.to_string()))?;
    info!(%addr, "{what} listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Serve(e.to_string()))
}

pub async fn issuer(a: ServeIssuerArgs) -> Result<(), CliError> {
    let policy_text = std::fs::read_to_string(&a.policy).map_err(CliError::io(&a.policy))?;
    let policy = Policy::from_json(&policy_text)
        .map_err(|e| CliError::invalid("policy")(e.to_string()))?;
    let users_text = std::fs::read_to_string(&a.users).map_err(CliError::io(&a.users))?;
    let users = UserDirectory::from_json(&users_text)
        .map_err(|e| CliError::invalid("user file")(e.to_string()))?;
    let store: Arc<dyn RefreshStore> = match &a.store {
        Some(path) => Arc::new(
            JsonFileStore::open(path).map_err(|e| CliError::invalid("refresh store")(e.to_string()))?,
        ),
        None => Arc::new(MemoryStore::new()),
    };
    let mut config = IssuerConfig::new(&a.issuer);
    if let Some(v) = a.access_lifetime {
        config.access_lifetime = v;
    }
    if let Some(v) = a.refresh_lifetime {
        config.refresh_lifetime = v;
    }
    if let Some(v) = a.key_overlap {
        config.key_overlap = v;
    }
    config.seed = a.seed;
    let clock = Arc::new(SystemClock);
    let issuer = Arc::new(match &a.signing_key {
        Some(path) => {
            let key = load_signing_key(path)?;
            Issuer::with_signing_key(config, policy, users, store, clock, key)
        }
        None => Issuer::new(config, policy, users, store, clock),
    });
    info!(kid = %issuer.current_kid(), "issuer ready");
    if let Some(every) = a.rotate_every.filter(|s| *s > 0) {
        let issuer = issuer.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(every));
            tick.tick().await;
            loop {
                tick.tick().await;
                issuer.rotate_keys();
            }
        });
    }
    serve(&a.listen, captok_issuer::router(issuer), "issuer").await
}

pub async fn gateway(a: ServeGatewayArgs) -> Result<(), CliError> {
    let mut config = GatewayConfig::new(&a.doc_root, &a.issuer, &a.audience);
    config.listen = a.listen.clone();
    config.refetch_interval = a.refetch_interval;
    config.strict_audience = !a.lax_audience;
    config.enforce_origin = a.enforce_origin;
    config.mount = normalize_path(&a.mount).map_err(|e| CliError::invalid("mount")(e.to_string()))?;
    config.fail_closed = a.fail_closed;
    config.audit_log = a.audit_log;
    config.key_cache = a.key_cache;
    config.skew = a.skew;
    if a.introspect {
        config.mode = ValidationMode::Introspect;
    }
    let issuer: Arc<dyn IssuerApi> = Arc::new(IssuerClient::new(&a.issuer));
    let gateway = Arc::new(
        Gateway::start(config, issuer, Arc::new(SystemClock), false)
            .await
            .map_err(|e| CliError::Serve(e.to_string()))?,
    );
    let _refetch = gateway.spawn_refetch();
    serve(&a.listen, captok_gateway::http::router(gateway), "gateway").await
}

pub async fn manager(a: ServeManagerArgs) -> Result<(), CliError> {
    let vault = open_vault(&a.vault)?;
    if vault.is_locked() {
        warn!("vault key not provided; token requests will fail until restarted with --key");
    }
    let config = ManagerConfig {
        refresh_margin: a.refresh_margin,
        share_by_default: !a.no_share,
        ..ManagerConfig::default()
    };
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let manager = Arc::new(TokenManager::new(config, vault, clock.clone()));
    for url in &a.issuers {
        manager.add_issuer(url, Arc::new(IssuerClient::new(url)));
    }
    // Refreshes and retries run on their own schedule.
    let ticker = manager.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(1));
        loop {
            tick.tick().await;
            let delivered = ticker.tick(clock.now()).await;
            if !delivered.is_empty() {
                info!(count = delivered.len(), "tokens refreshed");
            }
        }
    });
    serve(&a.listen, captok_manager::http::router(manager), "credential manager").await
}
