//! Data gateway: a bearer-authenticated GET/PUT file service that verifies
//! capability tokens offline against a cached issuer key set.
//!
//! Plain HTTP only; bearer tokens need a confidential channel (TLS
//! terminator or equivalent) in any real deployment.

pub mod audit;
pub mod config;
pub mod decision;
pub mod gateway;
pub mod http;
pub mod keycache;
pub mod local_cache;

use captok_core::wire::IssuerError;
use thiserror::Error;

pub use audit::{read_audit_log, AuditLog, AuditRecord, Verdict};
pub use config::{GatewayConfig, ValidationMode};
pub use decision::{AccessCheck, Denial};
pub use gateway::{Gateway, GatewayRequest, GatewayResponse, GatewayStats, Method};
pub use keycache::{KeyCache, KeySnapshot};
pub use local_cache::LocalCache;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error("cannot start without issuer keys: {0}")]
    Startup(IssuerError),
}
