//! The token server: authenticates users against a local directory,
//! evaluates user/group policy, records revocable refresh grants and mints
//! short-lived, attenuated access tokens.

pub mod http;
pub mod keyring;
pub mod policy;
pub mod service;
pub mod store;
pub mod users;

pub use http::router;
pub use keyring::Keyring;
pub use policy::{Grant, Policy, PolicyError, PolicyRule, RuleMatch, ScopeTemplate};
pub use service::{IssueError, Issuer, IssuerConfig, MetricsSnapshot};
pub use store::{handle_digest, JsonFileStore, MemoryStore, RefreshRecord, RefreshStore, StoreError};
pub use users::{UserDirectory, UserError};
