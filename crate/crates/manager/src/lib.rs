//! Submit-side credential management.
//!
//! The [`TokenManager`] keeps refresh handles in an encrypted [`Vault`] and
//! hands jobs nothing but short-lived, narrowed access tokens.

pub mod http;
pub mod manager;
pub mod vault;

pub use manager::{
    Backoff, Delivery, JobState, ManagerConfig, ManagerError, ManagerStats, Phase, TokenManager,
    TokenRequest, DEFAULT_REFRESH_MARGIN,
};
pub use vault::{RefreshHandle, Vault, VaultEntry, VaultError, VaultKey, VaultListing};
