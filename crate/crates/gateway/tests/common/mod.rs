#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use captok_core::wire::{
    AccessTokenResponse, Discovery, IntrospectionReport, IssuerApi, IssuerError, MintRequest,
    RefreshGrant,
};
use captok_core::{KeySet, ManualClock, Scope};
use captok_gateway::{Gateway, GatewayConfig};
use captok_issuer::{Issuer, IssuerConfig, MemoryStore, Policy, UserDirectory};
use tempfile::TempDir;

pub const ISS: &str = "https://tokens.example.org";
pub const DATA: &str = "https://data.example.org";
pub const OTHER: &str = "https://other.example.org";
pub const SECRET: &[u8] = b"outside-the-root";

const POLICY: &str = r#"[
  {"match": {"group": "LDG"},
   "grantable": ["read:/ligo", "write:/ligo/output", "read:/public"],
   "max_access_lifetime": 600, "max_refresh_lifetime": 86400,
   "audiences": ["https://data.example.org", "https://other.example.org", "ANY"]}
]"#;

pub struct World {
    pub clock: ManualClock,
    pub issuer: Arc<Issuer>,
    pub dir: TempDir,
    pub root: PathBuf,
}

pub fn world() -> World {
    let clock = ManualClock::new(1_000_000);
    let mut users = UserDirectory::default();
    users.add_user("alice", "pw", vec!["LDG".into()], 10).unwrap();
    let mut config = IssuerConfig::new(ISS);
    config.seed = Some(3);
    let issuer = Arc::new(Issuer::new(
        config,
        Policy::from_json(POLICY).unwrap(),
        users,
        Arc::new(MemoryStore::new()),
        Arc::new(clock.clone()),
    ));
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    std::fs::create_dir_all(root.join("ligo/frames")).unwrap();
    std::fs::create_dir_all(root.join("public")).unwrap();
    std::fs::write(root.join("ligo/frames/x.gwf"), b"frame-bytes").unwrap();
    std::fs::write(root.join("public/readme"), b"hello").unwrap();
    std::fs::write(dir.path().join("secret"), SECRET).unwrap();
    World {
        clock,
        issuer,
        dir,
        root,
    }
}

impl World {
    pub fn token_with(&self, scope: &str, audience: &str, origin: Option<&str>) -> String {
        let scope: Scope = scope.parse().unwrap();
        let grant = self
            .issuer
            .grant_refresh("alice", "pw", scope.permissions(), audience)
            .unwrap();
        self.issuer
            .mint_access(&MintRequest {
                refresh_token: grant.refresh_token,
                scope: Some(scope),
                audience: Some(audience.into()),
                origin: origin.map(str::to_owned),
            })
            .unwrap()
            .access_token
    }

    pub fn token(&self, scope: &str) -> String {
        self.token_with(scope, DATA, None)
    }

    pub fn config(&self) -> GatewayConfig {
        GatewayConfig::new(&self.root, ISS, DATA)
    }

    pub async fn gateway(&self, config: GatewayConfig) -> Gateway {
        Gateway::start(config, self.issuer.clone(), Arc::new(self.clock.clone()), true)
            .await
            .unwrap()
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.path().join("audit.jsonl")
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        Path::new(self.dir.path()).join(rel)
    }
}

/// An issuer that is never reachable.
pub struct Down;

#[async_trait]
impl IssuerApi for Down {
    async fn discovery(&self) -> Result<Discovery, IssuerError> {
        Err(IssuerError::Unavailable("down".into()))
    }
    async fn fetch_keys(&self) -> Result<KeySet, IssuerError> {
        Err(IssuerError::Unavailable("down".into()))
    }
    async fn password_grant(&self, _: &str, _: &str, _: &Scope, _: &str) -> Result<RefreshGrant, IssuerError> {
        Err(IssuerError::Unavailable("down".into()))
    }
    async fn mint_access(&self, _: &MintRequest) -> Result<AccessTokenResponse, IssuerError> {
        Err(IssuerError::Unavailable("down".into()))
    }
    async fn introspect(&self, _: &str) -> Result<IntrospectionReport, IssuerError> {
        Err(IssuerError::Unavailable("down".into()))
    }
    async fn revoke(&self, _: &str) -> Result<(), IssuerError> {
        Err(IssuerError::Unavailable("down".into()))
    }
}
