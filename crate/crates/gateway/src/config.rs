use std::path::PathBuf;

use captok_core::{CanonicalPath, Validation, DEFAULT_SKEW};
use serde::{Deserialize, Serialize};

use crate::GatewayError;

/// How bearer tokens are checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Verify signatures locally against the cached key set.
    #[default]
    Offline,
    /// Ask the issuer's introspection endpoint on every request. Only
    /// useful as a baseline to compare against offline validation.
    Introspect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub listen: String,
    pub doc_root: PathBuf,
    pub issuer: String,
    pub audience: String,
    /// Seconds between background key-set refetches.
    pub refetch_interval: i64,
    /// When false, tokens with audience `ANY` are accepted.
    pub strict_audience: bool,
    /// Compare the token `origin` claim against the client identifier.
    pub enforce_origin: bool,
    /// Namespace prefix this gateway serves; token paths are re-rooted
    /// below it.
    pub mount: CanonicalPath,
    /// Refuse requests (503) once the key cache is older than the refetch
    /// interval, instead of serving with a warning.
    pub fail_closed: bool,
    pub audit_log: Option<PathBuf>,
    /// Where the last fetched key set is persisted.
    pub key_cache: Option<PathBuf>,
    pub skew: i64,
    pub mode: ValidationMode,
}

impl GatewayConfig {
    pub fn new(doc_root: impl Into<PathBuf>, issuer: impl Into<String>, audience: impl Into<String>) -> Self {
        GatewayConfig {
            listen: "127.0.0.1:8443".into(),
            doc_root: doc_root.into(),
            issuer: issuer.into(),
            audience: audience.into(),
            refetch_interval: 3600,
            strict_audience: true,
            enforce_origin: false,
            mount: CanonicalPath::root(),
            fail_closed: false,
            audit_log: None,
            key_cache: None,
            skew: DEFAULT_SKEW,
            mode: ValidationMode::Offline,
        }
    }

    /// Checks the invariants and resolves `doc_root` to its canonical form.
    pub fn validate(mut self) -> Result<Self, GatewayError> {
        let root = std::fs::canonicalize(&self.doc_root).map_err(|e| {
            GatewayError::Config(format!("document root {}: {e}", self.doc_root.display()))
        })?;
        if !root.is_dir() {
            return Err(GatewayError::Config(format!(
                "document root {} is not a directory",
                root.display()
            )));
        }
        if self.strict_audience && self.audience.trim().is_empty() {
            return Err(GatewayError::Config(
                "audience must be set when strict audience checking is on".into(),
            ));
        }
        if self.refetch_interval <= 0 {
            return Err(GatewayError::Config("refetch interval must be positive".into()));
        }
        self.doc_root = root;
        Ok(self)
    }

    pub fn validation(&self) -> Validation {
        let v = Validation::new(&self.issuer, &self.audience).with_skew(self.skew);
        if self.strict_audience {
            v
        } else {
            v.lax_audience()
        }
    }
}
