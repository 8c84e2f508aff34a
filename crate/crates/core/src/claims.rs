use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scope::Scope;

/// Value of the `ver` claim.
pub const FORMAT_VERSION: &str = "captok/1";

/// Audience wildcard. Only honoured by verifiers running with a lax audience
/// policy.
pub const ANY_AUDIENCE: &str = "ANY";

/// Minimum `jti` length in base64url characters (96 bits).
pub const MIN_JTI_CHARS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClaimsError {
    #[error("claim `{0}` is empty")]
    Empty(&'static str),
    #[error("issuer `{0}` is not an absolute http(s) URL")]
    BadIssuer(String),
    #[error("timestamps out of order: nbf={nbf} iat={iat} exp={exp}")]
    TimeOrder { nbf: i64, iat: i64, exp: i64 },
    #[error("lifetime {lifetime}s exceeds maximum {max}s")]
    LifetimeExceeded { lifetime: i64, max: i64 },
    #[error("jti must carry at least 96 bits ({MIN_JTI_CHARS} base64url chars)")]
    ShortJti,
    #[error("unsupported format version `{0}`")]
    Version(String),
}

/// Capability payload of an access token.
///
/// Unknown claims are kept in `extra` so that a decode/encode cycle is
/// lossless; nothing in this crate interprets them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenClaims {
    pub iss: String,
    pub sub: String,
    pub aud: String,
    pub exp: i64,
    pub nbf: i64,
    pub iat: i64,
    pub jti: String,
    pub scope: Scope,
    pub ver: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl TokenClaims {
    /// Checks the structural invariants of an access token. `max_lifetime`
    /// bounds `exp - iat` when given.
    pub fn validate(&self, max_lifetime: Option<i64>) -> Result<(), ClaimsError> {
        if !(self.iss.starts_with("https://") || self.iss.starts_with("http://"))
            || self.iss.len() <= "https://".len()
        {
            return Err(ClaimsError::BadIssuer(self.iss.clone()));
        }
        if self.sub.is_empty() {
            return Err(ClaimsError::Empty("sub"));
        }
        if self.aud.is_empty() {
            return Err(ClaimsError::Empty("aud"));
        }
        if self.scope.is_empty() {
            return Err(ClaimsError::Empty("scope"));
        }
        if self.jti.len() < MIN_JTI_CHARS {
            return Err(ClaimsError::ShortJti);
        }
        if self.ver != FORMAT_VERSION {
            return Err(ClaimsError::Version(self.ver.clone()));
        }
        if !(self.nbf <= self.iat && self.iat <= self.exp) {
            return Err(ClaimsError::TimeOrder {
                nbf: self.nbf,
                iat: self.iat,
                exp: self.exp,
            });
        }
        if let Some(max) = max_lifetime {
            let lifetime = self.exp - self.iat;
            if lifetime > max {
                return Err(ClaimsError::LifetimeExceeded { lifetime, max });
            }
        }
        Ok(())
    }
}
