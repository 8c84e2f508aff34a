//! The authorization decision shared by the gateway, audit replay and the
//! execute-side local cache.

use captok_core::{
    acl_from_token, normalize_path, verify_token, CanonicalPath, KeySet, Operation, Validation,
    VerifiedClaims,
};
use serde::{Deserialize, Serialize};

/// A refused request: HTTP status plus a machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Denial {
    pub status: u16,
    pub code: String,
    pub detail: String,
}

impl Denial {
    pub fn new(status: u16, code: impl Into<String>, detail: impl Into<String>) -> Self {
        Denial {
            status,
            code: code.into(),
            detail: detail.into(),
        }
    }

    pub fn unauthenticated(code: &str, detail: impl Into<String>) -> Self {
        Denial::new(401, code, detail)
    }
}

/// Static part of the access check: what a token must look like and which
/// namespace it is evaluated against.
#[derive(Debug, Clone)]
pub struct AccessCheck {
    pub validation: Validation,
    pub mount: CanonicalPath,
    pub enforce_origin: bool,
}

impl AccessCheck {
    pub fn verify(&self, token: &str, keys: &KeySet, now: i64) -> Result<VerifiedClaims, Denial> {
        verify_token(token, keys, &self.validation, now)
            .map_err(|e| Denial::unauthenticated(e.code(), e.to_string()))
    }

    /// Decodes and normalizes a request path. Percent-escapes are decoded
    /// first so that an encoded `..` is caught like a literal one.
    pub fn request_path(raw: &str) -> Result<CanonicalPath, Denial> {
        let decoded = percent_encoding::percent_decode_str(raw)
            .decode_utf8()
            .map_err(|_| Denial::new(400, "invalid_path", "path is not valid UTF-8"))?;
        normalize_path(&decoded).map_err(|e| Denial::new(400, e.code(), e.to_string()))
    }

    /// Scope and origin check for an already verified token.
    pub fn authorize(
        &self,
        claims: &VerifiedClaims,
        op: Operation,
        path: &CanonicalPath,
        client_id: Option<&str>,
    ) -> Result<(), Denial> {
        if !acl_from_token(claims, &self.mount).allows(op, path) {
            return Err(Denial::new(
                403,
                "insufficient_scope",
                format!("token does not grant {op} on {path}"),
            ));
        }
        if self.enforce_origin {
            if let Some(origin) = &claims.origin {
                if client_id != Some(origin.as_str()) {
                    return Err(Denial::new(
                        403,
                        "origin_mismatch",
                        format!("token is bound to origin `{origin}`"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Full offline decision for one request.
    pub fn decide(
        &self,
        token: Option<&str>,
        op: Operation,
        raw_path: &str,
        client_id: Option<&str>,
        keys: &KeySet,
        now: i64,
    ) -> Result<(VerifiedClaims, CanonicalPath), Denial> {
        let token = token.ok_or_else(|| {
            Denial::unauthenticated("missing_token", "no bearer token presented")
        })?;
        let claims = self.verify(token, keys, now)?;
        let path = Self::request_path(raw_path)?;
        self.authorize(&claims, op, &path, client_id)?;
        Ok((claims, path))
    }
}
