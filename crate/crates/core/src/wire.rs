//! Issuer protocol messages and the transport-neutral client interface.
//!
//! The same [`IssuerApi`] is implemented by the in-process issuer and by the
//! HTTP client, so the token manager and gateway never know which one they
//! talk to.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{TokenClaims, FORMAT_VERSION};
use crate::keys::KeySet;
use crate::scope::Scope;

/// `GET /.well-known/captok-configuration`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub issuer: String,
    pub jwks_uri: String,
    pub token_endpoint: String,
    pub introspection_endpoint: String,
}

/// Form body of `POST /token`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "grant_type", rename_all = "snake_case")]
pub enum TokenForm {
    Password {
        username: String,
        password: String,
        #[serde(default)]
        scope: String,
        audience: String,
    },
    RefreshToken {
        refresh_token: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scope: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        audience: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshGrant {
    pub refresh_token: String,
    pub scope: String,
    pub expires_in: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTokenResponse {
    pub access_token: String,
    pub token_type: String,
    pub expires_in: i64,
    pub scope: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenParam {
    pub token: String,
}

/// Introspection answer. Inactive tokens carry nothing but `active: false`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntrospectionReport {
    pub active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iss: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aud: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exp: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iat: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbf: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jti: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

impl IntrospectionReport {
    pub fn inactive() -> Self {
        IntrospectionReport::default()
    }

    pub fn active(claims: &TokenClaims) -> Self {
        IntrospectionReport {
            active: true,
            iss: Some(claims.iss.clone()),
            sub: Some(claims.sub.clone()),
            aud: Some(claims.aud.clone()),
            scope: Some(claims.scope.to_string()),
            exp: Some(claims.exp),
            iat: Some(claims.iat),
            nbf: Some(claims.nbf),
            jti: Some(claims.jti.clone()),
            origin: claims.origin.clone(),
        }
    }

    /// Rebuilds claims from an active report. `None` when inactive or when a
    /// required field is missing.
    pub fn to_claims(&self) -> Option<TokenClaims> {
        if !self.active {
            return None;
        }
        Some(TokenClaims {
            iss: self.iss.clone()?,
            sub: self.sub.clone()?,
            aud: self.aud.clone()?,
            exp: self.exp?,
            nbf: self.nbf.unwrap_or(self.iat?),
            iat: self.iat?,
            jti: self.jti.clone()?,
            scope: self.scope.as_deref()?.parse::<Scope>().ok()?,
            ver: FORMAT_VERSION.to_owned(),
            origin: self.origin.clone(),
            extra: Default::default(),
        })
    }
}

/// OAuth-style error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default)]
    pub error_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IssuerError {
    /// The issuer could not be reached or failed internally; worth retrying.
    #[error("issuer unavailable: {0}")]
    Unavailable(String),
    /// The issuer answered and refused.
    #[error("{code}: {detail}")]
    Rejected { code: String, detail: String },
}

impl IssuerError {
    pub fn rejected(code: impl Into<String>, detail: impl Into<String>) -> Self {
        IssuerError::Rejected {
            code: code.into(),
            detail: detail.into(),
        }
    }

    pub fn code(&self) -> &str {
        match self {
            IssuerError::Unavailable(_) => "issuer_unavailable",
            IssuerError::Rejected { code, .. } => code,
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, IssuerError::Unavailable(_))
    }
}

/// Refresh-token exchange parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MintRequest {
    pub refresh_token: String,
    pub scope: Option<Scope>,
    pub audience: Option<String>,
    pub origin: Option<String>,
}

impl From<MintRequest> for TokenForm {
    fn from(r: MintRequest) -> Self {
        TokenForm::RefreshToken {
            refresh_token: r.refresh_token,
            scope: r.scope.map(|s| s.to_string()),
            audience: r.audience,
            origin: r.origin,
        }
    }
}

#[async_trait]
pub trait IssuerApi: Send + Sync {
    async fn discovery(&self) -> Result<Discovery, IssuerError>;

    async fn fetch_keys(&self) -> Result<KeySet, IssuerError>;

    async fn password_grant(
        &self,
        username: &str,
        password: &str,
        scope: &Scope,
        audience: &str,
    ) -> Result<RefreshGrant, IssuerError>;

    async fn mint_access(&self, req: &MintRequest) -> Result<AccessTokenResponse, IssuerError>;

    async fn introspect(&self, token: &str) -> Result<IntrospectionReport, IssuerError>;

    async fn revoke(&self, refresh_token: &str) -> Result<(), IssuerError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_form_tagging() {
        let form = TokenForm::RefreshToken {
            refresh_token: "h".into(),
            scope: Some("read:/a".into()),
            audience: None,
            origin: None,
        };
        let json = serde_json::to_value(&form).unwrap();
        assert_eq!(json["grant_type"], "refresh_token");
        assert!(json.get("audience").is_none());
        let back: TokenForm = serde_json::from_value(json).unwrap();
        assert_eq!(back, form);
    }

    #[test]
    fn inactive_report_is_bare() {
        assert_eq!(
            serde_json::to_string(&IntrospectionReport::inactive()).unwrap(),
            r#"{"active":false}"#
        );
        assert_eq!(IntrospectionReport::inactive().to_claims(), None);
    }
}
