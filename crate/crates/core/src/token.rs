//! Compact token serialization and offline verification.
//!
//! Wire format: `b64url(header) "." b64url(payload) "." b64url(signature)`,
//! unpadded. The signature covers the exact ASCII bytes `header.payload`.
//! Decoding is strict: non-canonical base64 (stray trailing bits) is
//! rejected so a token has exactly one valid spelling.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::Signature;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claims::{ClaimsError, TokenClaims, ANY_AUDIENCE, FORMAT_VERSION};
use crate::keys::{Algorithm, KeySet, SigningKey};

/// `typ` header value.
pub const TOKEN_TYPE: &str = "captok";

/// Default tolerated clock skew, seconds.
pub const DEFAULT_SKEW: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub alg: String,
    pub kid: String,
    pub typ: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("invalid claims: {0}")]
    Claims(#[from] ClaimsError),
    #[error("signing key `{0}` is not in the published key set")]
    UnknownKid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed token: {0}")]
pub struct MalformedToken(pub String);

/// Verification failures. Each variant maps to a stable error code.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("malformed token: {0}")]
    Malformed(String),
    #[error("no key with kid `{0}`")]
    UnknownKid(String),
    #[error("signature does not verify")]
    SignatureInvalid,
    #[error("issuer `{0}` is not trusted")]
    IssuerMismatch(String),
    #[error("audience `{0}` is not accepted")]
    AudienceMismatch(String),
    #[error("token expired at {exp}")]
    Expired { exp: i64 },
    #[error("token not valid before {nbf}")]
    NotYetValid { nbf: i64 },
}

impl VerifyError {
    pub fn code(&self) -> &'static str {
        match self {
            VerifyError::Malformed(_) => "malformed",
            VerifyError::UnknownKid(_) => "unknown_kid",
            VerifyError::SignatureInvalid => "signature_invalid",
            VerifyError::IssuerMismatch(_) => "issuer_mismatch",
            VerifyError::AudienceMismatch(_) => "audience_mismatch",
            VerifyError::Expired { .. } => "expired",
            VerifyError::NotYetValid { .. } => "not_yet_valid",
        }
    }
}

impl From<MalformedToken> for VerifyError {
    fn from(e: MalformedToken) -> Self {
        VerifyError::Malformed(e.0)
    }
}

/// Claims that passed [`verify_token`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedClaims(TokenClaims);

impl VerifiedClaims {
    /// Wraps claims vouched for by the issuer itself, e.g. an active
    /// introspection response.
    pub fn vouched(claims: TokenClaims) -> Self {
        VerifiedClaims(claims)
    }

    pub fn into_inner(self) -> TokenClaims {
        self.0
    }
}

impl std::ops::Deref for VerifiedClaims {
    type Target = TokenClaims;

    fn deref(&self) -> &TokenClaims {
        &self.0
    }
}

/// What a verifier expects of a token.
#[derive(Debug, Clone)]
pub struct Validation {
    pub issuer: String,
    pub audience: String,
    /// Accept `aud = "ANY"` in addition to the exact audience.
    pub accept_any_audience: bool,
    pub skew: i64,
}

impl Validation {
    pub fn new(issuer: impl Into<String>, audience: impl Into<String>) -> Self {
        Validation {
            issuer: issuer.into(),
            audience: audience.into(),
            accept_any_audience: false,
            skew: DEFAULT_SKEW,
        }
    }

    pub fn with_skew(mut self, skew: i64) -> Self {
        self.skew = skew.max(0);
        self
    }

    pub fn lax_audience(mut self) -> Self {
        self.accept_any_audience = true;
        self
    }
}

fn b64_decode(segment: &str, what: &str) -> Result<Vec<u8>, MalformedToken> {
    URL_SAFE_NO_PAD
        .decode(segment)
        .map_err(|e| MalformedToken(format!("{what}: {e}")))
}

fn split(token: &str) -> Result<[&str; 3], MalformedToken> {
    let mut parts = token.split('.');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(p), Some(s), None) => Ok([h, p, s]),
        _ => Err(MalformedToken(format!(
            "expected 3 segments, found {}",
            token.split('.').count()
        ))),
    }
}

/// Signs `claims` with `signer`, which must be present in `published`.
pub fn encode_token(
    claims: &TokenClaims,
    signer: &SigningKey,
    published: &KeySet,
) -> Result<String, EncodeError> {
    claims.validate(None)?;
    match published.get(signer.kid()) {
        Some(rec) if rec.public == signer.verifying_key() => {}
        _ => return Err(EncodeError::UnknownKid(signer.kid().to_owned())),
    }
    let header = Header {
        alg: signer.alg().as_str().to_owned(),
        kid: signer.kid().to_owned(),
        typ: TOKEN_TYPE.to_owned(),
    };
    // Serializing these types cannot fail: no maps with non-string keys.
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload = serde_json::to_vec(claims).expect("claims serialize");
    let mut out = URL_SAFE_NO_PAD.encode(header);
    out.push('.');
    URL_SAFE_NO_PAD.encode_string(payload, &mut out);
    let signature = signer.sign(out.as_bytes());
    out.push('.');
    URL_SAFE_NO_PAD.encode_string(signature, &mut out);
    Ok(out)
}

/// Parses a token without any trust judgment. Never authorize from this.
pub fn decode_unverified(token: &str) -> Result<(Header, TokenClaims), MalformedToken> {
    let [h, p, s] = split(token)?;
    let header = b64_decode(h, "header")?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| MalformedToken(format!("header: {e}")))?;
    let claims = decode_claims(p)?;
    b64_decode(s, "signature")?;
    Ok((header, claims))
}

fn decode_claims(segment: &str) -> Result<TokenClaims, MalformedToken> {
    let payload = b64_decode(segment, "payload")?;
    serde_json::from_slice(&payload).map_err(|e| MalformedToken(format!("payload: {e}")))
}

/// Verifies signature, issuer, audience and validity window.
///
/// Check order: structure, key lookup, signature, then claims. A token whose
/// signature fails is never parsed further.
pub fn verify_token(
    token: &str,
    keys: &KeySet,
    expect: &Validation,
    now: i64,
) -> Result<VerifiedClaims, VerifyError> {
    let [h, p, s] = split(token)?;
    let header: Header = serde_json::from_slice(&b64_decode(h, "header")?)
        .map_err(|e| VerifyError::Malformed(format!("header: {e}")))?;
    let alg: Algorithm = header
        .alg
        .parse()
        .map_err(|e| VerifyError::Malformed(format!("header alg: {e}")))?;
    if header.typ != TOKEN_TYPE {
        return Err(VerifyError::Malformed(format!("header typ `{}`", header.typ)));
    }
    let key = keys
        .get(&header.kid)
        .ok_or_else(|| VerifyError::UnknownKid(header.kid.clone()))?;
    if key.alg != alg {
        return Err(VerifyError::Malformed(format!(
            "header alg {alg} does not match key alg {}",
            key.alg
        )));
    }
    let sig = b64_decode(s, "signature")?;
    let sig = Signature::from_slice(&sig).map_err(|_| VerifyError::SignatureInvalid)?;
    let signed = &token[..h.len() + 1 + p.len()];
    key.public
        .verify_strict(signed.as_bytes(), &sig)
        .map_err(|_| VerifyError::SignatureInvalid)?;

    let claims = decode_claims(p)?;
    if claims.ver != FORMAT_VERSION {
        return Err(VerifyError::Malformed(format!("unsupported ver `{}`", claims.ver)));
    }
    if claims.iss != expect.issuer {
        return Err(VerifyError::IssuerMismatch(claims.iss));
    }
    let aud_ok = claims.aud == expect.audience
        || (expect.accept_any_audience && claims.aud == ANY_AUDIENCE);
    if !aud_ok {
        return Err(VerifyError::AudienceMismatch(claims.aud));
    }
    let skew = expect.skew.max(0);
    if now >= claims.exp.saturating_add(skew) {
        return Err(VerifyError::Expired { exp: claims.exp });
    }
    if now < claims.nbf.saturating_sub(skew) {
        return Err(VerifyError::NotYetValid { nbf: claims.nbf });
    }
    Ok(VerifiedClaims(claims))
}
