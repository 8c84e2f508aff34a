//! Asymmetric key material and published key sets.
//!
//! Only Ed25519 (`EdDSA`, 128-bit security) is supported. Unsigned (`none`)
//! and shared-secret (`HS*`) algorithms are refused outright since a
//! verifier must never need anything but the issuer's public keys.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signer, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("unsigned tokens (`none`) are not supported")]
    Unsigned,
    #[error("symmetric algorithm `{0}` is not supported")]
    Symmetric(String),
    #[error("unsupported algorithm `{0}`")]
    Unsupported(String),
    #[error("invalid key parameters: {0}")]
    InvalidKey(String),
    #[error("duplicate kid `{0}` in key set")]
    DuplicateKid(String),
    #[error("more than one key marked current")]
    MultipleCurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    EdDsa,
}

impl Algorithm {
    pub const DEFAULT: Algorithm = Algorithm::EdDsa;

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::EdDsa => "EdDSA",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "EdDSA" | "Ed25519" | "default" => Ok(Algorithm::EdDsa),
            s if s.eq_ignore_ascii_case("none") => Err(KeyError::Unsigned),
            s if s.starts_with("HS") => Err(KeyError::Symmetric(s.to_owned())),
            other => Err(KeyError::Unsupported(other.to_owned())),
        }
    }
}

impl Serialize for Algorithm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Algorithm {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Derives a key id from the digest of the public key bytes.
fn kid_for(public: &VerifyingKey) -> String {
    let digest = Sha256::digest(public.as_bytes());
    URL_SAFE_NO_PAD.encode(&digest[..16])
}

/// A published verification key.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawKeyRecord", into = "RawKeyRecord")]
pub struct KeyRecord {
    pub kid: String,
    pub alg: Algorithm,
    pub public: VerifyingKey,
    /// Marks the key the issuer currently signs with.
    pub current: bool,
}

impl fmt::Debug for KeyRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyRecord")
            .field("kid", &self.kid)
            .field("alg", &self.alg)
            .field("current", &self.current)
            .finish()
    }
}

#[derive(Serialize, Deserialize)]
struct RawKeyRecord {
    kid: String,
    alg: Algorithm,
    kty: String,
    crv: String,
    x: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    current: bool,
}

impl TryFrom<RawKeyRecord> for KeyRecord {
    type Error = KeyError;

    fn try_from(raw: RawKeyRecord) -> Result<Self, Self::Error> {
        if raw.kty != "OKP" || raw.crv != "Ed25519" {
            return Err(KeyError::InvalidKey(format!(
                "expected OKP/Ed25519, got {}/{}",
                raw.kty, raw.crv
            )));
        }
        let bytes = URL_SAFE_NO_PAD
            .decode(&raw.x)
            .map_err(|e| KeyError::InvalidKey(e.to_string()))?;
        let bytes: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KeyError::InvalidKey("public key must be 32 bytes".into()))?;
        let public =
            VerifyingKey::from_bytes(&bytes).map_err(|e| KeyError::InvalidKey(e.to_string()))?;
        if raw.kid.is_empty() {
            return Err(KeyError::InvalidKey("empty kid".into()));
        }
        Ok(KeyRecord {
            kid: raw.kid,
            alg: raw.alg,
            public,
            current: raw.current,
        })
    }
}

impl From<KeyRecord> for RawKeyRecord {
    fn from(k: KeyRecord) -> Self {
        RawKeyRecord {
            kid: k.kid,
            alg: k.alg,
            kty: "OKP".into(),
            crv: "Ed25519".into(),
            x: URL_SAFE_NO_PAD.encode(k.public.as_bytes()),
            current: k.current,
        }
    }
}

/// The issuer's published keys, as served at the key-set endpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawKeySet")]
pub struct KeySet {
    keys: Vec<KeyRecord>,
}

#[derive(Deserialize)]
struct RawKeySet {
    keys: Vec<KeyRecord>,
}

impl TryFrom<RawKeySet> for KeySet {
    type Error = KeyError;

    fn try_from(raw: RawKeySet) -> Result<Self, Self::Error> {
        KeySet::new(raw.keys)
    }
}

impl KeySet {
    pub fn new(keys: Vec<KeyRecord>) -> Result<Self, KeyError> {
        for (i, k) in keys.iter().enumerate() {
            if keys[..i].iter().any(|other| other.kid == k.kid) {
                return Err(KeyError::DuplicateKid(k.kid.clone()));
            }
        }
        if keys.iter().filter(|k| k.current).count() > 1 {
            return Err(KeyError::MultipleCurrent);
        }
        Ok(KeySet { keys })
    }

    pub fn get(&self, kid: &str) -> Option<&KeyRecord> {
        self.keys.iter().find(|k| k.kid == kid)
    }

    pub fn current(&self) -> Option<&KeyRecord> {
        self.keys.iter().find(|k| k.current)
    }

    pub fn keys(&self) -> &[KeyRecord] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn without(&self, kid: &str) -> KeySet {
        KeySet {
            keys: self.keys.iter().filter(|k| k.kid != kid).cloned().collect(),
        }
    }
}

/// Private signing key. Never serialized except through [`PrivateKeyFile`].
#[derive(Clone)]
pub struct SigningKey {
    kid: String,
    alg: Algorithm,
    inner: ed25519_dalek::SigningKey,
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey")
            .field("kid", &self.kid)
            .field("alg", &self.alg)
            .finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn from_seed(alg: Algorithm, seed: [u8; 32]) -> Self {
        let inner = ed25519_dalek::SigningKey::from_bytes(&seed);
        SigningKey {
            kid: kid_for(&inner.verifying_key()),
            alg,
            inner,
        }
    }

    pub fn kid(&self) -> &str {
        &self.kid
    }

    pub fn alg(&self) -> Algorithm {
        self.alg
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.inner.verifying_key()
    }

    pub fn public_record(&self, current: bool) -> KeyRecord {
        KeyRecord {
            kid: self.kid.clone(),
            alg: self.alg,
            public: self.verifying_key(),
            current,
        }
    }

    pub fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.inner.sign(message).to_bytes()
    }

    pub fn to_file(&self) -> PrivateKeyFile {
        PrivateKeyFile {
            kid: self.kid.clone(),
            alg: self.alg,
            d: URL_SAFE_NO_PAD.encode(self.inner.to_bytes()),
        }
    }
}

/// On-disk form of a private key.
#[derive(Serialize, Deserialize)]
pub struct PrivateKeyFile {
    pub kid: String,
    pub alg: Algorithm,
    pub d: String,
}

impl TryFrom<PrivateKeyFile> for SigningKey {
    type Error = KeyError;

    fn try_from(file: PrivateKeyFile) -> Result<Self, Self::Error> {
        let seed: [u8; 32] = URL_SAFE_NO_PAD
            .decode(&file.d)
            .map_err(|e| KeyError::InvalidKey(e.to_string()))?
            .try_into()
            .map_err(|_| KeyError::InvalidKey("private seed must be 32 bytes".into()))?;
        let key = SigningKey::from_seed(file.alg, seed);
        if key.kid != file.kid {
            return Err(KeyError::InvalidKey(format!(
                "kid `{}` does not match key material",
                file.kid
            )));
        }
        Ok(key)
    }
}

/// Generates a fresh keypair from the OS entropy source.
pub fn generate_keypair(alg: &str) -> Result<(KeyRecord, SigningKey), KeyError> {
    generate_keypair_with(alg, &mut rand::rngs::OsRng)
}

pub fn generate_keypair_with<R: RngCore + CryptoRng>(
    alg: &str,
    rng: &mut R,
) -> Result<(KeyRecord, SigningKey), KeyError> {
    let alg: Algorithm = alg.parse()?;
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    let key = SigningKey::from_seed(alg, seed);
    Ok((key.public_record(false), key))
}
