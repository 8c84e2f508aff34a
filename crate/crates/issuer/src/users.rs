//! Local user directory. Secrets are kept only as salted PBKDF2-SHA256
//! digests.

use std::collections::BTreeMap;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::policy::is_legal_username;

pub const DEFAULT_ITERATIONS: u32 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UserError {
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("illegal username `{0}`")]
    IllegalUsername(String),
    #[error("invalid user directory: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEntry {
    pub salt: String,
    pub digest: String,
    pub iterations: u32,
    #[serde(default)]
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDirectory {
    users: BTreeMap<String, UserEntry>,
}

fn derive(secret: &str, salt: &[u8], iterations: u32) -> [u8; 32] {
    let mut out = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(secret.as_bytes(), salt, iterations, &mut out);
    out
}

impl UserDirectory {
    pub fn from_json(json: &str) -> Result<Self, UserError> {
        let dir: UserDirectory =
            serde_json::from_str(json).map_err(|e| UserError::Invalid(e.to_string()))?;
        if let Some(bad) = dir.users.keys().find(|u| !is_legal_username(u)) {
            return Err(UserError::IllegalUsername(bad.clone()));
        }
        Ok(dir)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("user directory serializes")
    }

    pub fn add_user(
        &mut self,
        name: &str,
        secret: &str,
        groups: Vec<String>,
        iterations: u32,
    ) -> Result<(), UserError> {
        if !is_legal_username(name) {
            return Err(UserError::IllegalUsername(name.to_owned()));
        }
        let mut salt = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut salt);
        let digest = derive(secret, &salt, iterations);
        self.users.insert(
            name.to_owned(),
            UserEntry {
                salt: URL_SAFE_NO_PAD.encode(salt),
                digest: URL_SAFE_NO_PAD.encode(digest),
                iterations,
                groups,
            },
        );
        Ok(())
    }

    pub fn groups(&self, name: &str) -> Option<&[String]> {
        self.users.get(name).map(|u| u.groups.as_slice())
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Checks `secret` and returns the user's groups.
    pub fn authenticate(&self, name: &str, secret: &str) -> Result<Vec<String>, UserError> {
        let Some(entry) = self.users.get(name) else {
            // Spend the same work on unknown users.
            derive(secret, b"unknown-user-salt", DEFAULT_ITERATIONS.min(1_000));
            return Err(UserError::AuthenticationFailed);
        };
        let salt = URL_SAFE_NO_PAD
            .decode(&entry.salt)
            .map_err(|_| UserError::AuthenticationFailed)?;
        let expected = URL_SAFE_NO_PAD
            .decode(&entry.digest)
            .map_err(|_| UserError::AuthenticationFailed)?;
        let actual = derive(secret, &salt, entry.iterations);
        if bool::from(actual.as_slice().ct_eq(&expected)) {
            Ok(entry.groups.clone())
        } else {
            Err(UserError::AuthenticationFailed)
        }
    }
}
