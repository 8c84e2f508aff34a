//! Encrypted-at-rest store of refresh handles.
//!
//! File layout: `b"CAPTOKV"` magic, one format-version byte, a 24-byte
//! nonce, then XChaCha20-Poly1305 ciphertext of the JSON entry list. The
//! magic and version byte are bound in as associated data.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use captok_core::Scope;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const VAULT_MAGIC: &[u8; 7] = b"CAPTOKV";
pub const VAULT_VERSION: u8 = 1;
const NONCE_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("vault is locked: no vault key provisioned")]
    Locked,
    #[error("vault I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("vault file is not a recognized vault (bad magic)")]
    BadMagic,
    #[error("unsupported vault format version {0}")]
    Version(u8),
    #[error("vault decryption failed (wrong key or tampered file)")]
    Decrypt,
    #[error("vault encryption failed")]
    Encrypt,
    #[error("vault contents invalid: {0}")]
    Corrupt(String),
    #[error("invalid vault key: {0}")]
    BadKey(String),
}

impl VaultError {
    pub fn code(&self) -> &'static str {
        match self {
            VaultError::Locked => "vault_locked",
            VaultError::Encrypt => "encryption_failed",
            VaultError::Decrypt => "decryption_failed",
            _ => "vault_error",
        }
    }
}

/// 256-bit vault key, stored hex-encoded in a local key file.
#[derive(Clone)]
pub struct VaultKey([u8; 32]);

impl fmt::Debug for VaultKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("VaultKey(..)")
    }
}

impl VaultKey {
    pub fn generate() -> Self {
        let mut key = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut key);
        VaultKey(key)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        VaultKey(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VaultError> {
        let text = fs::read_to_string(path)?;
        let bytes = hex::decode(text.trim()).map_err(|e| VaultError::BadKey(e.to_string()))?;
        let bytes: [u8; 32] = bytes
            .try_into()
            .map_err(|_| VaultError::BadKey("expected 32 bytes".into()))?;
        Ok(VaultKey(bytes))
    }

    /// Writes the key file, readable by the owner only.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VaultError> {
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create_new(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut f = opts.open(path)?;
        f.write_all(hex::encode(self.0).as_bytes())?;
        Ok(())
    }
}

/// A refresh handle. Debug output never shows the value.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RefreshHandle(String);

impl RefreshHandle {
    pub fn new(value: impl Into<String>) -> Self {
        RefreshHandle(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    /// Short digest, safe to print.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.0.as_bytes());
        format!("sha256:{}", &URL_SAFE_NO_PAD.encode(digest)[..12])
    }
}

impl fmt::Debug for RefreshHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RefreshHandle({})", self.fingerprint())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultEntry {
    pub user: String,
    pub issuer: String,
    pub handle: RefreshHandle,
    pub scopes: Scope,
    pub audiences: Vec<String>,
    pub expires_at: i64,
}

/// Entry metadata with the handle replaced by its fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultListing {
    pub user: String,
    pub issuer: String,
    pub handle: String,
    pub scopes: String,
    pub audiences: Vec<String>,
    pub expires_at: i64,
}

impl From<&VaultEntry> for VaultListing {
    fn from(e: &VaultEntry) -> Self {
        VaultListing {
            user: e.user.clone(),
            issuer: e.issuer.clone(),
            handle: e.handle.fingerprint(),
            scopes: e.scopes.to_string(),
            audiences: e.audiences.clone(),
            expires_at: e.expires_at,
        }
    }
}

#[derive(Debug)]
pub struct Vault {
    path: Option<PathBuf>,
    key: Option<VaultKey>,
    entries: Vec<VaultEntry>,
}

impl Vault {
    /// Opens (or prepares to create) a vault file. Without a key the vault
    /// is locked: it cannot be read or written.
    pub fn open(path: impl Into<PathBuf>, key: Option<VaultKey>) -> Result<Self, VaultError> {
        let path = path.into();
        let entries = match (&key, fs::read(&path)) {
            (Some(k), Ok(bytes)) => decrypt(k, &bytes)?,
            (_, Err(e)) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            (_, Err(e)) => return Err(e.into()),
            (None, Ok(_)) => Vec::new(),
        };
        Ok(Vault {
            path: Some(path),
            key,
            entries,
        })
    }

    /// A vault that never touches disk.
    pub fn in_memory(key: Option<VaultKey>) -> Self {
        Vault {
            path: None,
            key,
            entries: Vec::new(),
        }
    }

    pub fn is_locked(&self) -> bool {
        self.key.is_none()
    }

    /// Stores a handle. An existing entry with the same user, issuer and
    /// scope set is replaced.
    pub fn store(&mut self, entry: VaultEntry) -> Result<(), VaultError> {
        let key = self.key.as_ref().ok_or(VaultError::Locked)?;
        let scope_key = entry.scopes.canonical_string();
        self.entries.retain(|e| {
            !(e.user == entry.user
                && e.issuer == entry.issuer
                && e.scopes.canonical_string() == scope_key)
        });
        self.entries.push(entry);
        if let Some(path) = &self.path {
            let bytes = encrypt(key, &self.entries)?;
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, path)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> Result<&[VaultEntry], VaultError> {
        if self.is_locked() {
            return Err(VaultError::Locked);
        }
        Ok(&self.entries)
    }

    pub fn list(&self) -> Result<Vec<VaultListing>, VaultError> {
        Ok(self.entries()?.iter().map(VaultListing::from).collect())
    }
}

fn aad() -> [u8; 8] {
    let mut out = [0u8; 8];
    out[..7].copy_from_slice(VAULT_MAGIC);
    out[7] = VAULT_VERSION;
    out
}

fn encrypt(key: &VaultKey, entries: &[VaultEntry]) -> Result<Vec<u8>, VaultError> {
    let cipher = XChaCha20Poly1305::new((&key.0).into());
    let mut nonce = [0u8; NONCE_LEN];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    let plaintext = serde_json::to_vec(entries).expect("vault entries serialize");
    let ad = aad();
    let ciphertext = cipher
        .encrypt(
            XNonce::from_slice(&nonce),
            Payload {
                msg: &plaintext,
                aad: &ad,
            },
        )
        .map_err(|_| VaultError::Encrypt)?;
    let mut out = Vec::with_capacity(8 + NONCE_LEN + ciphertext.len());
    out.extend_from_slice(&ad);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ciphertext);
    Ok(out)
}

fn decrypt(key: &VaultKey, bytes: &[u8]) -> Result<Vec<VaultEntry>, VaultError> {
    if bytes.len() < 8 + NONCE_LEN || &bytes[..7] != VAULT_MAGIC {
        return Err(VaultError::BadMagic);
    }
    if bytes[7] != VAULT_VERSION {
        return Err(VaultError::Version(bytes[7]));
    }
    let cipher = XChaCha20Poly1305::new((&key.0).into());
    let nonce = XNonce::from_slice(&bytes[8..8 + NONCE_LEN]);
    let plaintext = cipher
        .decrypt(
            nonce,
            Payload {
                msg: &bytes[8 + NONCE_LEN..],
                aad: &bytes[..8],
            },
        )
        .map_err(|_| VaultError::Decrypt)?;
    serde_json::from_slice(&plaintext).map_err(|e| VaultError::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(handle: &str, scopes: &str) -> VaultEntry {
        VaultEntry {
            user: "alice".into(),
            issuer: "https://tokens.example.org".into(),
            handle: RefreshHandle::new(handle),
            scopes: scopes.parse().unwrap(),
            audiences: vec!["https://data.example.org".into()],
            expires_at: 99,
        }
    }

    #[test]
    fn listing_redacts_handle() {
        let mut v = Vault::in_memory(Some(VaultKey::generate()));
        v.store(entry("super-secret-handle-value", "read:/data")).unwrap();
        let list = v.list().unwrap();
        assert_eq!(list[0].scopes, "read:/data");
        assert!(list[0].handle.starts_with("sha256:"));
        assert!(!format!("{list:?}").contains("super-secret"));
        assert!(!format!("{v:?}").contains("super-secret"));
    }

    #[test]
    fn ciphertext_leaks_no_handle_substring() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vault.bin");
        let key = VaultKey::generate();
        let handle = "Zx3kP9qL2mN8vB4cR7tY1wE6uI0oA5sD";
        let mut v = Vault::open(&path, Some(key.clone())).unwrap();
        v.store(entry(handle, "read:/data")).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..7], VAULT_MAGIC);
        assert_eq!(bytes[7], VAULT_VERSION);
        // No window of 6+ handle bytes appears anywhere in the file.
        let h = handle.as_bytes();
        for len in 6..=h.len() {
            for window in h.windows(len) {
                assert!(!bytes.windows(len).any(|w| w == window));
            }
        }
        let reopened = Vault::open(&path, Some(key)).unwrap();
        assert_eq!(reopened.entries().unwrap()[0].handle.expose(), handle);
    }

    #[test]
    fn locked_without_key() {
        let mut v = Vault::in_memory(None);
        assert!(matches!(v.store(entry("h", "read:/a")), Err(VaultError::Locked)));
        assert_eq!(v.list().unwrap_err().code(), "vault_locked");
    }

    #[test]
    fn wrong_key_and_tamper_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vault.bin");
        let mut v = Vault::open(&path, Some(VaultKey::generate())).unwrap();
        v.store(entry("h", "read:/a")).unwrap();
        assert!(matches!(
            Vault::open(&path, Some(VaultKey::generate())),
            Err(VaultError::Decrypt)
        ));
        let mut bytes = fs::read(&path).unwrap();
        bytes[7] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Vault::open(&path, Some(VaultKey::generate())),
            Err(VaultError::Version(9))
        ));
    }

    #[test]
    fn duplicate_scope_set_replaces() {
        let mut v = Vault::in_memory(Some(VaultKey::generate()));
        v.store(entry("h1", "read:/a write:/b")).unwrap();
        v.store(entry("h2", "write:/b read:/a")).unwrap();
        v.store(entry("h3", "read:/a")).unwrap();
        let entries = v.entries().unwrap();
        assert_eq!(entries.len(), 2);
        assert!(entries.iter().any(|e| e.handle.expose() == "h2"));
    }

    #[test]
    fn key_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vault.key");
        let key = VaultKey::generate();
        key.save(&path).unwrap();
        assert!(key.save(&path).is_err());
        assert_eq!(VaultKey::load(&path).unwrap().0, key.0);
    }
}
