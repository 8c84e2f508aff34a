//! Canonical absolute paths.
//!
//! A canonical path starts with `/`, has no empty, `.` or `..` segments and
//! no trailing slash (the root `/` is the only exception). Every comparison
//! the authorization engine makes is done on segment lists, never on raw
//! string prefixes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("path is empty")]
    Empty,
    #[error("path `{0}` is not absolute")]
    Relative(String),
    #[error("path `{0}` contains a `..` segment")]
    Traversal(String),
    #[error("path contains an embedded NUL byte")]
    EmbeddedNul,
}

impl PathError {
    pub fn code(&self) -> &'static str {
        match self {
            PathError::Empty => "empty_path",
            PathError::Relative(_) => "relative_path",
            PathError::Traversal(_) => "traversal_rejected",
            PathError::EmbeddedNul => "embedded_nul",
        }
    }
}

/// Normalizes a raw path: collapses duplicate slashes, drops `.` segments and
/// trailing slashes. `..` is rejected, never resolved.
pub fn normalize_path(raw: &str) -> Result<CanonicalPath, PathError> {
    if raw.is_empty() {
        return Err(PathError::Empty);
    }
    if raw.contains('\0') {
        return Err(PathError::EmbeddedNul);
    }
    if !raw.starts_with('/') {
        return Err(PathError::Relative(raw.to_owned()));
    }
    let mut out = String::with_capacity(raw.len());
    for segment in raw.split('/') {
        match segment {
            "" | "." => continue,
            ".." => return Err(PathError::Traversal(raw.to_owned())),
            s => {
                out.push('/');
                out.push_str(s);
            }
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    Ok(CanonicalPath(out))
}

/// An absolute path in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalPath(String);

impl CanonicalPath {
    pub fn root() -> Self {
        CanonicalPath("/".to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0 == "/"
    }

    /// Path segments, empty for the root.
    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/').filter(|s| !s.is_empty())
    }

    /// True when `self` equals `other` or is an ancestor of it at a segment
    /// boundary: `/data/ligo` covers `/data/ligo/x` but not `/data/ligo2`.
    pub fn covers(&self, other: &CanonicalPath) -> bool {
        if self.is_root() {
            return true;
        }
        match other.0.strip_prefix(&self.0) {
            Some(rest) => rest.is_empty() || rest.starts_with('/'),
            None => false,
        }
    }

    /// Re-roots `self` relative to `mount`. Returns `None` when `self` does
    /// not lie under `mount`.
    pub fn strip_mount(&self, mount: &CanonicalPath) -> Option<CanonicalPath> {
        if !mount.covers(self) {
            return None;
        }
        if mount.is_root() {
            return Some(self.clone());
        }
        let rest = &self.0[mount.0.len()..];
        if rest.is_empty() {
            Some(CanonicalPath::root())
        } else {
            Some(CanonicalPath(rest.to_owned()))
        }
    }

    /// Appends a canonical path under this one.
    pub fn join(&self, tail: &CanonicalPath) -> CanonicalPath {
        match (self.is_root(), tail.is_root()) {
            (_, true) => self.clone(),
            (true, false) => tail.clone(),
            (false, false) => CanonicalPath(format!("{}{}", self.0, tail.0)),
        }
    }
}

impl fmt::Display for CanonicalPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CanonicalPath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_path(s)
    }
}

impl AsRef<str> for CanonicalPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl Serialize for CanonicalPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CanonicalPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        normalize_path(&raw).map_err(serde::de::Error::custom)
    }
}
