//! The scope claim: a space-separated list of `op:path` capabilities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::path::{normalize_path, CanonicalPath, PathError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Read,
    Write,
}

impl Operation {
    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Read => "read",
            Operation::Write => "write",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operation {
    type Err = ScopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(Operation::Read),
            "write" => Ok(Operation::Write),
            other => Err(ScopeError::UnknownOp(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScopeError {
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
    #[error("scope item `{0}` is not of the form op:path")]
    MissingSeparator(String),
    #[error("empty scope item")]
    EmptyItem,
    #[error("scope path `{0}` contains a `.` or `..` segment")]
    DotSegment(String),
    #[error(transparent)]
    Path(#[from] PathError),
}

impl ScopeError {
    pub fn code(&self) -> &'static str {
        match self {
            ScopeError::UnknownOp(_) => "unknown_op",
            ScopeError::MissingSeparator(_) => "missing_separator",
            ScopeError::EmptyItem => "empty_item",
            ScopeError::DotSegment(_) => "dot_segment",
            ScopeError::Path(e) => e.code(),
        }
    }
}

/// One capability atom: an operation on a path subtree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Permission {
    pub op: Operation,
    pub path: CanonicalPath,
}

impl Permission {
    pub fn new(op: Operation, path: CanonicalPath) -> Self {
        Permission { op, path }
    }

    pub fn read(path: &str) -> Result<Self, ScopeError> {
        Ok(Permission::new(Operation::Read, normalize_path(path)?))
    }

    pub fn write(path: &str) -> Result<Self, ScopeError> {
        Ok(Permission::new(Operation::Write, normalize_path(path)?))
    }

    /// Same operation and our path covers `other`'s path.
    pub fn dominates(&self, other: &Permission) -> bool {
        self.op == other.op && self.path.covers(&other.path)
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.op, self.path)
    }
}

impl FromStr for Permission {
    type Err = ScopeError;

    fn from_str(item: &str) -> Result<Self, Self::Err> {
        if item.is_empty() {
            return Err(ScopeError::EmptyItem);
        }
        let (op, raw_path) = item
            .split_once(':')
            .ok_or_else(|| ScopeError::MissingSeparator(item.to_owned()))?;
        let op: Operation = op.parse()?;
        if raw_path.split('/').any(|s| s == "." || s == "..") {
            return Err(ScopeError::DotSegment(raw_path.to_owned()));
        }
        Ok(Permission::new(op, normalize_path(raw_path)?))
    }
}

impl Serialize for Permission {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Permission {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Parses a scope claim. Items are separated by single spaces; the empty
/// string is the empty list.
pub fn parse_scope(s: &str) -> Result<Vec<Permission>, ScopeError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(' ').map(str::parse).collect()
}

pub fn print_scope(perms: &[Permission]) -> String {
    let mut out = String::new();
    for (i, p) in perms.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&p.to_string());
    }
    out
}

/// Ordered permission list, serialized as the space-separated scope string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Scope(Vec<Permission>);

impl Scope {
    pub fn new(perms: Vec<Permission>) -> Self {
        Scope(perms)
    }

    pub fn permissions(&self) -> &[Permission] {
        &self.0
    }

    pub fn into_permissions(self) -> Vec<Permission> {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Permission> {
        self.0.iter()
    }

    /// Sorted, deduplicated scope string. Two scopes with the same atoms in
    /// any order share one canonical string.
    pub fn canonical_string(&self) -> String {
        let mut perms = self.0.clone();
        perms.sort();
        perms.dedup();
        print_scope(&perms)
    }
}

impl From<Vec<Permission>> for Scope {
    fn from(perms: Vec<Permission>) -> Self {
        Scope(perms)
    }
}

impl FromIterator<Permission> for Scope {
    fn from_iter<I: IntoIterator<Item = Permission>>(iter: I) -> Self {
        Scope(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Scope {
    type Item = &'a Permission;
    type IntoIter = std::slice::Iter<'a, Permission>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_scope(&self.0))
    }
}

impl FromStr for Scope {
    type Err = ScopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_scope(s).map(Scope)
    }
}

impl Serialize for Scope {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}
