//! Access decisions over verified scopes.
//!
//! Matching is done per path segment: `read:/data/ligo` grants
//! `/data/ligo/frames` but not `/data/ligo2`. Read and write are independent
//! and neither implies the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::{normalize_path, CanonicalPath, PathError};
use crate::scope::{Operation, Permission};
use crate::token::VerifiedClaims;

/// A request as it arrives at a data service, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub op: Operation,
    pub path: String,
    pub origin: Option<String>,
}

impl AccessRequest {
    pub fn canonical_path(&self) -> Result<CanonicalPath, PathError> {
        normalize_path(&self.path)
    }
}

/// True iff some permission grants `op` on `path` or one of its ancestors.
pub fn permits(perms: &[Permission], op: Operation, path: &CanonicalPath) -> bool {
    perms.iter().any(|p| p.op == op && p.path.covers(path))
}

/// Access-control list derived from one verified token, rooted at a
/// gateway's mount point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acl {
    entries: Vec<Permission>,
}

impl Acl {
    pub fn entries(&self) -> &[Permission] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn allows(&self, op: Operation, path: &CanonicalPath) -> bool {
        permits(&self.entries, op, path)
    }
}

/// Re-roots every permission under `mount` relative to it. A permission on
/// the mount or one of its ancestors becomes `op:/`; permissions outside the
/// mount are dropped. An empty result denies everything.
pub fn acl_from_token(claims: &VerifiedClaims, mount: &CanonicalPath) -> Acl {
    acl_from_permissions(claims.scope.permissions(), mount)
}

pub fn acl_from_permissions(perms: &[Permission], mount: &CanonicalPath) -> Acl {
    let entries = perms
        .iter()
        .filter_map(|p| {
            if p.path.covers(mount) {
                Some(Permission::new(p.op, CanonicalPath::root()))
            } else {
                p.path
                    .strip_mount(mount)
                    .map(|path| Permission::new(p.op, path))
            }
        })
        .collect();
    Acl { entries }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("requested `{0}` is not covered by the parent grant")]
pub struct EscalationError(pub Permission);

/// Narrows `parent` to `requested`. Every requested atom must be dominated by
/// a parent atom (same op, ancestor-or-equal path). An empty request returns
/// the parent unchanged.
pub fn attenuate(
    parent: &[Permission],
    requested: &[Permission],
) -> Result<Vec<Permission>, EscalationError> {
    if requested.is_empty() {
        return Ok(parent.to_vec());
    }
    if let Some(bad) = requested
        .iter()
        .find(|r| !parent.iter().any(|p| p.dominates(r)))
    {
        return Err(EscalationError(bad.clone()));
    }
    Ok(requested.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scope::parse_scope;

    fn perms(s: &str) -> Vec<Permission> {
        parse_scope(s).unwrap()
    }

    fn p(s: &str) -> CanonicalPath {
        normalize_path(s).unwrap()
    }

    #[test]
    fn ancestor_grants_descendant() {
        assert!(permits(&perms("read:/data"), Operation::Read, &p("/data/frames/x.gwf")));
    }

    #[test]
    fn sibling_with_shared_prefix_is_denied() {
        assert!(!permits(&perms("read:/data/ligo"), Operation::Read, &p("/data/ligo2/a")));
    }

    #[test]
    fn ops_are_independent() {
        assert!(!permits(
            &perms("write:/store/user/alice"),
            Operation::Read,
            &p("/store/user/alice/out")
        ));
        assert!(!permits(&perms("read:/x"), Operation::Write, &p("/x")));
    }

    #[test]
    fn acl_rerooting() {
        let mount = p("/data");
        assert_eq!(
            acl_from_permissions(&perms("read:/data/ligo"), &mount).entries(),
            perms("read:/ligo")
        );
        assert!(acl_from_permissions(&perms("read:/other"), &mount).is_empty());
        assert_eq!(
            acl_from_permissions(&perms("read:/data write:/data/out"), &mount).entries(),
            perms("read:/ write:/out")
        );
        assert_eq!(
            acl_from_permissions(&perms("read:/data2 read:/data/x"), &mount).entries(),
            perms("read:/x")
        );
        assert_eq!(
            acl_from_permissions(&perms("write:/"), &mount).entries(),
            perms("write:/")
        );
    }

    #[test]
    fn attenuation_cases() {
        assert_eq!(
            attenuate(&perms("read:/data"), &perms("read:/data/ligo")).unwrap(),
            perms("read:/data/ligo")
        );
        assert_eq!(
            attenuate(&perms("read:/data"), &perms("write:/data")),
            Err(EscalationError(Permission::write("/data").unwrap()))
        );
        assert_eq!(
            attenuate(&perms("read:/a write:/b"), &perms("read:/a/x write:/b/y")).unwrap(),
            perms("read:/a/x write:/b/y")
        );
        assert_eq!(attenuate(&perms("read:/a"), &[]).unwrap(), perms("read:/a"));
        assert_eq!(
            attenuate(&perms("read:/a"), &perms("read:/a/x read:/b read:/c")),
            Err(EscalationError(Permission::read("/b").unwrap()))
        );
    }
}
