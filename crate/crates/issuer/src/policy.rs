//! User and group policy: who may obtain which scopes, for which audiences,
//! and for how long.

use std::fmt;
use std::str::FromStr;

use captok_core::{attenuate, Operation, Permission, ScopeError};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const USERNAME_PLACEHOLDER: &str = "{username}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("no policy rule matches `{0}`")]
    NoMatchingRule(String),
    #[error("audience `{0}` is not permitted by any matching rule")]
    AudienceNotPermitted(String),
    #[error("requested `{0}` is not grantable")]
    Escalation(Permission),
    #[error("invalid policy: {0}")]
    Invalid(String),
}

impl PolicyError {
    pub fn code(&self) -> &'static str {
        match self {
            PolicyError::NoMatchingRule(_) => "no_matching_rule",
            PolicyError::AudienceNotPermitted(_) => "audience_not_permitted",
            PolicyError::Escalation(_) => "escalation",
            PolicyError::Invalid(_) => "invalid_policy",
        }
    }
}

/// Usernames may only contain characters that keep an expanded template a
/// single path segment.
pub fn is_legal_username(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b'@'))
}

/// A grantable permission whose path may contain `{username}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeTemplate {
    pub op: Operation,
    pub path: String,
}

impl ScopeTemplate {
    pub fn expand(&self, username: &str) -> Result<Permission, ScopeError> {
        let path = self.path.replace(USERNAME_PLACEHOLDER, username);
        format!("{}:{}", self.op, path).parse()
    }

    fn check(&self) -> Result<(), PolicyError> {
        let stripped = self.path.replace(USERNAME_PLACEHOLDER, "");
        if stripped.contains('{') || stripped.contains('}') {
            return Err(PolicyError::Invalid(format!(
                "template `{self}` has an unknown placeholder"
            )));
        }
        self.expand("user")
            .map(drop)
            .map_err(|e| PolicyError::Invalid(format!("template `{self}`: {e}")))
    }
}

impl fmt::Display for ScopeTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.op, self.path)
    }
}

impl FromStr for ScopeTemplate {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (op, path) = s
            .split_once(':')
            .ok_or_else(|| PolicyError::Invalid(format!("template `{s}` is not op:path")))?;
        let op = op
            .parse()
            .map_err(|e: ScopeError| PolicyError::Invalid(e.to_string()))?;
        let t = ScopeTemplate {
            op,
            path: path.to_owned(),
        };
        t.check()?;
        Ok(t)
    }
}

impl Serialize for ScopeTemplate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScopeTemplate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleMatch {
    User(String),
    Group(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    #[serde(rename = "match")]
    pub matches: RuleMatch,
    pub grantable: Vec<ScopeTemplate>,
    pub max_access_lifetime: i64,
    pub max_refresh_lifetime: i64,
    pub audiences: Vec<String>,
}

impl PolicyRule {
    fn applies_to(&self, sub: &str, groups: &[String]) -> bool {
        match &self.matches {
            RuleMatch::User(u) => u == sub,
            RuleMatch::Group(g) => groups.iter().any(|x| x == g),
        }
    }

    fn expanded(&self, sub: &str) -> Vec<Permission> {
        // Templates were checked at load time and `sub` is a legal
        // username, so expansion cannot fail here.
        self.grantable
            .iter()
            .filter_map(|t| t.expand(sub).ok())
            .collect()
    }
}

/// What a policy evaluation grants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub scopes: Vec<Permission>,
    pub audience: String,
    pub max_access_lifetime: i64,
    pub max_refresh_lifetime: i64,
}

/// The policy file: a JSON list of rules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy {
    rules: Vec<PolicyRule>,
}

impl Policy {
    pub fn new(rules: Vec<PolicyRule>) -> Result<Self, PolicyError> {
        let policy = Policy { rules };
        policy.validate()?;
        Ok(policy)
    }

    pub fn from_json(json: &str) -> Result<Self, PolicyError> {
        let policy: Policy =
            serde_json::from_str(json).map_err(|e| PolicyError::Invalid(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    fn validate(&self) -> Result<(), PolicyError> {
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.max_access_lifetime <= 0 || rule.max_refresh_lifetime <= 0 {
                return Err(PolicyError::Invalid(format!("rule {i}: lifetimes must be positive")));
            }
            if rule.max_access_lifetime > rule.max_refresh_lifetime {
                return Err(PolicyError::Invalid(format!(
                    "rule {i}: access lifetime exceeds refresh lifetime"
                )));
            }
            if rule.audiences.is_empty() || rule.audiences.iter().any(String::is_empty) {
                return Err(PolicyError::Invalid(format!("rule {i}: empty audience")));
            }
            for t in &rule.grantable {
                t.check()?;
            }
        }
        Ok(())
    }

    /// Every permission `sub` could be granted for `audience`.
    pub fn grantable(&self, sub: &str, groups: &[String], audience: &str) -> Vec<Permission> {
        let mut out: Vec<Permission> = self
            .rules
            .iter()
            .filter(|r| r.applies_to(sub, groups) && r.audiences.iter().any(|a| a == audience))
            .flat_map(|r| r.expanded(sub))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Grants `requested` (or everything grantable when empty) to `sub`.
    ///
    /// Lifetimes are the minimum over the applicable rules that cover at
    /// least one granted permission.
    pub fn evaluate(
        &self,
        sub: &str,
        groups: &[String],
        requested: &[Permission],
        audience: &str,
    ) -> Result<Grant, PolicyError> {
        let matching: Vec<&PolicyRule> = self
            .rules
            .iter()
            .filter(|r| is_legal_username(sub) && r.applies_to(sub, groups))
            .collect();
        if matching.is_empty() {
            return Err(PolicyError::NoMatchingRule(sub.to_owned()));
        }
        let applicable: Vec<(&PolicyRule, Vec<Permission>)> = matching
            .into_iter()
            .filter(|r| r.audiences.iter().any(|a| a == audience))
            .map(|r| (r, r.expanded(sub)))
            .collect();
        if applicable.is_empty() {
            return Err(PolicyError::AudienceNotPermitted(audience.to_owned()));
        }
        let mut grantable: Vec<Permission> =
            applicable.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
        grantable.sort();
        grantable.dedup();
        let scopes =
            attenuate(&grantable, requested).map_err(|e| PolicyError::Escalation(e.0))?;
        let contributing = applicable
            .iter()
            .filter(|(_, perms)| scopes.iter().any(|g| perms.iter().any(|p| p.dominates(g))));
        let (access, refresh) = contributing.fold((i64::MAX, i64::MAX), |(a, r), (rule, _)| {
            (a.min(rule.max_access_lifetime), r.min(rule.max_refresh_lifetime))
        });
        if scopes.is_empty() {
            // Rules exist but grant nothing for this audience.
            return Err(PolicyError::NoMatchingRule(sub.to_owned()));
        }
        Ok(Grant {
            scopes,
            audience: audience.to_owned(),
            max_access_lifetime: access,
            max_refresh_lifetime: refresh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use captok_core::parse_scope;

    const DATA: &str = "https://data.example.org";

    fn ligo_policy() -> Policy {
        Policy::from_json(
            r#"[
              {"match": {"group": "LDGUsers"},
               "grantable": ["read:/data/ligo/frames", "write:/store/user/{username}"],
               "max_access_lifetime": 600, "max_refresh_lifetime": 2592000,
               "audiences": ["https://data.example.org"]},
              {"match": {"user": "carol"},
               "grantable": ["read:/data/public"],
               "max_access_lifetime": 300, "max_refresh_lifetime": 86400,
               "audiences": ["https://data.example.org", "ANY"]}
            ]"#,
        )
        .unwrap()
    }

    #[test]
    fn ldg_member_gets_frames_and_home() {
        let grant = ligo_policy()
            .evaluate(
                "alice",
                &["LDGUsers".into()],
                &parse_scope("read:/data/ligo/frames write:/store/user/alice").unwrap(),
                DATA,
            )
            .unwrap();
        assert_eq!(
            grant.scopes,
            parse_scope("read:/data/ligo/frames write:/store/user/alice").unwrap()
        );
        assert_eq!(grant.max_access_lifetime, 600);
    }

    #[test]
    fn non_member_has_no_rule() {
        assert_eq!(
            ligo_policy().evaluate(
                "bob",
                &[],
                &parse_scope("read:/data/ligo/frames").unwrap(),
                DATA
            ),
            Err(PolicyError::NoMatchingRule("bob".into()))
        );
    }

    #[test]
    fn username_template_expansion() {
        let t: ScopeTemplate = "write:/store/user/{username}".parse().unwrap();
        assert_eq!(t.expand("alice").unwrap(), Permission::write("/store/user/alice").unwrap());
    }

    #[test]
    fn another_users_home_is_escalation() {
        let err = ligo_policy()
            .evaluate(
                "alice",
                &["LDGUsers".into()],
                &parse_scope("write:/store/user/bob").unwrap(),
                DATA,
            )
            .unwrap_err();
        assert_eq!(err.code(), "escalation");
    }

    #[test]
    fn audience_must_be_listed() {
        let err = ligo_policy()
            .evaluate("alice", &["LDGUsers".into()], &[], "https://elsewhere")
            .unwrap_err();
        assert_eq!(err, PolicyError::AudienceNotPermitted("https://elsewhere".into()));
    }

    #[test]
    fn empty_request_grants_everything_grantable() {
        let grant = ligo_policy()
            .evaluate("alice", &["LDGUsers".into()], &[], DATA)
            .unwrap();
        assert_eq!(grant.scopes.len(), 2);
    }

    #[test]
    fn lifetime_is_min_of_contributing_rules() {
        let policy = Policy::from_json(
            r#"[
              {"match": {"user": "dave"}, "grantable": ["read:/a"],
               "max_access_lifetime": 100, "max_refresh_lifetime": 1000, "audiences": ["x"]},
              {"match": {"group": "g"}, "grantable": ["read:/b"],
               "max_access_lifetime": 50, "max_refresh_lifetime": 500, "audiences": ["x"]}
            ]"#,
        )
        .unwrap();
        let only_a = policy
            .evaluate("dave", &["g".into()], &parse_scope("read:/a/1").unwrap(), "x")
            .unwrap();
        assert_eq!((only_a.max_access_lifetime, only_a.max_refresh_lifetime), (100, 1000));
        let both = policy.evaluate("dave", &["g".into()], &[], "x").unwrap();
        assert_eq!((both.max_access_lifetime, both.max_refresh_lifetime), (50, 500));
    }

    #[test]
    fn invalid_policies_rejected() {
        let bad = |json: &str| Policy::from_json(json).unwrap_err();
        assert!(matches!(
            bad(r#"[{"match":{"user":"a"},"grantable":["read:/x/{who}"],"max_access_lifetime":1,"max_refresh_lifetime":2,"audiences":["x"]}]"#),
            PolicyError::Invalid(_)
        ));
        assert!(matches!(
            bad(r#"[{"match":{"user":"a"},"grantable":["read:/x/../y"],"max_access_lifetime":1,"max_refresh_lifetime":2,"audiences":["x"]}]"#),
            PolicyError::Invalid(_)
        ));
        assert!(matches!(
            bad(r#"[{"match":{"user":"a"},"grantable":["read:/x"],"max_access_lifetime":3,"max_refresh_lifetime":2,"audiences":["x"]}]"#),
            PolicyError::Invalid(_)
        ));
        assert!(matches!(
            bad(r#"[{"match":{"user":"a"},"grantable":["read:/x"],"max_access_lifetime":0,"max_refresh_lifetime":2,"audiences":["x"]}]"#),
            PolicyError::Invalid(_)
        ));
    }

    #[test]
    fn illegal_usernames_never_match() {
        assert!(!is_legal_username("a/b"));
        assert!(!is_legal_username(".."));
        assert!(!is_legal_username(""));
        assert!(is_legal_username("alice.smith"));
    }
}
