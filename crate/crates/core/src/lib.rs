//! Capability tokens: wire format, key material, offline verification and the
//! path-scoped authorization engine shared by the issuer, token manager and
//! data gateway.

pub mod authz;
pub mod claims;
pub mod clock;
pub mod keys;
pub mod path;
pub mod scope;
pub mod token;
pub mod wire;

pub use authz::{acl_from_permissions, acl_from_token, attenuate, permits, AccessRequest, Acl, EscalationError};
pub use claims::{ClaimsError, TokenClaims, ANY_AUDIENCE, FORMAT_VERSION};
pub use clock::{Clock, ManualClock, SystemClock};
pub use keys::{generate_keypair, generate_keypair_with, Algorithm, KeyError, KeyRecord, KeySet, PrivateKeyFile, SigningKey};
pub use path::{normalize_path, CanonicalPath, PathError};
pub use scope::{parse_scope, print_scope, Operation, Permission, Scope, ScopeError};
pub use token::{decode_unverified, encode_token, verify_token, EncodeError, Header, MalformedToken, Validation, VerifiedClaims, VerifyError, DEFAULT_SKEW};
