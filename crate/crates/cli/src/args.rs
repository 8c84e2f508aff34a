use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "captok", version, about = "Capability tokens for distributed workflows")]
pub struct Cli {
    /// Log filter (also read from RUST_LOG).
    #[arg(long, global = true, env = "CAPTOK_LOG")]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an issuer signing keypair.
    Keygen(KeygenArgs),
    /// Obtain an access token from an issuer.
    Issue(IssueArgs),
    /// Decode a token without verifying it.
    Inspect(InspectArgs),
    /// Verify a token offline and print the decision.
    Verify(VerifyArgs),
    /// Run the token issuer.
    ServeIssuer(ServeIssuerArgs),
    /// Run the data gateway.
    ServeGateway(ServeGatewayArgs),
    /// Run the credential manager.
    ServeManager(ServeManagerArgs),
    /// Ask a running credential manager for a job token.
    Access(AccessArgs),
    /// Manage the encrypted refresh-token vault.
    #[command(subcommand)]
    Vault(VaultCommand),
    /// Add or replace a user in an issuer user file.
    UserAdd(UserAddArgs),
    /// Execute a workflow file and write its report.
    RunWorkflow(RunWorkflowArgs),
}

#[derive(Debug, Args)]
pub struct KeygenArgs {
    /// Directory receiving signing-key.json and jwks.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value = "EdDSA")]
    pub alg: String,
    /// Overwrite existing key files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct IssueArgs {
    #[arg(long, env = "CAPTOK_ISSUER")]
    pub issuer: String,
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long, env = "CAPTOK_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
    /// Exchange this refresh token instead of authenticating.
    #[arg(long, env = "CAPTOK_REFRESH_TOKEN", hide_env_values = true)]
    pub refresh_token: Option<String>,
    /// Space-separated permissions, e.g. "read:/data write:/out".
    #[arg(long, default_value = "")]
    pub scope: String,
    #[arg(long)]
    pub audience: String,
    #[arg(long)]
    pub origin: Option<String>,
    /// Print the refresh grant as JSON instead of minting an access token.
    #[arg(long)]
    pub grant_only: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Token, or `-` to read it from stdin.
    pub token: String,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Token, or `-` to read it from stdin.
    pub token: String,
    #[arg(long)]
    pub issuer: String,
    #[arg(long)]
    pub audience: String,
    /// Key set file; fetched from the issuer when omitted.
    #[arg(long)]
    pub jwks: Option<PathBuf>,
    #[arg(long, default_value_t = captok_core::DEFAULT_SKEW)]
    pub skew: i64,
    /// Also accept tokens for audience `ANY`.
    #[arg(long)]
    pub any_audience: bool,
    /// Evaluate at this Unix time instead of now.
    #[arg(long)]
    pub at: Option<i64>,
}

#[derive(Debug, Args)]
pub struct ServeIssuerArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Public base URL, also the `iss` claim.
    #[arg(long)]
    pub issuer: String,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub users: PathBuf,
    /// Signing key written by `keygen`; a fresh key is used when omitted.
    #[arg(long)]
    pub signing_key: Option<PathBuf>,
    /// Persist refresh grants to this JSON file.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub access_lifetime: Option<i64>,
    #[arg(long)]
    pub refresh_lifetime: Option<i64>,
    #[arg(long)]
    pub key_overlap: Option<i64>,
    /// Rotate the signing key every this many seconds.
    #[arg(long)]
    pub rotate_every: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeGatewayArgs {
    #[arg(long, default_value = "127.0.0.1:8443")]
    pub listen: String,
    #[arg(long)]
    pub doc_root: PathBuf,
    #[arg(long)]
    pub issuer: String,
    #[arg(long)]
    pub audience: String,
    #[arg(long, default_value_t = 3600)]
    pub refetch_interval: i64,
    /// Accept tokens whose audience is `ANY`.
    #[arg(long)]
    pub lax_audience: bool,
    /// Require the client identifier to match a token's origin claim.
    #[arg(long)]
    pub enforce_origin: bool,
    #[arg(long, default_value = "/")]
    pub mount: String,
    /// Refuse requests once the key cache is stale.
    #[arg(long)]
    pub fail_closed: bool,
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
    #[arg(long)]
    pub key_cache: Option<PathBuf>,
    #[arg(long, default_value_t = captok_core::DEFAULT_SKEW)]
    pub skew: i64,
    /// Validate every request through the issuer's introspection endpoint.
    #[arg(long)]
    pub introspect: bool,
}

#[derive(Debug, Args)]
pub struct VaultLocation {
    #[arg(long, default_value = "captok.vault")]
    pub vault: PathBuf,
    /// Vault key file written by `vault keygen`.
    #[arg(long, env = "CAPTOK_VAULT_KEY")]
    pub key: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeManagerArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    pub listen: String,
    #[command(flatten)]
    pub vault: VaultLocation,
    /// Issuer base URL; repeat for several issuers.
    #[arg(long = "issuer", required = true)]
    pub issuers: Vec<String>,
    #[arg(long, default_value_t = 60)]
    pub refresh_margin: i64,
    /// Do not share access tokens between jobs by default.
    #[arg(long)]
    pub no_share: bool,
}

#[derive(Debug, Args)]
pub struct AccessArgs {
    #[arg(long, default_value = "http://127.0.0.1:8090")]
    pub manager: String,
    #[arg(long)]
    pub job: String,
    #[arg(long)]
    pub user: String,
    /// stage_in, execute or stage_out.
    #[arg(long)]
    pub phase: String,
    #[arg(long)]
    pub scope: String,
    #[arg(long)]
    pub audience: String,
    #[arg(long)]
    pub origin: Option<String>,
    #[arg(long)]
    pub no_share: bool,
}

#[derive(Debug, Subcommand)]
pub enum VaultCommand {
    /// Create a vault key file.
    Keygen {
        #[arg(long, env = "CAPTOK_VAULT_KEY")]
        key: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Store a refresh token (read from CAPTOK_REFRESH_TOKEN or stdin).
    Store(VaultStoreArgs),
    /// List stored grants; handles are shown as fingerprints.
    List {
        #[command(flatten)]
        vault: VaultLocation,
    },
}

#[derive(Debug, Args)]
pub struct VaultStoreArgs {
    #[command(flatten)]
    pub vault: VaultLocation,
    #[arg(long)]
    pub user: String,
    #[arg(long)]
    pub issuer: String,
    #[arg(long)]
    pub scope: String,
    #[arg(long = "audience", required = true)]
    pub audiences: Vec<String>,
    /// Seconds until the refresh token expires.
    #[arg(long)]
    pub expires_in: i64,
    #[arg(long, env = "CAPTOK_REFRESH_TOKEN", hide_env_values = true)]
    pub refresh_token: Option<String>,
}

#[derive(Debug, Args)]
pub struct UserAddArgs {
    #[arg(long)]
    pub users: PathBuf,
    #[arg(long)]
    pub name: String,
    /// Comma-separated group list.
    #[arg(long, value_delimiter = ',')]
    pub groups: Vec<String>,
    #[arg(long, default_value_t = captok_issuer::users::DEFAULT_ITERATIONS)]
    pub iterations: u32,
    /// Password; read from stdin when unset.
    #[arg(long, env = "CAPTOK_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunWorkflowArgs {
    pub workflow: PathBuf,
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
    /// Also write the message transcript as JSON lines.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Run the issuer and gateway on loopback sockets.
    #[arg(long)]
    pub http: bool,
    /// Exit nonzero if any invariant check fails.
    #[arg(long)]
    pub strict: bool,
}
