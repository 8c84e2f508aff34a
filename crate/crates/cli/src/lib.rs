//! The `captok` command-line tool: a client for the issuer, gateway and
//! credential manager, and a launcher for each service.

pub mod args;
mod commands;
mod serve;

use std::path::PathBuf;

use captok_client::ClientError;
use captok_core::wire::IssuerError;
use captok_core::{KeyError, MalformedToken, VerifyError};
use captok_harness::HarnessError;
use captok_manager::VaultError;
use serde_json::json;
use thiserror::Error;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} already exists (use --force to overwrite)")]
    Exists(PathBuf),
    #[error("{what}: {detail}")]
    Invalid { what: String, detail: String },
    #[error("token rejected: {0}")]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Malformed(#[from] MalformedToken),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Issuer(#[from] IssuerError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Vault(#[from] VaultError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0}")]
    Serve(String),
    #[error("{failed} invariant check(s) failed")]
    Invariants { failed: usize },
}

impl CliError {
    pub fn code(&self) -> &str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io_error",
            CliError::Exists(_) => "already_exists",
            CliError::Invalid { .. } => "invalid_input",
            CliError::Verify(e) => e.code(),
            CliError::Malformed(_) => "malformed",
            CliError::Key(_) => "invalid_key",
            CliError::Issuer(e) => e.code(),
            CliError::Client(e) => e.code(),
            CliError::Vault(e) => e.code(),
            CliError::Harness(e) => e.code(),
            CliError::Serve(_) => "server_error",
            CliError::Invariants { .. } => "invariant_violation",
        }
    }

    /// The single-line JSON form written to stderr.
    pub fn to_json(&self) -> String {
        json!({"error": self.code(), "detail": self.to_string()}).to_string()
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn invalid(what: &str) -> impl FnOnce(String) -> CliError + '_ {
        move |detail| CliError::Invalid {
            what: what.to_owned(),
            detail,
        }
    }
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    use args::Command::*;
    match cli.command {
        Keygen(a) => commands::keygen(a),
        Issue(a) => commands::issue(a).await,
        Inspect(a) => commands::inspect(a),
        Verify(a) => commands::verify(a).await,
        ServeIssuer(a) => serve::issuer(a).await,
        ServeGateway(a) => serve::gateway(a).await,
        ServeManager(a) => serve::manager(a).await,
        Access(a) => commands::access(a).await,
        Vault(c) => commands::vault(c),
        UserAdd(a) => commands::user_add(a),
        RunWorkflow(a) => commands::run_workflow(a).await,
    }
}
