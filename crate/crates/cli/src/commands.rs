use std::fs;
use std::io::{BufRead, Read};
use std::path::Path;

use captok_client::{IssuerClient, ManagerClient};
use captok_core::wire::{IssuerApi, MintRequest};
use captok_core::{
    decode_unverified, generate_keypair, verify_token, Clock, KeySet, PrivateKeyFile, Scope,
    SystemClock, Validation,
};
use captok_harness::WorkflowRun;
use captok_issuer::UserDirectory;
use captok_manager::{Phase, RefreshHandle, TokenRequest, Vault, VaultEntry, VaultKey};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::CliError;

pub const SIGNING_KEY_FILE: &str = "signing-key.json";
pub const JWKS_FILE: &str = "jwks.json";

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn read_token(arg: &str) -> Result<String, CliError> {
    if arg != "-" {
        return Ok(arg.trim().to_owned());
    }
    let mut s = String::new();
    std::io::stdin()
        .read_to_string(&mut s)
        .map_err(CliError::io("<stdin>"))?;
    Ok(s.trim().to_owned())
}

/// A secret from a flag/environment value, or the first line of stdin.
fn secret_or_stdin(value: Option<String>, what: &str) -> Result<String, CliError> {
    if let Some(v) = value {
        return Ok(v);
    }
    let mut line = String::new();
    std::io::stdin()
        .lock()
        .read_line(&mut line)
        .map_err(CliError::io("<stdin>"))?;
    let line = line.trim_end_matches(['\r', '\n']).to_owned();
    if line.is_empty() {
        return Err(CliError::Usage(format!("no {what} given on stdin")));
    }
    Ok(line)
}

fn parse_scope(s: &str) -> Result<Scope, CliError> {
    s.parse::<Scope>()
        .map_err(|e| CliError::invalid("scope")(e.to_string()))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(what)(format!("{}: {e}", path.display())))
}

pub(crate) fn load_signing_key(path: &Path) -> Result<captok_core::SigningKey, CliError> {
    let file: PrivateKeyFile = read_json(path, "signing key")?;
    Ok(file.try_into()?)
}

#[cfg(unix)]
fn write_private(path: &Path, contents: &str) -> std::io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(contents.as_bytes())
}

#[cfg(not(unix))]
fn write_private(path: &Path, contents: &str) -> std::io::Result<()> {
    fs::write(path, contents)
}

pub fn keygen(a: KeygenArgs) -> Result<(), CliError> {
    let private = a.out.join(SIGNING_KEY_FILE);
    let public = a.out.join(JWKS_FILE);
    if !a.force {
        if let Some(existing) = [&private, &public].into_iter().find(|p| p.exists()) {
            return Err(CliError::Exists(existing.clone()));
        }
    }
    fs::create_dir_all(&a.out).map_err(CliError::io(&a.out))?;
    let (_, key) = generate_keypair(&a.alg)?;
    let keys = KeySet::new(vec![key.public_record(true)])?;
    let private_json = serde_json::to_string_pretty(&key.to_file()).expect("key file serializes");
    write_private(&private, &private_json).map_err(CliError::io(&private))?;
    let public_json = serde_json::to_string_pretty(&keys).expect("key set serializes");
    fs::write(&public, public_json).map_err(CliError::io(&public))?;
    print_json(&json!({
        "kid": key.kid(),
        "signing_key": private,
        "jwks": public,
    }));
    Ok(())
}

pub async fn issue(a: IssueArgs) -> Result<(), CliError> {
    let client = IssuerClient::new(&a.issuer);
    let scope = parse_scope(&a.scope)?;
    let refresh_token = match a.refresh_token {
        Some(t) => t,
        None => {
            let user = a
                .user
                .ok_or_else(|| CliError::Usage("--user or --refresh-token is required".into()))?;
            let password = secret_or_stdin(a.password, "password")?;
            let grant = client
                .password_grant(&user, &password, &scope, &a.audience)
                .await?;
            if a.grant_only {
                print_json(&grant);
                return Ok(());
            }
            grant.refresh_token
        }
    };
    let token = client
        .mint_access(&MintRequest {
            refresh_token,
            scope: (!scope.is_empty()).then_some(scope),
            audience: Some(a.audience),
            origin: a.origin,
        })
        .await?;
    println!("{}", token.access_token);
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let token = read_token(&a.token)?;
    let (header, claims) = decode_unverified(&token)?;
    print_json(&json!({"header": header, "claims": claims}));
    Ok(())
}

pub async fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let token = read_token(&a.token)?;
    let keys = match &a.jwks {
        Some(path) => read_json::<KeySet>(path, "key set")?,
        None => IssuerClient::new(&a.issuer).fetch_keys().await?,
    };
    let mut validation = Validation::new(&a.issuer, &a.audience).with_skew(a.skew);
    if a.any_audience {
        validation = validation.lax_audience();
    }
    let now = a.at.unwrap_or_else(|| SystemClock.now());
    match verify_token(&token, &keys, &validation, now) {
        Ok(claims) => {
            print_json(&json!({
                "decision": "allow",
                "sub": claims.sub,
                "aud": claims.aud,
                "scope": claims.scope,
                "exp": claims.exp,
                "origin": claims.origin,
            }));
            Ok(())
        }
        Err(e) => {
            print_json(&json!({"decision": "deny", "error": e.code()}));
            Err(e.into())
        }
    }
}

pub async fn access(a: AccessArgs) -> Result<(), CliError> {
    let phase: Phase = serde_json::from_value(json!(a.phase))
        .map_err(|_| CliError::Usage(format!("unknown phase `{}`", a.phase)))?;
    let req = TokenRequest {
        job: a.job,
        user: a.user,
        phase,
        scopes: parse_scope(&a.scope)?,
        audience: a.audience,
        origin: a.origin,
        share: a.no_share.then_some(false),
    };
    let delivery = ManagerClient::new(&a.manager).access(&req).await?;
    print_json(&delivery);
    Ok(())
}

pub(crate) fn open_vault(loc: &VaultLocation) -> Result<Vault, CliError> {
    let key = loc.key.as_ref().map(VaultKey::load).transpose()?;
    Ok(Vault::open(&loc.vault, key)?)
}

pub fn vault(cmd: VaultCommand) -> Result<(), CliError> {
    match cmd {
        VaultCommand::Keygen { key, force } => {
            if key.exists() {
                if !force {
                    return Err(CliError::Exists(key));
                }
                fs::remove_file(&key).map_err(CliError::io(&key))?;
            }
            VaultKey::generate().save(&key)?;
            print_json(&json!({"key": key}));
        }
        VaultCommand::Store(a) => {
            let handle = secret_or_stdin(a.refresh_token, "refresh token")?;
            let mut vault = open_vault(&a.vault)?;
            let entry = VaultEntry {
                user: a.user,
                issuer: a.issuer,
                handle: RefreshHandle::new(handle),
                scopes: parse_scope(&a.scope)?,
                audiences: a.audiences,
                expires_at: SystemClock.now() + a.expires_in,
            };
            let listing = captok_manager::VaultListing::from(&entry);
            vault.store(entry)?;
            print_json(&listing);
        }
        VaultCommand::List { vault } => print_json(&open_vault(&vault)?.list()?),
    }
    Ok(())
}

pub fn user_add(a: UserAddArgs) -> Result<(), CliError> {
    let mut dir = if a.users.exists() {
        let text = fs::read_to_string(&a.users).map_err(CliError::io(&a.users))?;
        UserDirectory::from_json(&text).map_err(|e| CliError::invalid("user file")(e.to_string()))?
    } else {
        UserDirectory::default()
    };
    let password = secret_or_stdin(a.password, "password")?;
    let groups: Vec<String> = a.groups.into_iter().filter(|g| !g.is_empty()).collect();
    dir.add_user(&a.name, &password, groups.clone(), a.iterations)
        .map_err(|e| CliError::invalid("user")(e.to_string()))?;
    write_private(&a.users, &dir.to_json()).map_err(CliError::io(&a.users))?;
    print_json(&json!({"user": a.name, "groups": groups, "users": a.users}));
    Ok(())
}

pub async fn run_workflow(a: RunWorkflowArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.workflow).map_err(CliError::io(&a.workflow))?;
    let mut run = WorkflowRun::from_json(&text)?;
    if a.http {
        run.settings.transport = captok_harness::Transport::Http;
    }
    if a.transcript.is_some() {
        run.settings.keep_transcript = true;
    }
    let out = captok_harness::run_workflow(&run).await?;
    fs::write(&a.report, out.report.to_json()).map_err(CliError::io(&a.report))?;
    if let Some(path) = &a.transcript {
        fs::write(path, out.transcript.to_json_lines()).map_err(CliError::io(path))?;
    }
    let failed = out.report.invariants.iter().filter(|i| !i.passed).count();
    print_json(&json!({
        "report": a.report,
        "totals": out.report.totals,
        "invariants_failed": failed,
    }));
    if a.strict && failed > 0 {
        return Err(CliError::Invariants { failed });
    }
    Ok(())
}
