use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use captok_core::{encode_token, KeySet, PrivateKeyFile, Scope, SigningKey, TokenClaims, FORMAT_VERSION};
use serde_json::Value;

fn captok() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_captok"));
    cmd.env_remove("CAPTOK_VAULT_KEY")
        .env_remove("CAPTOK_PASSWORD")
        .env_remove("CAPTOK_REFRESH_TOKEN")
        .env_remove("CAPTOK_ISSUER");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("captok runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn stderr_error(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(last).unwrap_or_else(|_| panic!("stderr: {line}"));
    v["error"].as_str().unwrap().to_owned()
}

fn keygen(dir: &Path) -> (SigningKey, KeySet) {
    let out = run(captok().args(["keygen", "--out"]).arg(dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    keygen_read(dir)
}

fn token(key: &SigningKey, keys: &KeySet, iat: i64) -> String {
    let claims = TokenClaims {
        iss: "https://tokens.example.org".into(),
        sub: "alice".into(),
        aud: "https://data.example.org".into(),
        exp: iat + 600,
        nbf: iat,
        iat,
        jti: "jti-cli-test-0001".into(),
        scope: "read:/ligo write:/ligo/out".parse::<Scope>().unwrap(),
        ver: FORMAT_VERSION.into(),
        origin: None,
        extra: Default::default(),
    };
    encode_token(&claims, key, keys).unwrap()
}

#[test]
fn keygen_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let (first, _) = keygen(dir.path());
    let again = run(captok().args(["keygen", "--out"]).arg(dir.path()));
    assert!(!again.status.success());
    assert_eq!(stderr_error(&again), "already_exists");
    let (unchanged, _) = keygen_read(dir.path());
    assert_eq!(unchanged.kid(), first.kid());

    let forced = run(captok().args(["keygen", "--force", "--out"]).arg(dir.path()));
    assert!(forced.status.success());
    let (replaced, _) = keygen_read(dir.path());
    assert_ne!(replaced.kid(), first.kid());
}

fn keygen_read(dir: &Path) -> (SigningKey, KeySet) {
    let file: PrivateKeyFile =
        serde_json::from_str(&std::fs::read_to_string(dir.join("signing-key.json")).unwrap()).unwrap();
    let keys: KeySet = serde_json::from_str(&std::fs::read_to_string(dir.join("jwks.json")).unwrap()).unwrap();
    (file.try_into().unwrap(), keys)
}

#[test]
fn inspect_prints_claims_as_encoded() {
    let dir = tempfile::tempdir().unwrap();
    let (key, keys) = keygen(dir.path());
    let tok = token(&key, &keys, 1_700_000_000);
    let out = run(captok().args(["inspect", &tok]));
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["claims"]["iss"], "https://tokens.example.org");
    assert_eq!(v["claims"]["sub"], "alice");
    assert_eq!(v["claims"]["scope"], "read:/ligo write:/ligo/out");
    assert_eq!(v["header"]["kid"], key.kid());

    let garbage = run(captok().args(["inspect", "not-a-token"]));
    assert!(!garbage.status.success());
    assert_eq!(stderr_error(&garbage), "malformed");
}

#[test]
fn verify_reports_decision_and_code() {
    let dir = tempfile::tempdir().unwrap();
    let (key, keys) = keygen(dir.path());
    let tok = token(&key, &keys, 1_700_000_000);
    let verify = |at: i64| {
        run(captok()
            .args(["verify", &tok, "--issuer", "https://tokens.example.org"])
            .args(["--audience", "https://data.example.org", "--jwks"])
            .arg(dir.path().join("jwks.json"))
            .args(["--at", &at.to_string()]))
    };
    let ok = verify(1_700_000_100);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(stdout_json(&ok)["decision"], "allow");

    let expired = verify(1_700_000_000 + 600 + 3600);
    assert!(!expired.status.success());
    assert_eq!(stdout_json(&expired)["decision"], "deny");
    assert_eq!(stderr_error(&expired), "expired");
}

#[test]
fn vault_round_trip_hides_handles() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("vault.key");
    let vault = dir.path().join("captok.vault");
    assert!(run(captok().args(["vault", "keygen", "--key"]).arg(&key)).status.success());
    let again = run(captok().args(["vault", "keygen", "--key"]).arg(&key));
    assert_eq!(stderr_error(&again), "already_exists");

    let handle = "rt-very-secret-refresh-handle-0123456789";
    let store = run(captok()
        .args(["vault", "store", "--vault"])
        .arg(&vault)
        .env("CAPTOK_VAULT_KEY", &key)
        .env("CAPTOK_REFRESH_TOKEN", handle)
        .args(["--user", "alice", "--issuer", "https://tokens.example.org"])
        .args(["--scope", "read:/ligo", "--audience", "https://data.example.org"])
        .args(["--expires-in", "86400"]));
    assert!(store.status.success(), "{}", String::from_utf8_lossy(&store.stderr));

    let list = run(captok().args(["vault", "list", "--vault"]).arg(&vault).env("CAPTOK_VAULT_KEY", &key));
    assert!(list.status.success());
    let entries = stdout_json(&list);
    assert_eq!(entries.as_array().unwrap().len(), 1);
    assert_eq!(entries[0]["scopes"], "read:/ligo");
    assert!(!String::from_utf8_lossy(&list.stdout).contains(handle));
    let bytes = std::fs::read(&vault).unwrap();
    assert!(!bytes.windows(handle.len()).any(|w| w == handle.as_bytes()));

    let locked = run(captok().args(["vault", "list", "--vault"]).arg(&vault));
    assert!(!locked.status.success());
    assert_eq!(stderr_error(&locked), "vault_locked");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn wait_for(port: u16) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while std::net::TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "server on {port} never came up");
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[test]
fn issue_and_verify_against_a_served_issuer() {
    let dir = tempfile::tempdir().unwrap();
    keygen(dir.path());
    let users = dir.path().join("users.json");
    let added = run(captok()
        .args(["user-add", "--users"])
        .arg(&users)
        .args(["--name", "alice", "--groups", "LDG", "--iterations", "1000"])
        .env("CAPTOK_PASSWORD", "s3cret"));
    assert!(added.status.success(), "{}", String::from_utf8_lossy(&added.stderr));
    let policy = dir.path().join("policy.json");
    std::fs::write(
        &policy,
        r#"[{"match":{"group":"LDG"},"grantable":["read:/ligo"],"max_access_lifetime":600,
            "max_refresh_lifetime":86400,"audiences":["https://data.example.org"]}]"#,
    )
    .unwrap();

    let port = free_port();
    let url = format!("http://127.0.0.1:{port}");
    let _server = Server(
        captok()
            .args(["serve-issuer", "--listen", &format!("127.0.0.1:{port}"), "--issuer", &url])
            .arg("--policy")
            .arg(&policy)
            .arg("--users")
            .arg(&users)
            .arg("--signing-key")
            .arg(dir.path().join("signing-key.json"))
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    wait_for(port);

    let issued = run(captok()
        .args(["issue", "--issuer", &url, "--user", "alice"])
        .args(["--scope", "read:/ligo/frames", "--audience", "https://data.example.org"])
        .env("CAPTOK_PASSWORD", "s3cret"));
    assert!(issued.status.success(), "{}", String::from_utf8_lossy(&issued.stderr));
    let tok = String::from_utf8(issued.stdout).unwrap().trim().to_owned();

    let verified = run(captok().args(["verify", &tok, "--issuer", &url, "--audience", "https://data.example.org"]));
    assert!(verified.status.success(), "{}", String::from_utf8_lossy(&verified.stderr));
    let v = stdout_json(&verified);
    assert_eq!(v["scope"], "read:/ligo/frames");

    let escalate = run(captok()
        .args(["issue", "--issuer", &url, "--user", "alice"])
        .args(["--scope", "write:/ligo", "--audience", "https://data.example.org"])
        .env("CAPTOK_PASSWORD", "s3cret"));
    assert!(!escalate.status.success());
    assert_eq!(stderr_error(&escalate), "escalation");

    let bad_password = run(captok()
        .args(["issue", "--issuer", &url, "--user", "alice", "--audience", "https://data.example.org"])
        .env("CAPTOK_PASSWORD", "wrong"));
    assert_eq!(stderr_error(&bad_password), "authentication_failed");
}

#[test]
fn run_workflow_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("workflow.json");
    std::fs::write(
        &wf,
        r#"{"jobs":[
            {"id":"a","inputs":"read:/in/a.dat","outputs":"write:/out","execute":"read:/in/cal","duration":900,"node":"n1"},
            {"id":"b","inputs":"read:/in/a.dat","outputs":"write:/out","duration":60,"node":"n2"}],
           "faults":[{"job":"b","kind":"tamper-token"}]}"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let transcript = dir.path().join("transcript.jsonl");
    let out = run(captok()
        .arg("run-workflow")
        .arg(&wf)
        .arg("--report")
        .arg(&report)
        .arg("--transcript")
        .arg(&transcript)
        .arg("--strict"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["totals"]["succeeded"], 1);
    assert_eq!(r["jobs"][1]["error_codes"][0], "signature_invalid");
    assert!(std::fs::read_to_string(&transcript).unwrap().lines().count() > 5);

    std::fs::write(&wf, r#"{"jobs":[]"#).unwrap();
    let broken = run(captok().arg("run-workflow").arg(&wf));
    assert_eq!(stderr_error(&broken), "invalid_workflow");
}
