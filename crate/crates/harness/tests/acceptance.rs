//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails. Thresholds are the constants below.
//!
//! Every check compares the system against an oracle written here, not
//! against the crate's own helpers.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use captok_core::wire::MintRequest;
use captok_core::{
    decode_unverified, normalize_path, permits, verify_token, CanonicalPath, Clock, KeySet, ManualClock,
    Operation, Permission, Scope, Validation,
};
use captok_gateway::{AuditRecord, Gateway, GatewayConfig, GatewayRequest, ValidationMode, Verdict};
use captok_harness::{
    run_workflow, Edge, Fault, FaultKind, JobSpec, Outcome, RunOutput, RunSettings, Transport,
    WorkflowRun,
};
use captok_issuer::{Issuer, IssuerConfig, MemoryStore, Policy, UserDirectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(5);
const ORACLE_PERMISSION_SETS: usize = 200;
const ORACLE_MAX_DEPTH: usize = 6;
const TAMPER_TIME_LIMIT: Duration = Duration::from_secs(30);
const TAMPER_TOKENS: usize = 50;
const EXHAUSTIVE_TAMPER_TOKENS: usize = 8;
const ESCALATION_SEQUENCES: usize = 10_000;
const GATEWAY_REQUESTS: u64 = 10_000;
const CONTAINMENT_JOBS: usize = 100;
const SCALE_JOBS: usize = 10_000;
const SCALE_BASELINE_JOBS: usize = 1_000;
const SCALE_TIME_LIMIT: Duration = Duration::from_secs(300);

const ISS: &str = "https://issuer.example.org";
const DATA: &str = "https://data.example.org";
const OTHER: &str = "https://other.example.org";
const B64URL: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Oracles

/// Segment-list prefix test written out longhand.
fn segment_prefix(prefix: &[&str], path: &[&str]) -> bool {
    if prefix.len() > path.len() {
        return false;
    }
    for i in 0..prefix.len() {
        if prefix[i] != path[i] {
            return false;
        }
    }
    true
}

fn segments(path: &str) -> Vec<&str> {
    path.split('/').filter(|s| !s.is_empty()).collect()
}

/// Whether `(op, path)` is covered by any of `grants` (op, path strings).
fn oracle_covers(grants: &[(String, String)], op: &str, path: &str) -> bool {
    let target = segments(path);
    grants
        .iter()
        .any(|(gop, gpath)| gop == op && segment_prefix(&segments(gpath), &target))
}

/// Re-decides a logged gateway request from the record alone.
fn replay_decision(
    record: &AuditRecord,
    keys: &KeySet,
    validation: &Validation,
    enforce_origin: bool,
) -> Verdict {
    let Some(token) = &record.token else { return Verdict::Deny };
    let Ok(claims) = verify_token(token, keys, validation, record.ts) else {
        return Verdict::Deny;
    };
    let mut segs: Vec<&str> = Vec::new();
    if !record.path.starts_with('/') || record.path.contains('%') {
        // Harness paths are plain; anything else is out of this oracle's reach.
        return Verdict::Deny;
    }
    for s in record.path.split('/') {
        match s {
            "" | "." => {}
            ".." => return Verdict::Deny,
            s => segs.push(s),
        }
    }
    let grants: Vec<(String, String)> = claims
        .scope
        .iter()
        .map(|p| (p.op.to_string(), p.path.as_str().to_owned()))
        .collect();
    if !oracle_covers(&grants, &record.op, &format!("/{}", segs.join("/"))) {
        return Verdict::Deny;
    }
    if enforce_origin {
        if let Some(origin) = &claims.origin {
            if record.client_id.as_deref() != Some(origin.as_str()) {
                return Verdict::Deny;
            }
        }
    }
    Verdict::Allow
}

// ---------------------------------------------------------------------------
// Shared fixtures

fn issuer_with(policy: &str, users: UserDirectory, clock: &ManualClock, seed: u64) -> Issuer {
    let mut config = IssuerConfig::new(ISS);
    config.seed = Some(seed);
    Issuer::new(
        config,
        Policy::from_json(policy).expect("fixture policy is valid"),
        users,
        Arc::new(MemoryStore::new()),
        Arc::new(clock.clone()),
    )
}

fn fixture_issuer(clock: &ManualClock) -> Issuer {
    let mut users = UserDirectory::default();
    users.add_user("alice", "pw", vec!["LDG".into()], 1).unwrap();
    let policy = json!([{
        "match": {"group": "LDG"},
        "grantable": ["read:/a", "read:/b", "read:/c", "write:/a", "write:/b/c"],
        "max_access_lifetime": 600,
        "max_refresh_lifetime": 86400,
        "audiences": [DATA, OTHER],
    }]);
    issuer_with(&policy.to_string(), users, clock, 11)
}

fn mint(issuer: &Issuer, scope: &str) -> String {
    let scope: Scope = scope.parse().unwrap();
    let grant = issuer
        .grant_refresh("alice", "pw", scope.permissions(), DATA)
        .unwrap();
    issuer
        .mint_access(&MintRequest {
            refresh_token: grant.refresh_token,
            scope: Some(scope),
            audience: Some(DATA.into()),
            origin: None,
        })
        .unwrap()
        .access_token
}

fn workflow_job(i: usize, duration: i64) -> JobSpec {
    // Three input families so several mint keys exist.
    let family = ["ligo", "virgo", "kagra"][i % 3];
    JobSpec {
        id: format!("job-{i:05}"),
        inputs: format!("read:/{family}/frames/h1.gwf read:/{family}/frames/l1.gwf")
            .parse()
            .unwrap(),
        outputs: format!("write:/results/{family}").parse().unwrap(),
        execute: Some(format!("read:/{family}/calibration.txt").parse().unwrap()),
        duration,
        node: format!("node-{:03}", i % 50),
    }
}

fn workflow(n: usize, duration: i64) -> WorkflowRun {
    WorkflowRun {
        jobs: (0..n).map(|i| workflow_job(i, duration)).collect(),
        clock: Default::default(),
        faults: Vec::new(),
        settings: RunSettings::default(),
    }
}

fn fault_plan() -> Vec<Fault> {
    let kinds = [
        FaultKind::ExpireToken,
        FaultKind::TamperToken,
        FaultKind::WrongAudience,
        FaultKind::OutOfScopePath,
        FaultKind::IssuerOutageWindow { start: 500, end: 620 },
    ];
    // Two targets per kind, spread over the batch.
    kinds
        .iter()
        .enumerate()
        .flat_map(|(k, kind)| {
            [7 + k * 11, 61 + k * 7].map(|j| Fault {
                job: format!("job-{j:05}"),
                kind: kind.clone(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criteria

fn oracle_equivalence() -> Check {
    let started = Instant::now();
    let mut universe: Vec<Vec<&str>> = vec![vec![]];
    let mut frontier = universe.clone();
    for _ in 0..ORACLE_MAX_DEPTH {
        let mut next = Vec::new();
        for p in &frontier {
            for s in ["a", "b", "c"] {
                let mut q = p.clone();
                q.push(s);
                next.push(q);
            }
        }
        universe.extend(next.iter().cloned());
        frontier = next;
    }
    ensure(universe.len() == 1_093, || format!("universe has {} paths", universe.len()))?;
    let canonical: Vec<CanonicalPath> = universe
        .iter()
        .map(|s| normalize_path(&format!("/{}", s.join("/"))).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc1);
    let (mut checks, mut disagreements) = (0u64, 0u64);
    for _ in 0..ORACLE_PERMISSION_SETS {
        let n = rng.gen_range(0..=6);
        let raw: Vec<(Operation, usize)> = (0..n)
            .map(|_| {
                let op = if rng.gen_bool(0.5) { Operation::Read } else { Operation::Write };
                (op, rng.gen_range(0..universe.len()))
            })
            .collect();
        let perms: Vec<Permission> = raw
            .iter()
            .map(|&(op, i)| Permission::new(op, canonical[i].clone()))
            .collect();
        for (segs, path) in universe.iter().zip(&canonical) {
            for op in [Operation::Read, Operation::Write] {
                let expected = raw
                    .iter()
                    .any(|&(pop, i)| pop == op && segment_prefix(&universe[i], segs));
                checks += 1;
                if permits(&perms, op, path) != expected {
                    disagreements += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(disagreements == 0, || format!("{disagreements} disagreements out of {checks}"))?;
    ensure(elapsed < ORACLE_TIME_LIMIT, || format!("took {elapsed:.2?}"))?;
    Ok(format!("0 disagreements over {checks} checks in {elapsed:.2?}"))
}

fn tamper_corpus() -> Result<(Vec<String>, KeySet, Validation, i64), String> {
    let clock = ManualClock::new(1_700_000_000);
    let issuer = fixture_issuer(&clock);
    let keys = issuer.published_keys();
    let validation = Validation::new(ISS, DATA);
    let scopes = ["read:/a", "read:/b write:/b/c", "read:/c", "write:/a", "read:/a read:/b read:/c"];
    let tokens: Vec<String> = (0..TAMPER_TOKENS)
        .map(|i| mint(&issuer, scopes[i % scopes.len()]))
        .collect();
    for t in &tokens {
        verify_token(t, &keys, &validation, clock.now())
            .map_err(|e| format!("pristine token rejected: {e}"))?;
    }
    Ok((tokens, keys, validation, clock.now()))
}

/// Applies `substitutes(pos, original)` at every non-separator position of
/// every token; returns (mutations tried, positions where one verified).
fn sweep(
    tokens: &[String],
    keys: &KeySet,
    validation: &Validation,
    now: i64,
    substitutes: impl Fn(usize, u8) -> Vec<u8>,
) -> (u64, Vec<usize>) {
    let (mut mutations, mut accepted) = (0u64, Vec::new());
    for token in tokens {
        let mut bytes = token.clone().into_bytes();
        for pos in 0..bytes.len() {
            let original = bytes[pos];
            if original == b'.' {
                continue;
            }
            for c in substitutes(pos, original) {
                if c == original {
                    continue;
                }
                bytes[pos] = c;
                mutations += 1;
                if verify_token(std::str::from_utf8(&bytes).unwrap(), keys, validation, now).is_ok() {
                    accepted.push(pos);
                }
            }
            bytes[pos] = original;
        }
    }
    (mutations, accepted)
}

/// Every character position of every segment is replaced three ways: the
/// next alphabet symbol, the symbol differing in the high bit and the one
/// differing in the low bit of its 6-bit value.
fn tamper_suite() -> Check {
    let (tokens, keys, validation, now) = tamper_corpus()?;
    let started = Instant::now();
    let (mutations, accepted) = sweep(&tokens, &keys, &validation, now, |_, original| {
        let i = B64URL.iter().position(|&c| c == original).unwrap_or(0);
        vec![B64URL[(i + 1) % 64], B64URL[i ^ 32], B64URL[i ^ 1]]
    });
    let elapsed = started.elapsed();
    ensure(accepted.is_empty(), || format!("{} of {mutations} mutations accepted", accepted.len()))?;
    ensure(elapsed < TAMPER_TIME_LIMIT, || {
        format!("{mutations} mutations all rejected, but took {elapsed:.2?}")
    })?;
    Ok(format!("{mutations} mutations of {TAMPER_TOKENS} tokens, 100% rejected in {elapsed:.2?}"))
}

/// Every alternative symbol (plus `.` and `=`) at every position of a
/// subset of the corpus. Not timed.
fn exhaustive_tamper() -> Check {
    let (tokens, keys, validation, now) = tamper_corpus()?;
    let subset = &tokens[..EXHAUSTIVE_TAMPER_TOKENS];
    let started = Instant::now();
    let (mutations, accepted) = sweep(subset, &keys, &validation, now, |_, _| {
        B64URL.iter().chain(b".=").copied().collect()
    });
    ensure(accepted.is_empty(), || format!("{} of {mutations} mutations accepted", accepted.len()))?;
    Ok(format!(
        "{mutations} mutations of {} tokens, 100% rejected in {:.2?}",
        subset.len(),
        started.elapsed()
    ))
}

fn no_escalation() -> Check {
    const PATHS: &[&str] = &[
        "/", "/data", "/data/ligo", "/data/ligo/frames", "/data/virgo", "/store", "/store/user",
        "/store/user/{username}", "/store/user/{username}/run1", "/store/user/bob", "/scratch",
    ];
    const GROUPS: &[&str] = &["g1", "g2", "g3"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xe5ca);
    let clock = ManualClock::new(1_700_000_000);
    let pick_perm = |rng: &mut ChaCha8Rng| -> String {
        let op = if rng.gen_bool(0.5) { "read" } else { "write" };
        format!("{op}:{}", PATHS[rng.gen_range(0..PATHS.len())])
    };
    let (mut minted, mut refused, mut escalations) = (0u64, 0u64, Vec::new());
    for seq in 0..ESCALATION_SEQUENCES {
        let user = ["alice", "bob"][rng.gen_range(0..2)];
        let user_groups: Vec<String> = GROUPS
            .iter()
            .filter(|_| rng.gen_bool(0.5))
            .map(|g| g.to_string())
            .collect();
        let rules: Vec<serde_json::Value> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let m = if rng.gen_bool(0.6) {
                    let who = if rng.gen_bool(0.8) { user } else { "carol" };
                    json!({ "user": who })
                } else {
                    let group = GROUPS[rng.gen_range(0..GROUPS.len())];
                    json!({ "group": group })
                };
                let grantable: Vec<String> = (0..rng.gen_range(1..=4)).map(|_| pick_perm(&mut rng)).collect();
                let audiences: Vec<&str> = match rng.gen_range(0..3) {
                    0 => vec![DATA],
                    1 => vec![OTHER],
                    _ => vec![DATA, OTHER],
                };
                json!({"match": m, "grantable": grantable, "max_access_lifetime": 600,
                       "max_refresh_lifetime": 3600, "audiences": audiences})
            })
            .collect();
        let mut users = UserDirectory::default();
        users.add_user(user, "pw", user_groups.clone(), 1).unwrap();
        let issuer = issuer_with(&json!(rules).to_string(), users, &clock, seq as u64);

        // Oracle view of the policy: which (op, path) atoms may `user` hold
        // for each audience.
        let allowed_for = |aud: &str| -> Vec<(String, String)> {
            let mut out = Vec::new();
            for r in &rules {
                let applies = match (r["match"].get("user"), r["match"].get("group")) {
                    (Some(u), _) => u == user,
                    (_, Some(g)) => user_groups.iter().any(|ug| ug == g),
                    _ => false,
                };
                if !applies || !r["audiences"].as_array().unwrap().iter().any(|a| a == aud) {
                    continue;
                }
                for t in r["grantable"].as_array().unwrap() {
                    let (op, path) = t.as_str().unwrap().split_once(':').unwrap();
                    out.push((op.to_owned(), path.replace("{username}", user)));
                }
            }
            out
        };

        // Requests are mostly near the policy (a grantable atom, one of its
        // descendants or its parent) and sometimes arbitrary.
        let templates: Vec<String> = rules
            .iter()
            .flat_map(|r| r["grantable"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_owned()))
            .collect();
        let near = |rng: &mut ChaCha8Rng| -> Option<Permission> {
            let base = if rng.gen_bool(0.8) {
                templates[rng.gen_range(0..templates.len())].clone()
            } else {
                pick_perm(rng)
            };
            let base = base.replace("{username}", user);
            let atom = match rng.gen_range(0..4) {
                0 => format!("{}/sub{}", base.trim_end_matches('/'), rng.gen_range(0..3)),
                1 => match base.rsplit_once('/') {
                    Some((op, _)) if op.ends_with(':') => format!("{op}/"),
                    Some((parent, _)) => parent.to_owned(),
                    None => base,
                },
                _ => base,
            };
            atom.parse().ok()
        };
        let request: Vec<Permission> = (0..rng.gen_range(0..=2)).filter_map(|_| near(&mut rng)).collect();
        let aud = [DATA, OTHER][rng.gen_range(0..2)];
        let Ok(grant) = issuer.grant_refresh(user, "pw", &request, aud) else {
            refused += 1;
            continue;
        };
        for _ in 0..rng.gen_range(1..=3) {
            let narrowing: Vec<Permission> = (0..rng.gen_range(0..=2)).filter_map(|_| near(&mut rng)).collect();
            let req = MintRequest {
                refresh_token: grant.refresh_token.clone(),
                scope: (!narrowing.is_empty()).then(|| Scope::new(narrowing)),
                audience: rng.gen_bool(0.5).then(|| [DATA, OTHER][rng.gen_range(0..2)].to_owned()),
                origin: None,
            };
            let Ok(tok) = issuer.mint_access(&req) else {
                refused += 1;
                continue;
            };
            minted += 1;
            let (_, claims) = decode_unverified(&tok.access_token).map_err(|e| e.to_string())?;
            let allowed = allowed_for(&claims.aud);
            for atom in claims.scope.iter() {
                if !oracle_covers(&allowed, &atom.op.to_string(), atom.path.as_str()) {
                    escalations.push(format!("sequence {seq}: {atom} for {}", claims.aud));
                }
            }
        }
    }
    ensure(escalations.is_empty(), || format!("escalations: {:?}", &escalations[..escalations.len().min(5)]))?;
    ensure(minted > ESCALATION_SEQUENCES as u64 / 4, || format!("only {minted} tokens minted"))?;
    Ok(format!(
        "{ESCALATION_SEQUENCES} sequences, {minted} tokens minted, {refused} requests refused, 0 escalations"
    ))
}

async fn decentralized_validation() -> Check {
    let clock = ManualClock::new(1_700_000_000);
    let issuer = Arc::new(fixture_issuer(&clock));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for f in ["a/one", "b/two", "c/three"] {
        let p = dir.path().join(f);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, f).unwrap();
    }
    let tokens = [mint(&issuer, "read:/a"), mint(&issuer, "read:/b"), mint(&issuer, "read:/a read:/c")];
    let paths = ["/a/one", "/b/two", "/c/three"];

    let mut results = Vec::new();
    for mode in [ValidationMode::Offline, ValidationMode::Introspect] {
        let mut config = GatewayConfig::new(dir.path(), ISS, DATA);
        config.mode = mode;
        let gw = Gateway::start(config, issuer.clone(), Arc::new(clock.clone()), false)
            .await
            .map_err(|e| e.to_string())?;
        // Warm-up happens in start(); count from here.
        let before = issuer.metrics().verifier_calls();
        let gw_before = gw.stats().issuer_calls;
        let mut allowed = 0;
        for i in 0..GATEWAY_REQUESTS as usize {
            let resp = gw
                .handle(GatewayRequest::get(paths[i % 3], Some(&tokens[(i / 3) % 3])))
                .await;
            if resp.status == 200 {
                allowed += 1;
            }
        }
        clock.advance(1);
        let issuer_calls = issuer.metrics().verifier_calls() - before;
        let gw_calls = gw.stats().issuer_calls - gw_before;
        results.push((mode, issuer_calls, gw_calls, allowed));
    }
    let (_, off_issuer, off_gw, off_allowed) = results[0];
    let (_, in_issuer, in_gw, in_allowed) = results[1];
    ensure(off_issuer == 0 && off_gw == 0, || {
        format!("offline mode made {off_gw} gateway calls ({off_issuer} seen by the issuer)")
    })?;
    ensure(in_issuer == GATEWAY_REQUESTS && in_gw == GATEWAY_REQUESTS, || {
        format!("introspection mode made {in_gw} calls ({in_issuer} seen) for {GATEWAY_REQUESTS} requests")
    })?;
    ensure(off_allowed == in_allowed && off_allowed > 0, || {
        format!("modes disagree: {off_allowed} vs {in_allowed} allowed")
    })?;
    Ok(format!(
        "offline: 0 issuer calls for {GATEWAY_REQUESTS} requests; introspection: {in_gw} calls (1 per request)"
    ))
}

async fn long_job_refresh() -> Check {
    let s = RunSettings::default();
    let (l, m) = (s.access_lifetime, s.refresh_margin);
    let duration = 3 * l;
    let expected = ((duration as f64) / ((l - m) as f64)).ceil() as u32;

    let mut run = workflow(1, duration);
    let clean = run_workflow(&run).await.map_err(|e| e.to_string())?.report;
    let job = &clean.jobs[0];
    ensure(job.outcome == Outcome::Succeeded, || format!("clean job ended {:?} {:?}", job.outcome, job.error_codes))?;
    ensure(job.deliveries.execute == expected, || {
        format!("{} execute deliveries, expected {expected}", job.deliveries.execute)
    })?;
    ensure(clean.totals.gateway_denied == 0 && job.error_codes.is_empty(), || {
        format!("{} authorization failures", clean.totals.gateway_denied)
    })?;

    // The issuer disappears exactly when the first refresh is due.
    run.faults.push(Fault {
        job: "job-00000".into(),
        kind: FaultKind::IssuerOutageWindow { start: l - m, end: l - m + 20 },
    });
    let outage = run_workflow(&run).await.map_err(|e| e.to_string())?.report;
    let job = &outage.jobs[0];
    ensure(job.holds >= 1 && !job.retries.is_empty(), || "job never held during the outage".into())?;
    ensure(job.outcome == Outcome::Succeeded, || format!("job did not resume: {:?}", job.error_codes))?;
    ensure(outage.totals.gateway_denied == 0, || {
        format!("{} authorization failures during outage", outage.totals.gateway_denied)
    })?;
    ensure(job.deliveries.execute == expected, || {
        format!("{} execute deliveries with outage, expected {expected}", job.deliveries.execute)
    })?;
    Ok(format!(
        "{duration}s job: {expected} deliveries, 0 auth failures; outage held it {} time(s), retries at {:?}, then resumed",
        job.holds, job.retries
    ))
}

fn check_containment(out: &RunOutput) -> Check {
    let r = &out.report;
    // Independent grep over the serialized transcript.
    let handles = out.transcript.handles();
    ensure(!handles.is_empty(), || "no refresh handles were tracked".into())?;
    let mut leaks = 0;
    let mut issuer_mentions = 0;
    for line in out.transcript.to_json_lines().lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let edge = v["edge"].as_str().unwrap_or_default();
        for h in &handles {
            if line.contains(h.as_str()) {
                if edge == Edge::SubmitIssuer.to_string() {
                    issuer_mentions += 1;
                } else {
                    leaks += 1;
                }
            }
        }
    }
    ensure(leaks == 0 && r.transcript.leaks.is_empty(), || {
        format!("{leaks} handle occurrences off the submit->issuer edge")
    })?;
    ensure(issuer_mentions > 0, || "scan never saw a handle at all".into())?;

    let faults = fault_plan();
    for job in &r.jobs {
        let expected: BTreeSet<&str> = faults
            .iter()
            .filter(|f| f.job == job.id)
            .map(|f| f.kind.designated_code())
            .collect();
        let got: BTreeSet<&str> = job.error_codes.iter().map(String::as_str).collect();
        ensure(got == expected, || format!("{}: codes {got:?}, expected {expected:?}", job.id))?;
        let must_fail = faults.iter().any(|f| f.job == job.id && !f.kind.recoverable());
        let want = if must_fail { Outcome::Failed } else { Outcome::Succeeded };
        ensure(job.outcome == want, || format!("{} ended {:?}", job.id, job.outcome))?;
    }
    ensure(r.all_invariants_hold(), || {
        let bad: Vec<_> = r.invariants.iter().filter(|i| !i.passed).map(|i| &i.detail).collect();
        format!("invariants failed: {bad:?}")
    })?;
    Ok(format!(
        "{} messages, {} handles, 0 leaks; {} faults each surfaced only on their job",
        r.transcript.messages,
        handles.len(),
        faults.len()
    ))
}

fn containment_run(transport: Transport) -> WorkflowRun {
    let mut run = workflow(CONTAINMENT_JOBS, 1_300);
    run.faults = fault_plan();
    run.settings.transport = transport;
    run
}

fn audit_replay(out: &RunOutput, run: &WorkflowRun) -> Check {
    let s = &run.settings;
    let validation = Validation::new(&out.issuer_url, &s.audience).with_skew(s.skew);
    let mut mismatches = Vec::new();
    let (mut allow, mut deny) = (0, 0);
    for rec in &out.audit {
        let replayed = replay_decision(rec, &out.keys, &validation, true);
        if replayed != rec.decision {
            mismatches.push(format!("{} {} -> logged {:?}, replayed {replayed:?}", rec.op, rec.path, rec.decision));
        }
        match rec.decision {
            Verdict::Allow => allow += 1,
            Verdict::Deny => deny += 1,
        }
    }
    ensure(!out.audit.is_empty(), || "no audit records".into())?;
    ensure(mismatches.is_empty(), || format!("{} mismatches: {:?}", mismatches.len(), &mismatches[..mismatches.len().min(3)]))?;
    ensure(deny > 0 && allow > 0, || "replay corpus lacks both verdicts".into())?;
    Ok(format!("{} decisions ({allow} allow, {deny} deny) replayed, 0 mismatches", out.audit.len()))
}

async fn scale_shape() -> Check {
    let mut mints = Vec::new();
    let mut detail = String::new();
    for n in [SCALE_BASELINE_JOBS, SCALE_JOBS] {
        let mut run = workflow(n, 1_300);
        run.settings.parallelism = n;
        run.settings.keep_transcript = false;
        let started = Instant::now();
        let report = run_workflow(&run).await.map_err(|e| e.to_string())?.report;
        let elapsed = started.elapsed();
        ensure(report.totals.succeeded == n, || format!("{} of {n} jobs succeeded", report.totals.succeeded))?;
        let sharing = report.invariant("cache_sharing").unwrap();
        ensure(sharing.passed, || format!("cache sharing bound broken: {}", sharing.detail))?;
        if n == SCALE_JOBS {
            ensure(elapsed < SCALE_TIME_LIMIT, || format!("{n} jobs took {elapsed:.2?}"))?;
            detail = format!("{n} jobs in {elapsed:.2?}; {}", sharing.detail);
        }
        mints.push(report.totals.mints);
    }
    ensure(mints[0] == mints[1], || {
        format!("mints grew with N: {} at {SCALE_BASELINE_JOBS} jobs, {} at {SCALE_JOBS}", mints[0], mints[1])
    })?;
    Ok(format!("{detail}; {} mints at both {SCALE_BASELINE_JOBS} and {SCALE_JOBS} jobs", mints[1]))
}

async fn determinism() -> Check {
    let run = containment_run(Transport::InProcess);
    let a = run_workflow(&run).await.map_err(|e| e.to_string())?.report.to_json();
    let b = run_workflow(&run).await.map_err(|e| e.to_string())?.report.to_json();
    ensure(a == b, || "two runs of the same workflow produced different reports".into())?;
    Ok(format!("two runs produced byte-identical {}-byte reports", a.len()))
}

// ---------------------------------------------------------------------------

fn report(results: &mut Vec<bool>, label: &str, outcome: Check) {
    let (mark, text) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(e) => ("FAIL", e.as_str()),
    };
    println!("{mark}  {label:<34} {text}");
    results.push(outcome.is_ok());
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    let mut results = Vec::new();
    println!("acceptance suite");
    report(&mut results, "1 oracle equivalence", oracle_equivalence());
    report(&mut results, "2 tamper suite", tamper_suite());
    report(&mut results, "3 no-escalation fuzz", no_escalation());
    report(&mut results, "4 decentralized validation", rt.block_on(decentralized_validation()));
    report(&mut results, "5 long-job refresh", rt.block_on(long_job_refresh()));

    let run = containment_run(Transport::InProcess);
    match rt.block_on(run_workflow(&run)) {
        Ok(out) => {
            report(&mut results, "6 containment", check_containment(&out));
            report(&mut results, "7 audit replay", audit_replay(&out, &run));
        }
        Err(e) => {
            report(&mut results, "6 containment", Err(e.to_string()));
            report(&mut results, "7 audit replay", Err(e.to_string()));
        }
    }
    report(&mut results, "8 scale shape", rt.block_on(scale_shape()));

    let http_run = containment_run(Transport::Http);
    let http = rt.block_on(run_workflow(&http_run)).map_err(|e| e.to_string());
    report(
        &mut results,
        "+ containment over HTTP",
        http.as_ref().map_err(Clone::clone).and_then(check_containment),
    );
    report(
        &mut results,
        "+ audit replay over HTTP",
        http.as_ref().map_err(Clone::clone).and_then(|o| audit_replay(o, &http_run)),
    );
    report(&mut results, "+ determinism", rt.block_on(determinism()));
    report(&mut results, "+ exhaustive tamper sweep", exhaustive_tamper());

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
