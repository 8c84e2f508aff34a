//! Discrete-event driver for a workflow run.
//!
//! Jobs move through stage-in, execute and stage-out. Every token comes
//! from the token manager; every file access goes through the data plane.
//! The same loop runs under the simulated clock (time jumps from event to
//! event) and the real clock (the loop sleeps until the next event).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use captok_core::{attenuate, decode_unverified, normalize_path, KeySet, Scope};
use captok_gateway::{AccessCheck, AuditRecord, GatewayRequest, LocalCache, Method};
use captok_manager::{Delivery, JobState, Phase, TokenRequest};
use serde_json::json;
use tracing::{debug, info};

use crate::env::Environment;
use crate::report::{InvariantCheck, JobReport, Outcome, PhaseCounts, RunReport, Totals};
use crate::spec::{FaultKind, JobSpec, WorkflowRun};
use crate::transcript::{Direction, Edge, Transcript};
use crate::wiring::DataReply;
use crate::HarnessError;

/// Everything a run produces.
pub struct RunOutput {
    pub report: RunReport,
    pub transcript: Arc<Transcript>,
    /// Gateway audit records (empty unless the transcript is kept).
    pub audit: Vec<AuditRecord>,
    /// Keys the issuer published at the end of the run.
    pub keys: KeySet,
    /// Issuer identifier tokens were minted under (the socket URL in HTTP
    /// transport).
    pub issuer_url: String,
    pub access_check: AccessCheck,
}

/// Runs a workflow end to end: brings up the services, drives every job
/// and checks the run-wide invariants.
pub async fn run_workflow(run: &WorkflowRun) -> Result<RunOutput, HarnessError> {
    run.validate()?;
    let transcript = Arc::new(Transcript::new(run.settings.keep_transcript));
    let env = Environment::start(run, transcript.clone()).await?;
    let mut engine = Engine::new(run, env, transcript.clone());
    engine.drive().await;
    let report = engine.report();
    info!(
        jobs = report.totals.jobs,
        succeeded = report.totals.succeeded,
        mints = report.totals.mints,
        "workflow finished"
    );
    Ok(RunOutput {
        audit: engine.env.gateway.audit_records(),
        keys: engine.env.issuer.published_keys(),
        issuer_url: engine.env.issuer_url.clone(),
        access_check: engine.env.gateway.access_check().clone(),
        report,
        transcript,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Queued,
    AwaitStageIn,
    AwaitExecute,
    Executing,
    AwaitStageOut,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    /// Completions are handled before token refreshes at the same instant.
    End(usize),
    Start(usize),
    UseStageIn(usize, String),
}

impl Event {
    fn class(&self) -> u8 {
        match self {
            Event::End(_) => 0,
            _ => 1,
        }
    }
}

struct JobRun {
    spec: JobSpec,
    faults: Vec<FaultKind>,
    stage: Stage,
    exec_token: Option<String>,
    held: bool,
    report: JobReport,
}

impl JobRun {
    fn has(&self, f: impl Fn(&FaultKind) -> bool) -> bool {
        self.faults.iter().any(f)
    }

    fn note(&mut self, code: &str) {
        if !self.report.error_codes.iter().any(|c| c == code) {
            self.report.error_codes.push(code.to_owned());
        }
    }

    fn finished(&self) -> bool {
        matches!(self.stage, Stage::Done | Stage::Failed)
    }
}

struct Engine<'a> {
    run: &'a WorkflowRun,
    env: Environment,
    transcript: Arc<Transcript>,
    jobs: Vec<JobRun>,
    index: HashMap<String, usize>,
    queue: VecDeque<usize>,
    in_flight: usize,
    events: BinaryHeap<Reverse<(i64, u8, u64, Event)>>,
    seq: u64,
    watch: BTreeMap<usize, ()>,
    caches: HashMap<String, LocalCache>,
    local_hits: u64,
    attenuation_violations: Vec<String>,
    start: i64,
    last: i64,
    baseline_gateway_calls: u64,
    baseline_verifier_calls: u64,
}

impl<'a> Engine<'a> {
    fn new(run: &'a WorkflowRun, env: Environment, transcript: Arc<Transcript>) -> Self {
        let jobs: Vec<JobRun> = run
            .jobs
            .iter()
            .map(|spec| JobRun {
                faults: run.faults_for(&spec.id),
                report: JobReport {
                    id: spec.id.clone(),
                    outcome: Outcome::Pending,
                    error_codes: Vec::new(),
                    faults: run
                        .faults_for(&spec.id)
                        .iter()
                        .map(|f| serde_json::to_value(f).expect("fault serializes")["kind"].as_str().unwrap_or_default().to_owned())
                        .collect(),
                    deliveries: PhaseCounts::default(),
                    holds: 0,
                    retries: Vec::new(),
                    started: None,
                    finished: None,
                },
                spec: spec.clone(),
                stage: Stage::Queued,
                exec_token: None,
                held: false,
            })
            .collect();
        let index = jobs
            .iter()
            .enumerate()
            .map(|(i, j)| (j.spec.id.clone(), i))
            .collect();
        let start = env.clock.now();
        Engine {
            run,
            baseline_gateway_calls: env.gateway.stats().issuer_calls,
            baseline_verifier_calls: env.issuer.metrics().verifier_calls(),
            env,
            transcript,
            queue: (0..jobs.len()).collect(),
            jobs,
            index,
            in_flight: 0,
            events: BinaryHeap::new(),
            seq: 0,
            watch: BTreeMap::new(),
            caches: HashMap::new(),
            local_hits: 0,
            attenuation_violations: Vec::new(),
            start,
            last: start,
        }
    }

    fn schedule(&mut self, t: i64, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse((t, ev.class(), self.seq, ev)));
    }

    fn fill_slots(&mut self, t: i64) {
        while self.in_flight < self.run.settings.parallelism {
            let Some(idx) = self.queue.pop_front() else { break };
            self.in_flight += 1;
            self.schedule(t, Event::Start(idx));
        }
    }

    async fn drive(&mut self) {
        self.fill_slots(self.start);
        loop {
            let next_event = self.events.peek().map(|Reverse((t, ..))| *t);
            let wake = self.env.manager.next_wakeup();
            let t = match (next_event, wake) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => break,
            }
            .max(self.last);
            self.env.clock.advance_to(t).await;
            let t = self.env.clock.now().max(t);
            self.last = t;

            while let Some(Reverse((et, 0, ..))) = self.events.peek() {
                if *et > t {
                    break;
                }
                let Reverse((.., ev)) = self.events.pop().expect("peeked");
                self.handle(ev, t).await;
            }
            for d in self.env.manager.tick(t).await {
                self.on_delivery(d, t).await;
            }
            self.poll_holds(t);
            while let Some(Reverse((et, ..))) = self.events.peek() {
                if *et > t {
                    break;
                }
                let Reverse((.., ev)) = self.events.pop().expect("peeked");
                self.handle(ev, t).await;
            }
        }
        for idx in 0..self.jobs.len() {
            if !self.jobs[idx].finished() && self.jobs[idx].stage != Stage::Queued {
                self.jobs[idx].note("stalled");
                self.fail(idx, self.last);
            }
        }
    }

    async fn handle(&mut self, ev: Event, t: i64) {
        match ev {
            Event::Start(idx) => {
                self.jobs[idx].report.started = Some(t - self.start);
                self.jobs[idx].stage = Stage::AwaitStageIn;
                self.watch.insert(idx, ());
                debug!(job = %self.jobs[idx].spec.id, "job started");
                self.request(idx, Phase::StageIn, t).await;
            }
            Event::UseStageIn(idx, token) => self.stage_in(idx, token, t).await,
            Event::End(idx) => self.end_execute(idx, t).await,
        }
    }

    fn token_request(&self, idx: usize, phase: Phase) -> TokenRequest {
        let job = &self.jobs[idx];
        let s = &self.run.settings;
        let outage = job.has(|f| matches!(f, FaultKind::IssuerOutageWindow { .. }));
        let scopes = match phase {
            Phase::StageIn => job.spec.inputs.clone(),
            Phase::Execute => job.spec.execute.clone().unwrap_or_else(|| Scope::new(vec![])),
            Phase::StageOut => job.spec.outputs.clone(),
        };
        let audience = if phase == Phase::StageIn && job.has(|f| *f == FaultKind::WrongAudience) {
            s.decoy_audience.clone()
        } else {
            s.audience.clone()
        };
        TokenRequest {
            job: job.spec.id.clone(),
            user: s.user.clone(),
            phase,
            scopes,
            audience,
            origin: (s.origin_binding || outage).then(|| job.spec.node.clone()),
            share: outage.then_some(false),
        }
    }

    async fn request(&mut self, idx: usize, phase: Phase, t: i64) {
        let req = self.token_request(idx, phase);
        match self.env.manager.deliver(req, t).await {
            // Delivery can lead straight into the next phase request.
            Ok(d) => Box::pin(self.on_delivery(d, t)).await,
            Err(e) => {
                self.jobs[idx].note(e.code());
                if e.is_transient() {
                    self.mark_held(idx);
                } else {
                    self.fail(idx, t);
                }
            }
        }
    }

    fn mark_held(&mut self, idx: usize) {
        let job = &mut self.jobs[idx];
        if !job.held {
            job.held = true;
            job.report.holds += 1;
        }
    }

    fn poll_holds(&mut self, t: i64) {
        let watched: Vec<usize> = self.watch.keys().copied().collect();
        for idx in watched {
            match self.env.manager.job_state(&self.jobs[idx].spec.id) {
                Some(JobState::Held { cause, .. }) => {
                    self.jobs[idx].note(&cause);
                    self.mark_held(idx);
                }
                Some(JobState::TerminalHold { cause }) => {
                    self.jobs[idx].note(&cause);
                    self.fail(idx, t);
                }
                Some(_) => self.jobs[idx].held = false,
                None => {}
            }
        }
    }

    fn check_attenuation(&mut self, idx: usize, d: &Delivery) {
        let req = self.token_request(idx, d.phase);
        let ok = match decode_unverified(&d.token) {
            Ok((_, claims)) => {
                claims.scope.canonical_string() == req.scopes.canonical_string()
                    && claims.origin == req.origin
                    && claims.aud == req.audience
            }
            Err(_) => false,
        };
        if !ok {
            self.attenuation_violations
                .push(format!("{}:{:?}", d.job, d.phase));
        }
    }

    async fn on_delivery(&mut self, d: Delivery, t: i64) {
        let Some(&idx) = self.index.get(&d.job) else { return };
        if self.jobs[idx].finished() {
            return;
        }
        self.jobs[idx].held = false;
        self.check_attenuation(idx, &d);
        self.transcript.record(
            t,
            Edge::SubmitExecute,
            Direction::Request,
            Some(&d.job),
            "token_delivery",
            json!({"phase": d.phase, "token": d.token, "expires_at": d.expires_at}),
        );
        let counts = &mut self.jobs[idx].report.deliveries;
        match d.phase {
            Phase::StageIn => {
                counts.stage_in += 1;
                if self.jobs[idx].has(|f| *f == FaultKind::ExpireToken) {
                    // Sit on the token until the gateway can no longer
                    // accept it.
                    let when = d.expires_at + self.run.settings.skew + 1;
                    self.schedule(when, Event::UseStageIn(idx, d.token));
                } else {
                    self.stage_in(idx, d.token, t).await;
                }
            }
            Phase::Execute => {
                counts.execute += 1;
                let first = self.jobs[idx].stage == Stage::AwaitExecute;
                self.jobs[idx].exec_token = Some(d.token);
                if first {
                    self.jobs[idx].stage = Stage::Executing;
                    let end = t + self.jobs[idx].spec.duration;
                    self.schedule(end, Event::End(idx));
                }
                self.exec_reads(idx, t).await;
            }
            Phase::StageOut => {
                counts.stage_out += 1;
                self.stage_out(idx, d.token, t).await;
            }
        }
    }

    async fn data_request(
        &mut self,
        idx: usize,
        method: Method,
        path: &str,
        token: &str,
        body: Vec<u8>,
        t: i64,
    ) -> DataReply {
        let job = &self.jobs[idx].spec;
        let (id, node) = (job.id.clone(), job.node.clone());
        let kind = match method {
            Method::Get => "get",
            Method::Put => "put",
        };
        self.transcript.record(
            t,
            Edge::ExecuteData,
            Direction::Request,
            Some(&id),
            kind,
            json!({"path": path, "authorization": format!("Bearer {token}"), "client": node}),
        );
        let req = GatewayRequest {
            method,
            path: path.to_owned(),
            bearer: Some(token.to_owned()),
            client_id: Some(node),
            body,
        };
        let reply = self.env.data.send(req).await;
        self.transcript.record(
            t,
            Edge::ExecuteData,
            Direction::Response,
            Some(&id),
            kind,
            json!({"status": reply.status, "error": reply.error}),
        );
        reply
    }

    async fn stage_in(&mut self, idx: usize, token: String, t: i64) {
        if self.jobs[idx].finished() {
            return;
        }
        let token = if self.jobs[idx].has(|f| *f == FaultKind::TamperToken) {
            tamper(&token)
        } else {
            token
        };
        let mut paths = JobSpec::read_paths(&self.jobs[idx].spec.inputs);
        if self.jobs[idx].has(|f| *f == FaultKind::OutOfScopePath) {
            paths.push(format!("/outside-scope/{}", self.jobs[idx].spec.id));
        }
        for path in paths {
            let reply = self.data_request(idx, Method::Get, &path, &token, Vec::new(), t).await;
            if !reply.is_success() {
                self.jobs[idx].note(reply.error.as_deref().unwrap_or("data_error"));
                self.fail(idx, t);
                return;
            }
        }
        if self.jobs[idx].spec.execute.as_ref().is_some_and(|s| !s.is_empty()) {
            self.jobs[idx].stage = Stage::AwaitExecute;
            self.request(idx, Phase::Execute, t).await;
        } else {
            self.jobs[idx].stage = Stage::Executing;
            let end = t + self.jobs[idx].spec.duration;
            self.schedule(end, Event::End(idx));
        }
    }

    /// Reads the execute-phase inputs: from the node's local cache when the
    /// token still allows it, from the gateway otherwise.
    async fn exec_reads(&mut self, idx: usize, t: i64) -> bool {
        let Some(token) = self.jobs[idx].exec_token.clone() else { return true };
        let scope = self.jobs[idx].spec.execute.clone().unwrap_or_else(|| Scope::new(vec![]));
        let node = self.jobs[idx].spec.node.clone();
        for path in JobSpec::read_paths(&scope) {
            let cached = self.caches.entry(node.clone()).or_default().authorize_cached_read(
                self.env.gateway.access_check(),
                &self.env.exec_keys,
                &token,
                &path,
                Some(&node),
                t,
            );
            match cached {
                Ok(Some(_)) => self.local_hits += 1,
                Ok(None) => {
                    let reply = self.data_request(idx, Method::Get, &path, &token, Vec::new(), t).await;
                    if !reply.is_success() {
                        self.jobs[idx].note(reply.error.as_deref().unwrap_or("data_error"));
                        self.fail(idx, t);
                        return false;
                    }
                    if let Ok(p) = normalize_path(&path) {
                        self.caches.entry(node.clone()).or_default().insert(p, reply.body);
                    }
                }
                Err(denial) => {
                    self.jobs[idx].note(&denial.code);
                    self.fail(idx, t);
                    return false;
                }
            }
        }
        true
    }

    async fn end_execute(&mut self, idx: usize, t: i64) {
        if self.jobs[idx].stage != Stage::Executing {
            return;
        }
        if !self.exec_reads(idx, t).await {
            return;
        }
        let id = self.jobs[idx].spec.id.clone();
        self.env.manager.mark_complete(&id);
        self.jobs[idx].exec_token = None;
        self.jobs[idx].stage = Stage::AwaitStageOut;
        if self.jobs[idx].spec.outputs.is_empty() {
            self.done(idx, t);
        } else {
            self.request(idx, Phase::StageOut, t).await;
        }
    }

    async fn stage_out(&mut self, idx: usize, token: String, t: i64) {
        for path in self.jobs[idx].spec.output_paths() {
            let body = format!("output of {} written at {}\n", self.jobs[idx].spec.id, t - self.start);
            let reply = self.data_request(idx, Method::Put, &path, &token, body.into_bytes(), t).await;
            if !reply.is_success() {
                self.jobs[idx].note(reply.error.as_deref().unwrap_or("data_error"));
                self.fail(idx, t);
                return;
            }
        }
        self.done(idx, t);
    }

    fn release(&mut self, idx: usize, t: i64) {
        let id = self.jobs[idx].spec.id.clone();
        self.jobs[idx].report.retries = self
            .env
            .manager
            .retry_log(&id)
            .into_iter()
            .map(|r| r - self.start)
            .collect();
        self.jobs[idx].report.finished = Some(t - self.start);
        self.env.manager.finish(&id);
        self.watch.remove(&idx);
        self.in_flight -= 1;
        self.fill_slots(t);
    }

    fn done(&mut self, idx: usize, t: i64) {
        self.jobs[idx].stage = Stage::Done;
        self.jobs[idx].report.outcome = Outcome::Succeeded;
        self.release(idx, t);
    }

    fn fail(&mut self, idx: usize, t: i64) {
        if self.jobs[idx].finished() {
            return;
        }
        debug!(job = %self.jobs[idx].spec.id, codes = ?self.jobs[idx].report.error_codes, "job failed");
        self.jobs[idx].stage = Stage::Failed;
        self.jobs[idx].report.outcome = Outcome::Failed;
        self.release(idx, t);
    }

    fn report(&self) -> RunReport {
        let s = &self.run.settings;
        let jobs: Vec<JobReport> = self.jobs.iter().map(|j| j.report.clone()).collect();
        let mstats = self.env.manager.stats();
        let gstats = self.env.gateway.stats();
        let gateway_issuer_calls = gstats.issuer_calls - self.baseline_gateway_calls;
        let issuer_verifier_calls =
            self.env.issuer.metrics().verifier_calls() - self.baseline_verifier_calls;
        let span = self.last - self.start;
        let totals = Totals {
            jobs: jobs.len(),
            succeeded: jobs.iter().filter(|j| j.outcome == Outcome::Succeeded).count(),
            failed: jobs.iter().filter(|j| j.outcome == Outcome::Failed).count(),
            deliveries: mstats.deliveries,
            execute_deliveries: jobs.iter().map(|j| j.deliveries.execute as u64).sum(),
            refreshes: mstats.refreshes,
            mints: mstats.mints,
            cache_hits: mstats.cache_hits,
            holds: jobs.iter().map(|j| j.holds as u64).sum(),
            gateway_requests: gstats.requests,
            gateway_denied: gstats.denied,
            local_cache_hits: self.local_hits,
            gateway_issuer_calls,
            issuer_verifier_calls,
            span,
        };

        let minted = self.env.submit_issuer.minted();
        let mut mints_by_key: BTreeMap<String, u64> = BTreeMap::new();
        let mut escalations = Vec::new();
        for token in &minted {
            let Ok((_, claims)) = decode_unverified(token) else {
                escalations.push("undecodable token".to_owned());
                continue;
            };
            let key = format!(
                "{} | {} | {}",
                claims.scope.canonical_string(),
                claims.aud,
                claims.origin.as_deref().unwrap_or("")
            );
            *mints_by_key.entry(key).or_default() += 1;
            let grantable = self.env.policy.grantable(&claims.sub, &[], &claims.aud);
            if attenuate(&grantable, claims.scope.permissions()).is_err() {
                escalations.push(claims.scope.canonical_string());
            }
        }

        let summary = self.transcript.summary();
        let mut invariants = vec![
            InvariantCheck::new(
                "containment",
                summary.leaks.is_empty() && summary.handles_tracked > 0,
                format!(
                    "{} refresh handles tracked, {} found outside submit->issuer",
                    summary.handles_tracked,
                    summary.leaks.len()
                ),
            ),
            InvariantCheck::new(
                "attenuation_at_edge",
                self.attenuation_violations.is_empty(),
                format!("{} deliveries differed from the request", self.attenuation_violations.len()),
            ),
            InvariantCheck::new(
                "no_escalation",
                escalations.is_empty(),
                format!("{} of {} minted tokens exceed policy", escalations.len(), minted.len()),
            ),
            InvariantCheck::new(
                "decentralized_validation",
                gateway_issuer_calls == 0 && issuer_verifier_calls == 0,
                format!(
                    "{gateway_issuer_calls} gateway->issuer calls, {issuer_verifier_calls} issuer verifier calls after warm-up"
                ),
            ),
        ];
        let period = s.access_lifetime - s.refresh_margin;
        let bound = (span / period + 1) as u64;
        invariants.push(if s.share_tokens {
            let worst = mints_by_key.values().copied().max().unwrap_or(0);
            InvariantCheck::new(
                "cache_sharing",
                worst <= bound,
                format!("max {worst} mints per key, bound {bound} over {span}s"),
            )
        } else {
            InvariantCheck::new("cache_sharing", true, "sharing disabled for this run")
        });
        let mut isolation = Vec::new();
        for job in &self.jobs {
            let expected: Vec<&str> = job.faults.iter().map(|f| f.designated_code()).collect();
            let codes = &job.report.error_codes;
            let must_fail = job.faults.iter().any(|f| !f.recoverable());
            let ok = if job.faults.is_empty() {
                job.report.outcome == Outcome::Succeeded && codes.is_empty()
            } else {
                expected.iter().all(|e| codes.iter().any(|c| c == e))
                    && codes.iter().all(|c| expected.contains(&c.as_str()))
                    && (job.report.outcome == Outcome::Failed) == must_fail
            };
            if !ok {
                isolation.push(job.spec.id.clone());
            }
        }
        invariants.push(InvariantCheck::new(
            "fault_isolation",
            isolation.is_empty(),
            if isolation.is_empty() {
                format!("{} faults, each confined to its job", self.run.faults.len())
            } else {
                format!("unexpected outcome for: {}", isolation.join(", "))
            },
        ));

        RunReport {
            jobs,
            totals,
            mints_by_key,
            transcript: summary,
            invariants,
        }
    }
}

/// Alters one character in the middle of the signature segment.
pub fn tamper(token: &str) -> String {
    let sig_start = token.rfind('.').map_or(0, |i| i + 1);
    let pos = sig_start + (token.len() - sig_start) / 2;
    let mut bytes = token.as_bytes().to_vec();
    bytes[pos] = if bytes[pos] == b'A' { b'B' } else { b'A' };
    String::from_utf8(bytes).expect("token is ASCII")
}
