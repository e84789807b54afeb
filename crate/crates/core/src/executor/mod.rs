//! Trial dispatch over a bounded pool of workers.
//!
//! The executor pulls [`TrialSpec`]s from a [`TrialSource`], runs each on a
//! worker (a local simulator process or a remote TCP worker), and hands back
//! one [`TrialRecord`] per spec in submission order. At most
//! `max_concurrent` attempts run at once. Failed attempts are retried on any
//! worker; a worker that cannot be reached three times in a row is dropped
//! from the pool.

pub mod transport;
pub mod worker;

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{encode_request, parse_message, Metrics, SimMessage, SimRequest};
use crate::ParamConfig;
use transport::{LocalConnection, RemoteConnection, SimConnection};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
pub const MAX_CONSECUTIVE_CONNECT_FAILURES: u32 = 3;
pub const WORKERS_ENV: &str = "SIMFLOCK_WORKERS";
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub cpus: u32,
}

impl Default for Resources {
    fn default() -> Self {
        Resources { cpus: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub trial_id: u64,
    pub config: ParamConfig,
    pub seed: u64,
    pub resources: Resources,
}

impl TrialSpec {
    /// A spec needing one cpu.
    pub fn new(trial_id: u64, config: ParamConfig, seed: u64) -> Self {
        TrialSpec { trial_id, config, seed, resources: Resources::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialStatus {
    Completed,
    Failed,
    Rejected,
    Pruned,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Completed => "Completed",
            TrialStatus::Failed => "Failed",
            TrialStatus::Rejected => "Rejected",
            TrialStatus::Pruned => "Pruned",
        }
    }
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub config: ParamConfig,
    pub status: TrialStatus,
    pub metrics: Metrics,
    /// Seconds from dispatch of the final attempt to its terminal message.
    pub wall_time: f64,
    pub attempts: u32,
    /// Failure detail, or the rejection reason for `Rejected`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    fn new(spec: &TrialSpec, status: TrialStatus, attempts: u32) -> Self {
        TrialRecord {
            trial_id: spec.trial_id,
            config: spec.config.clone(),
            status,
            metrics: Metrics::new(),
            wall_time: 0.0,
            attempts,
            error: None,
        }
    }

    /// Marks the record failed, dropping any metrics.
    pub fn fail(&mut self, detail: impl Into<String>) {
        self.status = TrialStatus::Failed;
        self.metrics.clear();
        self.error = Some(detail.into());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerEndpoint {
    /// A simulator executable plus arguments, spawned once per attempt.
    /// `slots` caps concurrent trials on this worker; `None` is unlimited.
    LocalProcess { command: Vec<String>, slots: Option<usize> },
    RemoteTcp { address: String },
}

impl WorkerEndpoint {
    pub fn local<S: Into<String>>(command: impl IntoIterator<Item = S>) -> Self {
        WorkerEndpoint::LocalProcess { command: command.into_iter().map(Into::into).collect(), slots: None }
    }

    pub fn remote(address: impl Into<String>) -> Self {
        WorkerEndpoint::RemoteTcp { address: address.into() }
    }

    /// Parses `tcp://host:port`, a bare `host:port`, or a whitespace-separated
    /// local command line.
    pub fn parse(s: &str) -> Result<Self, ExecutorError> {
        let s = s.trim();
        if let Some(addr) = s.strip_prefix("tcp://") {
            let ep = WorkerEndpoint::remote(addr);
            ep.check()?;
            return Ok(ep);
        }
        if !s.contains(char::is_whitespace) && !s.contains('/') && parse_host_port(s).is_some() {
            return Ok(WorkerEndpoint::remote(s));
        }
        let ep = WorkerEndpoint::local(s.split_whitespace());
        ep.check()?;
        Ok(ep)
    }

    /// Endpoints from the comma-separated [`WORKERS_ENV`] variable, if set.
    pub fn from_env() -> Result<Option<Vec<Self>>, ExecutorError> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) if !v.trim().is_empty() => parse_list(&v).map(Some),
            _ => Ok(None),
        }
    }

    pub fn check(&self) -> Result<(), ExecutorError> {
        match self {
            WorkerEndpoint::LocalProcess { command, slots } => {
                if command.is_empty() || command[0].is_empty() {
                    return Err(ExecutorError::InvalidConfig("local worker command is empty".into()));
                }
                if *slots == Some(0) {
                    return Err(ExecutorError::InvalidConfig("worker slots must be positive".into()));
                }
                Ok(())
            }
            WorkerEndpoint::RemoteTcp { address } => match parse_host_port(address) {
                Some(_) => Ok(()),
                None => Err(ExecutorError::InvalidConfig(format!("`{address}` is not host:port"))),
            },
        }
    }
}

pub fn parse_list(s: &str) -> Result<Vec<WorkerEndpoint>, ExecutorError> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(WorkerEndpoint::parse).collect()
}

fn parse_host_port(s: &str) -> Option<(&str, u16)> {
    let (host, port) = s.rsplit_once(':')?;
    let host = host.strip_prefix('[').and_then(|h| h.strip_suffix(']')).unwrap_or(host);
    if host.is_empty() {
        return None;
    }
    Some((host, port.parse().ok()?))
}

impl fmt::Display for WorkerEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkerEndpoint::LocalProcess { command, .. } => f.write_str(&command.join(" ")),
            WorkerEndpoint::RemoteTcp { address } => write!(f, "tcp://{address}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutorConfig {
    pub max_concurrent: usize,
    pub retries: u32,
    pub timeout: Duration,
    /// Forwarded to simulators as `report_steps`.
    pub report_steps: Option<u32>,
    /// Extra environment for local simulator processes.
    pub env: Vec<(String, String)>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig { max_concurrent: 1, retries: 0, timeout: DEFAULT_TIMEOUT, report_steps: None, env: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecutorError {
    #[error("worker pool is empty")]
    NoWorkers,
    #[error("every worker became unreachable ({})", removed.join(", "))]
    PoolExhausted { removed: Vec<String> },
    #[error("worker {endpoint} is unreachable: {detail}")]
    WorkerUnreachable { endpoint: String, detail: String },
    #[error("simulator timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol violation: {detail}")]
    ProtocolViolation { detail: String },
    #[error("invalid executor settings: {0}")]
    InvalidConfig(String),
}

/// Progress notifications, delivered on the calling thread.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecEvent {
    Started { trial_id: u64, attempt: u32, worker: String },
    Report { trial_id: u64, step: u32, metrics: Metrics },
    Retry { trial_id: u64, attempt: u32, error: String },
    WorkerRemoved { worker: String },
    Finished(TrialRecord),
}

pub enum Feed {
    Spec(TrialSpec),
    /// Nothing to issue until an in-flight trial finishes.
    Wait,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportAction {
    Continue,
    Prune,
    Fail(String),
}

/// Supplies specs and reacts to results. All calls happen on the thread
/// that called [`run_feed`].
pub trait TrialSource {
    /// Called whenever a slot is free. `Wait` with nothing in flight ends the run.
    fn next_spec(&mut self, in_flight: usize) -> Feed;

    fn on_report(&mut self, _trial_id: u64, _step: u32, _metrics: &Metrics) -> ReportAction {
        ReportAction::Continue
    }

    /// Sees each final record before it is stored; may rewrite it.
    fn on_record(&mut self, _record: &mut TrialRecord) {}

    fn on_event(&mut self, _event: &ExecEvent) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// One record per issued spec, in issue order.
    pub records: Vec<TrialRecord>,
    /// Highest number of simultaneously running attempts.
    pub peak_concurrency: usize,
    pub removed_workers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FailKind {
    Timeout,
    Violation,
    Crash,
}

#[derive(Debug)]
enum AttemptOutcome {
    Done { metrics: Metrics, wall: f64 },
    Rejected { reason: String, wall: f64 },
    Failed { kind: FailKind, detail: String, wall: f64 },
    Unreachable(String),
    Cancelled { wall: f64 },
}

fn open(endpoint: &WorkerEndpoint, env: &[(String, String)], line: &str) -> std::io::Result<Box<dyn SimConnection>> {
    Ok(match endpoint {
        WorkerEndpoint::LocalProcess { command, .. } => Box::new(LocalConnection::spawn(command, env, line)?),
        WorkerEndpoint::RemoteTcp { address } => Box::new(RemoteConnection::open(address, line)?),
    })
}

/// Runs one attempt to completion, forwarding reports as they arrive.
fn run_attempt(
    spec: &TrialSpec,
    endpoint: &WorkerEndpoint,
    cfg: &ExecutorConfig,
    cancel: &AtomicBool,
    on_report: &mut dyn FnMut(u32, Metrics),
) -> AttemptOutcome {
    let req = SimRequest::new(spec.trial_id, spec.config.clone(), spec.seed, cfg.report_steps);
    let line = match encode_request(&req) {
        Ok(l) => l,
        Err(e) => return AttemptOutcome::Failed { kind: FailKind::Violation, detail: e.to_string(), wall: 0.0 },
    };
    let start = Instant::now();
    let deadline = start + cfg.timeout;
    let mut conn = match open(endpoint, &cfg.env, &line) {
        Ok(c) => c,
        Err(e) => return AttemptOutcome::Unreachable(e.to_string()),
    };

    let fail = |conn: &mut Box<dyn SimConnection>, kind, detail: String| {
        conn.abort();
        AttemptOutcome::Failed { kind, detail, wall: start.elapsed().as_secs_f64() }
    };

    let mut last_step = 0;
    let mut terminal: Option<(SimMessage, f64)> = None;
    loop {
        if cancel.load(Ordering::SeqCst) {
            conn.abort();
            return AttemptOutcome::Cancelled { wall: start.elapsed().as_secs_f64() };
        }
        let now = Instant::now();
        if now >= deadline {
            return fail(&mut conn, FailKind::Timeout, format!("timed out after {:?}", cfg.timeout));
        }
        match conn.lines().recv_timeout(POLL.min(deadline - now)) {
            Ok(Ok(line)) => {
                if terminal.is_some() {
                    return fail(&mut conn, FailKind::Violation, format!("output after terminal message: {line}"));
                }
                match parse_message(&line) {
                    Err(e) => return fail(&mut conn, FailKind::Violation, e.to_string()),
                    Ok(SimMessage::Report { step, metrics }) => {
                        if step <= last_step {
                            return fail(&mut conn, FailKind::Violation, format!("report step {step} after step {last_step}"));
                        }
                        last_step = step;
                        on_report(step, metrics);
                    }
                    Ok(SimMessage::Done { metrics }) if metrics.is_empty() => {
                        return fail(&mut conn, FailKind::Violation, "done message carries no metrics".into());
                    }
                    Ok(msg) => terminal = Some((msg, start.elapsed().as_secs_f64())),
                }
            }
            Ok(Err(e)) => return fail(&mut conn, FailKind::Crash, format!("reading simulator output: {e}")),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }

    let ended = conn.finish(deadline);
    let with_stderr = |msg: String| {
        let tail = conn.stderr_tail();
        if tail.is_empty() {
            msg
        } else {
            format!("{msg}; stderr: {tail}")
        }
    };
    let wall_now = start.elapsed().as_secs_f64();
    match (terminal, ended) {
        (None, Ok(())) => AttemptOutcome::Failed {
            kind: FailKind::Crash,
            detail: with_stderr("simulator exited before sending a terminal message".into()),
            wall: wall_now,
        },
        (None, Err(why)) => AttemptOutcome::Failed {
            kind: FailKind::Crash,
            detail: with_stderr(format!("simulator ended without a terminal message ({why})")),
            wall: wall_now,
        },
        (Some((SimMessage::Error { detail }, wall)), _) => AttemptOutcome::Failed { kind: FailKind::Crash, detail, wall },
        (Some(_), Err(why)) => AttemptOutcome::Failed {
            kind: FailKind::Crash,
            detail: with_stderr(format!("simulator failed after its terminal message ({why})")),
            wall: wall_now,
        },
        (Some((SimMessage::Done { metrics }, wall)), Ok(())) => AttemptOutcome::Done { metrics, wall },
        (Some((SimMessage::Rejected { reason }, wall)), Ok(())) => AttemptOutcome::Rejected { reason, wall },
        (Some((SimMessage::Report { .. }, _)), Ok(())) => unreachable!("reports are never terminal"),
    }
}

/// Runs a single attempt of `spec` on `endpoint`.
///
/// Simulator-side failures (an `error` message, a nonzero exit) come back as a
/// `Failed` record; timeouts, protocol violations and connection failures
/// are errors.
pub fn dispatch_one(spec: &TrialSpec, endpoint: &WorkerEndpoint, timeout: Duration) -> Result<TrialRecord, ExecutorError> {
    endpoint.check()?;
    let cfg = ExecutorConfig { timeout, ..ExecutorConfig::default() };
    let outcome = run_attempt(spec, endpoint, &cfg, &AtomicBool::new(false), &mut |_, _| {});
    let mut rec = TrialRecord::new(spec, TrialStatus::Completed, 1);
    match outcome {
        AttemptOutcome::Done { metrics, wall } => {
            rec.metrics = metrics;
            rec.wall_time = wall;
        }
        AttemptOutcome::Rejected { reason, wall } => {
            rec.status = TrialStatus::Rejected;
            rec.error = Some(reason);
            rec.wall_time = wall;
        }
        AttemptOutcome::Failed { kind: FailKind::Timeout, .. } => return Err(ExecutorError::Timeout(timeout)),
        AttemptOutcome::Failed { kind: FailKind::Violation, detail, .. } => return Err(ExecutorError::ProtocolViolation { detail }),
        AttemptOutcome::Failed { kind: FailKind::Crash, detail, wall } => {
            rec.fail(detail);
            rec.wall_time = wall;
        }
        AttemptOutcome::Unreachable(detail) => {
            return Err(ExecutorError::WorkerUnreachable { endpoint: endpoint.to_string(), detail })
        }
        AttemptOutcome::Cancelled { .. } => unreachable!("no cancel flag is set"),
    }
    Ok(rec)
}

#[derive(Debug)]
struct Worker {
    endpoint: WorkerEndpoint,
    label: String,
    capacity: Option<usize>,
    used: usize,
    running: usize,
    connect_failures: u32,
    removed: bool,
}

impl Worker {
    fn fits(&self, cpus: usize) -> bool {
        !self.removed && self.capacity.is_none_or(|c| self.used + cpus <= c)
    }
}

struct Pending {
    spec: TrialSpec,
    position: usize,
    attempts: u32,
}

enum Forced {
    Prune,
    Fail(String),
}

struct InFlight {
    spec: TrialSpec,
    position: usize,
    attempts: u32,
    worker: usize,
    cancel: Arc<AtomicBool>,
    last_metrics: Metrics,
    forced: Option<Forced>,
}

enum Msg {
    Report { trial_id: u64, step: u32, metrics: Metrics },
    Finished { trial_id: u64, outcome: AttemptOutcome },
}

fn pick_worker(workers: &[Worker], cursor: &mut usize, cpus: usize) -> Option<usize> {
    let n = workers.len();
    let mut best: Option<usize> = None;
    for k in 0..n {
        let i = (*cursor + k) % n;
        if workers[i].fits(cpus) && best.is_none_or(|b| workers[i].running < workers[b].running) {
            best = Some(i);
        }
    }
    if let Some(i) = best {
        *cursor = (i + 1) % n;
    }
    best
}

/// Runs every spec the source issues. Returns `PoolExhausted` if all workers
/// are dropped while work remains; in-flight attempts are cancelled first.
pub fn run_feed(source: &mut dyn TrialSource, pool: &[WorkerEndpoint], cfg: &ExecutorConfig) -> Result<RunOutcome, ExecutorError> {
    if pool.is_empty() {
        return Err(ExecutorError::NoWorkers);
    }
    if cfg.max_concurrent == 0 {
        return Err(ExecutorError::InvalidConfig("max_concurrent must be at least 1".into()));
    }
    for ep in pool {
        ep.check()?;
    }

    let mut workers: Vec<Worker> = pool
        .iter()
        .map(|ep| {
            let (capacity, connect_failures) = match ep {
                WorkerEndpoint::LocalProcess { slots, .. } => (*slots, 0),
                WorkerEndpoint::RemoteTcp { address } => match transport::probe(address) {
                    Ok(slots) => (Some(slots.max(1)), 0),
                    Err(_) => (Some(1), 1),
                },
            };
            Worker {
                endpoint: ep.clone(),
                label: ep.to_string(),
                capacity,
                used: 0,
                running: 0,
                connect_failures,
                removed: false,
            }
        })
        .collect();

    let running = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (tx, rx) = mpsc::channel::<Msg>();

    std::thread::scope(|scope| {
        let mut records: Vec<Option<TrialRecord>> = Vec::new();
        let mut pending: VecDeque<Pending> = VecDeque::new();
        let mut in_flight: Vec<InFlight> = Vec::new();
        let mut removed: Vec<String> = Vec::new();
        let mut cursor = 0usize;
        let mut source_done = false;

        let abort_all = |in_flight: &[InFlight]| {
            for f in in_flight {
                f.cancel.store(true, Ordering::SeqCst);
            }
        };

        loop {
            // Fill free slots: retries first, then new specs.
            while in_flight.len() < cfg.max_concurrent {
                let job = match pending.pop_front() {
                    Some(p) => p,
                    None if source_done => break,
                    None => {
                        if !workers.iter().any(|w| w.fits(1)) {
                            break;
                        }
                        match source.next_spec(in_flight.len()) {
                            Feed::Spec(spec) => {
                                records.push(None);
                                Pending { spec, position: records.len() - 1, attempts: 0 }
                            }
                            Feed::Wait => break,
                            Feed::Done => {
                                source_done = true;
                                break;
                            }
                        }
                    }
                };
                let cpus = job.spec.resources.cpus.max(1) as usize;
                if !workers.iter().any(|w| !w.removed && w.capacity.is_none_or(|c| cpus <= c)) {
                    let mut rec = TrialRecord::new(&job.spec, TrialStatus::Failed, job.attempts.max(1));
                    rec.fail(format!("trial needs {cpus} cpus but no worker offers that many slots"));
                    source.on_record(&mut rec);
                    source.on_event(&ExecEvent::Finished(rec.clone()));
                    records[job.position] = Some(rec);
                    continue;
                }
                let Some(w) = pick_worker(&workers, &mut cursor, cpus) else {
                    pending.push_front(job);
                    break;
                };
                workers[w].used += cpus;
                workers[w].running += 1;
                let attempt = job.attempts + 1;
                source.on_event(&ExecEvent::Started { trial_id: job.spec.trial_id, attempt, worker: workers[w].label.clone() });

                let cancel = Arc::new(AtomicBool::new(false));
                let (spec, endpoint, tx) = (job.spec.clone(), workers[w].endpoint.clone(), tx.clone());
                let (cancel2, running2, peak2) = (Arc::clone(&cancel), Arc::clone(&running), Arc::clone(&peak));
                scope.spawn(move || attempt_thread(spec, endpoint, cfg, cancel2, running2, peak2, tx));
                in_flight.push(InFlight {
                    spec: job.spec,
                    position: job.position,
                    attempts: attempt,
                    worker: w,
                    cancel,
                    last_metrics: Metrics::new(),
                    forced: None,
                });
            }

            if in_flight.is_empty() && (pending.is_empty() || !workers.iter().any(|w| !w.removed)) {
                if !pending.is_empty() {
                    return Err(ExecutorError::PoolExhausted { removed });
                }
                // Either the source is done or it is waiting on nothing.
                break;
            }

            let msg = rx.recv().expect("attempt threads hold senders while trials are in flight");
            match msg {
                Msg::Report { trial_id, step, metrics } => {
                    let Some(f) = in_flight.iter_mut().find(|f| f.spec.trial_id == trial_id) else { continue };
                    if f.forced.is_some() {
                        continue;
                    }
                    f.last_metrics = metrics.clone();
                    source.on_event(&ExecEvent::Report { trial_id, step, metrics: metrics.clone() });
                    match source.on_report(trial_id, step, &metrics) {
                        ReportAction::Continue => {}
                        ReportAction::Prune => f.forced = Some(Forced::Prune),
                        ReportAction::Fail(why) => f.forced = Some(Forced::Fail(why)),
                    }
                    if f.forced.is_some() {
                        f.cancel.store(true, Ordering::SeqCst);
                    }
                }
                Msg::Finished { trial_id, outcome } => {
                    let idx = in_flight.iter().position(|f| f.spec.trial_id == trial_id).expect("finished trial is in flight");
                    let f = in_flight.swap_remove(idx);
                    let cpus = f.spec.resources.cpus.max(1) as usize;
                    let w = &mut workers[f.worker];
                    w.used -= cpus;
                    w.running -= 1;

                    if matches!(outcome, AttemptOutcome::Unreachable(_)) {
                        w.connect_failures += 1;
                        if w.connect_failures >= MAX_CONSECUTIVE_CONNECT_FAILURES && !w.removed {
                            w.removed = true;
                            removed.push(w.label.clone());
                            source.on_event(&ExecEvent::WorkerRemoved { worker: w.label.clone() });
                        }
                        pending.push_front(Pending { spec: f.spec, position: f.position, attempts: f.attempts - 1 });
                        if workers.iter().all(|w| w.removed) {
                            abort_all(&in_flight);
                            return Err(ExecutorError::PoolExhausted { removed });
                        }
                        continue;
                    }
                    w.connect_failures = 0;

                    let mut rec = TrialRecord::new(&f.spec, TrialStatus::Completed, f.attempts);
                    match (f.forced, outcome) {
                        (Some(Forced::Prune), o) => {
                            rec.status = TrialStatus::Pruned;
                            rec.metrics = f.last_metrics;
                            rec.wall_time = wall_of(&o);
                        }
                        (Some(Forced::Fail(why)), o) => {
                            rec.fail(why);
                            rec.wall_time = wall_of(&o);
                        }
                        (None, AttemptOutcome::Done { metrics, wall }) => {
                            rec.metrics = metrics;
                            rec.wall_time = wall;
                        }
                        (None, AttemptOutcome::Rejected { reason, wall }) => {
                            rec.status = TrialStatus::Rejected;
                            rec.error = Some(reason);
                            rec.wall_time = wall;
                        }
                        (None, AttemptOutcome::Failed { kind, detail, wall }) => {
                            let detail = match kind {
                                FailKind::Violation => ExecutorError::ProtocolViolation { detail }.to_string(),
                                _ => detail,
                            };
                            if f.attempts <= cfg.retries {
                                source.on_event(&ExecEvent::Retry { trial_id, attempt: f.attempts, error: detail });
                                pending.push_front(Pending { spec: f.spec, position: f.position, attempts: f.attempts });
                                continue;
                            }
                            rec.fail(detail);
                            rec.wall_time = wall;
                        }
                        (None, AttemptOutcome::Cancelled { wall }) => {
                            rec.fail("attempt cancelled");
                            rec.wall_time = wall;
                        }
                        (None, AttemptOutcome::Unreachable(_)) => unreachable!(),
                    }
                    source.on_record(&mut rec);
                    source.on_event(&ExecEvent::Finished(rec.clone()));
                    records[f.position] = Some(rec);
                }
            }
        }

        Ok(RunOutcome {
            records: records.into_iter().map(|r| r.expect("every issued spec has a record")).collect(),
            peak_concurrency: peak.load(Ordering::SeqCst),
            removed_workers: removed,
        })
    })
}

fn wall_of(o: &AttemptOutcome) -> f64 {
    match *o {
        AttemptOutcome::Done { wall, .. }
        | AttemptOutcome::Rejected { wall, .. }
        | AttemptOutcome::Failed { wall, .. }
        | AttemptOutcome::Cancelled { wall } => wall,
        AttemptOutcome::Unreachable(_) => 0.0,
    }
}

fn attempt_thread(
    spec: TrialSpec,
    endpoint: WorkerEndpoint,
    cfg: &ExecutorConfig,
    cancel: Arc<AtomicBool>,
    running: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    tx: Sender<Msg>,
) {
    let now = running.fetch_add(1, Ordering::SeqCst) + 1;
    peak.fetch_max(now, Ordering::SeqCst);
    let trial_id = spec.trial_id;
    let report_tx = tx.clone();
    let outcome = run_attempt(&spec, &endpoint, cfg, &cancel, &mut |step, metrics| {
        let _ = report_tx.send(Msg::Report { trial_id, step, metrics });
    });
    // Release the slot before the driver can reuse it.
    running.fetch_sub(1, Ordering::SeqCst);
    let _ = tx.send(Msg::Finished { trial_id, outcome });
}

struct ListSource<I, F> {
    specs: I,
    on_event: F,
}

impl<I: Iterator<Item = TrialSpec>, F: FnMut(&ExecEvent)> TrialSource for ListSource<I, F> {
    fn next_spec(&mut self, _in_flight: usize) -> Feed {
        match self.specs.next() {
            Some(s) => Feed::Spec(s),
            None => Feed::Done,
        }
    }

    fn on_event(&mut self, event: &ExecEvent) {
        (self.on_event)(event)
    }
}

/// Runs a fixed stream of specs. Records come back in submission order.
pub fn run_trials(
    specs: impl IntoIterator<Item = TrialSpec>,
    pool: &[WorkerEndpoint],
    cfg: &ExecutorConfig,
    on_event: impl FnMut(&ExecEvent),
) -> Result<RunOutcome, ExecutorError> {
    let mut src = ListSource { specs: specs.into_iter(), on_event };
    run_feed(&mut src, pool, cfg)
}
