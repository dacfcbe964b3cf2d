//! The OCM runtime: a pool of workers executing inter-yield segments under a
//! backend, with round-robin dispatch, commit-time publication of output and
//! quiescence detection.
//!
//! # Scheduling
//!
//! The ready queue is a FIFO cycle. Dispatching a thread moves it to the
//! back of the queue while it runs; a worker that finds a still-running
//! thread at the front waits for it rather than skipping ahead. Between two
//! dispatches of any thread every other queued thread is therefore
//! dispatched at most once.
//!
//! A thread that ends a segment with `YieldUntil(p)` is polled: its next
//! segment opens normally, evaluates `p` read-only, and either continues
//! into the step (so the step runs atomically with `p` true) or is
//! abandoned. A thread whose poll failed parks until some later commit.
//! When nothing is queued or running and every parked thread has been
//! polled since the last commit, the run is stuck.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use sha2::{Digest, Sha256};

use crate::backend::{Backend, BackendKind, Cm, EventLog, LockEvent, SegmentEnv};
use crate::commit::{Born, CommitLog, CommitResult};
use crate::error::RuntimeError;
use crate::program::{Ctx, Locals, Perturb, Program, SegmentOutcome, ThreadId, ThreadStatus};
use crate::store::{SharedStore, Value, VarId};
use crate::trace::{Manifest, RunSummary, Trace, TraceRecord};

/// Per-run knobs.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub workers: usize,
    /// Program seed; per-thread PRNG seeds derive from it.
    pub seed: u64,
    /// Whether `Ctx::delay` really sleeps.
    pub delays: bool,
    /// Seed for schedule noise at shared accesses; `None` disables it.
    pub perturb: Option<u64>,
    pub record_lock_events: bool,
}

impl RunConfig {
    pub fn new(workers: usize) -> Self {
        RunConfig {
            workers,
            seed: 0,
            delays: false,
            perturb: None,
            record_lock_events: false,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn delays(mut self, on: bool) -> Self {
        self.delays = on;
        self
    }

    pub fn perturb(mut self, seed: u64) -> Self {
        self.perturb = Some(seed);
        self
    }

    pub fn lock_events(mut self, on: bool) -> Self {
        self.record_lock_events = on;
        self
    }
}

/// One cooperative thread.
#[derive(Clone)]
pub struct ThreadRecord {
    pub tid: ThreadId,
    pub program: Arc<dyn Program>,
    pub locals: Locals,
    /// Locals as of the most recent segment start.
    pub checkpoint: Locals,
    pub status: ThreadStatus,
    /// Committed segments so far.
    pub seg_ordinal: u64,
}

impl ThreadRecord {
    pub fn new(tid: ThreadId, program: Arc<dyn Program>, locals: Locals) -> Self {
        ThreadRecord {
            tid,
            program,
            checkpoint: locals.clone(),
            locals,
            status: ThreadStatus::Ready,
            seg_ordinal: 0,
        }
    }

    fn from_born(born: Born) -> Self {
        Self::new(born.tid, born.program, born.locals)
    }
}

/// End-of-run view of one thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadSnapshot {
    pub tid: ThreadId,
    pub program: String,
    pub status: ThreadStatus,
    pub seg_ordinal: u64,
    pub locals: Locals,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbortRecord {
    pub tid: ThreadId,
    pub seg_ordinal: u64,
    /// The conflicting variable; `None` when the attempt failed on an
    /// inconsistent read before reaching commit.
    pub var: Option<VarId>,
}

/// Wall-clock span of a committed segment's body, from the backend's
/// `begin` returning to the start of commit, relative to run start.
#[derive(Clone, Debug)]
pub struct SegmentSpan {
    pub tid: ThreadId,
    pub seg_ordinal: u64,
    pub ordinal: u64,
    pub start: Duration,
    pub end: Duration,
}

/// Diagnostics that are not part of the observable result.
#[derive(Clone, Debug, Default)]
pub struct RunStats {
    pub aborts: Vec<AbortRecord>,
    /// Every dispatch, in dispatch order.
    pub dispatches: Vec<ThreadId>,
    pub failed_polls: u64,
    pub lock_events: Vec<LockEvent>,
    pub spans: Vec<SegmentSpan>,
    pub wall: Duration,
}

#[derive(Clone, Debug)]
pub struct ExecutionResult {
    pub final_shared: Vec<Value>,
    pub log: Vec<String>,
    pub trace: Trace,
    /// Ended with live threads and none runnable.
    pub stuck: bool,
    pub commits: u64,
    pub threads: Vec<ThreadSnapshot>,
    pub stats: RunStats,
}

impl ExecutionResult {
    pub fn waiting(&self) -> Vec<ThreadId> {
        self.threads
            .iter()
            .filter(|t| t.status != ThreadStatus::Done)
            .map(|t| t.tid)
            .collect()
    }

    /// Field-for-field equality of everything observable, ignoring timing
    /// and backend metadata.
    pub fn same_observation(&self, other: &ExecutionResult) -> bool {
        self.final_shared == other.final_shared
            && self.log == other.log
            && self.trace.records == other.trace.records
            && self.stuck == other.stuck
            && self.commits == other.commits
    }
}

pub fn log_digest(log: &[String]) -> String {
    let mut hasher = Sha256::new();
    for line in log {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

type BackendFactory = Arc<dyn Fn(usize) -> Box<dyn Backend> + Send + Sync>;

#[derive(Clone)]
enum BackendChoice {
    Kind(BackendKind),
    Custom(BackendFactory),
}

/// Builder and driver for one run.
pub struct Runtime {
    backend: BackendChoice,
    initial: Vec<Value>,
    threads: Vec<(Arc<dyn Program>, Locals)>,
    program: String,
    params: BTreeMap<String, i64>,
    started: bool,
}

impl Runtime {
    pub fn new(kind: BackendKind) -> Self {
        Runtime {
            backend: BackendChoice::Kind(kind),
            initial: Vec::new(),
            threads: Vec::new(),
            program: String::new(),
            params: BTreeMap::new(),
            started: false,
        }
    }

    /// Runs with a caller-supplied backend, e.g. a test double.
    pub fn with_backend(factory: impl Fn(usize) -> Box<dyn Backend> + Send + Sync + 'static) -> Self {
        Runtime {
            backend: BackendChoice::Custom(Arc::new(factory)),
            ..Runtime::new(BackendKind::Cm)
        }
    }

    /// Names the workload in the trace manifest.
    pub fn describe(&mut self, program: &str, params: &BTreeMap<String, i64>) {
        self.program = program.to_string();
        self.params = params.clone();
    }

    pub fn create_shared(&mut self, initial: Value) -> Result<VarId, RuntimeError> {
        if self.started {
            return Err(RuntimeError::CalledDuringRun);
        }
        self.initial.push(initial);
        Ok(VarId(self.initial.len() as u32 - 1))
    }

    /// Registers a thread. Threads spawned after the run has started are
    /// assigned an id but never run.
    pub fn spawn(&mut self, program: Arc<dyn Program>, locals: Locals) -> ThreadId {
        self.threads.push((program, locals));
        ThreadId(self.threads.len() as u32 - 1)
    }

    fn backend(&self, vars: usize) -> Box<dyn Backend> {
        match &self.backend {
            BackendChoice::Kind(kind) => kind.instantiate(vars),
            BackendChoice::Custom(factory) => factory(vars),
        }
    }

    fn initial_records(&self) -> Vec<ThreadRecord> {
        self.threads
            .iter()
            .enumerate()
            .map(|(i, (p, l))| ThreadRecord::new(ThreadId(i as u32), Arc::clone(p), l.clone()))
            .collect()
    }

    fn manifest(&self, seed: u64) -> Manifest {
        Manifest {
            program: self.program.clone(),
            params: self.params.clone(),
            seed,
            initial: self.initial.clone(),
            threads: self.threads.len(),
        }
    }

    fn start(&mut self) -> Result<(), RuntimeError> {
        if self.started {
            return Err(RuntimeError::AlreadyRan);
        }
        if self.threads.is_empty() {
            return Err(RuntimeError::Config("no threads spawned".into()));
        }
        self.started = true;
        Ok(())
    }

    /// Executes until every thread is done or the run is quiescent.
    pub fn run(&mut self, cfg: &RunConfig) -> Result<ExecutionResult, RuntimeError> {
        if cfg.workers == 0 {
            return Err(RuntimeError::Config("workers must be at least 1".into()));
        }
        let backend = self.backend(self.initial.len());
        if backend.single_executor() && cfg.workers > 1 {
            return Err(RuntimeError::Config(format!(
                "the {} backend runs with exactly one worker",
                backend.name()
            )));
        }
        self.start()?;

        let store = SharedStore::new(&self.initial);
        let commits = CommitLog::new(self.threads.len());
        let events = EventLog::new(cfg.record_lock_events);
        let records = self.initial_records();
        let pool = Pool {
            backend: &*backend,
            store: &store,
            commits: &commits,
            events: &events,
            cfg,
            start: Instant::now(),
            sched: Mutex::new(Sched {
                queue: records.iter().map(|r| r.tid).collect(),
                slots: records
                    .into_iter()
                    .map(|r| Slot {
                        record: Some(r),
                        state: SlotState::Queued,
                    })
                    .collect(),
                running: 0,
                finished: false,
                error: None,
                stats: RunStats::default(),
            }),
            wake: Condvar::new(),
        };
        std::thread::scope(|s| {
            for w in 0..cfg.workers {
                let pool = &pool;
                s.spawn(move || pool.work(w as u64));
            }
        });

        let wall = pool.start.elapsed();
        let sched = pool.sched.into_inner();
        if let Some(err) = sched.error {
            return Err(err);
        }
        let stuck = sched.slots.iter().any(|s| matches!(s.state, SlotState::Parked(_)));
        let threads: Vec<ThreadSnapshot> = sched
            .slots
            .into_iter()
            .map(|s| snapshot(s.record.expect("thread record lost")))
            .collect();
        let mut stats = sched.stats;
        stats.wall = wall;
        stats.lock_events = events.into_events();
        let final_shared = store.snapshot();
        let (records, log) = commits.finish();
        Ok(self.result(
            backend.name(),
            cfg.workers,
            cfg.seed,
            final_shared,
            records,
            log,
            stuck,
            threads,
            stats,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn result(
        &self,
        backend: &str,
        workers: usize,
        seed: u64,
        final_shared: Vec<Value>,
        records: Vec<TraceRecord>,
        log: Vec<String>,
        stuck: bool,
        threads: Vec<ThreadSnapshot>,
        stats: RunStats,
    ) -> ExecutionResult {
        let waiting = threads
            .iter()
            .filter(|t| t.status != ThreadStatus::Done)
            .map(|t| t.tid)
            .collect();
        let summary = RunSummary {
            backend: backend.to_string(),
            workers,
            final_shared: final_shared.clone(),
            stuck,
            waiting,
            log_sha256: log_digest(&log),
        };
        ExecutionResult {
            commits: records.len() as u64,
            trace: Trace {
                manifest: self.manifest(seed),
                records,
                summary: Some(summary),
            },
            final_shared,
            log,
            stuck,
            threads,
            stats,
        }
    }

    /// Serial replay under `cm`: runs exactly the thread each record names,
    /// in order, calling `monitor` after every commit.
    pub fn replay(
        &mut self,
        records: &[TraceRecord],
        seed: u64,
        mut monitor: impl FnMut(u64, &[Value]),
    ) -> Result<ExecutionResult, RuntimeError> {
        self.start()?;
        let backend = Cm::new();
        let store = SharedStore::new(&self.initial);
        let commits = CommitLog::new(self.threads.len());
        let events = EventLog::new(false);
        let mut threads = self.initial_records();
        let start = Instant::now();
        let mut stats = RunStats::default();
        let exec = Exec {
            backend: &backend,
            store: &store,
            commits: &commits,
            events: &events,
            seed,
            delays: false,
        };

        for (i, rec) in records.iter().enumerate() {
            let ordinal = i as u64;
            let diverge = |reason: String| RuntimeError::TraceDivergence { ordinal, reason };
            if rec.ordinal != ordinal {
                return Err(diverge(format!("record carries ordinal {}", rec.ordinal)));
            }
            let thread = threads
                .get_mut(rec.tid.index())
                .ok_or_else(|| diverge(format!("thread {} does not exist", rec.tid.0)))?;
            if thread.status == ThreadStatus::Done {
                return Err(diverge(format!("thread {} is done", rec.tid.0)));
            }
            if thread.seg_ordinal != rec.seg_ordinal {
                return Err(diverge(format!(
                    "thread {} is at segment {}, trace says {}",
                    rec.tid.0, thread.seg_ordinal, rec.seg_ordinal
                )));
            }
            stats.dispatches.push(rec.tid);
            match exec.attempt(thread, None)? {
                Attempt::Committed { ordinal: got, .. } if got == ordinal => {}
                Attempt::Committed { ordinal: got, .. } => {
                    return Err(diverge(format!("segment committed as ordinal {got}")))
                }
                Attempt::PollFailed { .. } => {
                    return Err(diverge(format!("thread {} is waiting on a false predicate", rec.tid.0)))
                }
                Attempt::Aborted { .. } => return Err(diverge("unexpected abort".into())),
            }
            threads.extend(commits.drain_born().into_iter().map(ThreadRecord::from_born));
            monitor(ordinal, &store.snapshot());
        }

        let end = records.len() as u64;
        for thread in &mut threads {
            let runnable = match thread.status {
                ThreadStatus::Done => false,
                ThreadStatus::Ready => true,
                ThreadStatus::Waiting(_) => exec.probe(thread)?,
            };
            if runnable {
                return Err(RuntimeError::TraceDivergence {
                    ordinal: end,
                    reason: format!("thread {} can still run after the last record", thread.tid.0),
                });
            }
        }

        let stuck = threads.iter().any(|t| t.status != ThreadStatus::Done);
        let final_shared = store.snapshot();
        let (produced, log) = commits.finish();
        if let Some((i, _)) = produced.iter().zip(records).enumerate().find(|(_, (a, b))| a != b) {
            return Err(RuntimeError::TraceDivergence {
                ordinal: i as u64,
                reason: "segment label differs from the recorded one".into(),
            });
        }
        stats.wall = start.elapsed();
        let snapshots = threads.into_iter().map(snapshot).collect();
        Ok(self.result("cm", 1, seed, final_shared, produced, log, stuck, snapshots, stats))
    }
}

fn snapshot(r: ThreadRecord) -> ThreadSnapshot {
    ThreadSnapshot {
        tid: r.tid,
        program: r.program.name().to_string(),
        status: r.status,
        seg_ordinal: r.seg_ordinal,
        locals: r.locals,
    }
}

enum Attempt {
    Committed { ordinal: u64, body: (Instant, Instant) },
    Aborted { var: Option<VarId> },
    PollFailed { epoch: u64 },
}

/// Everything needed to execute one segment attempt.
struct Exec<'a> {
    backend: &'a dyn Backend,
    store: &'a SharedStore,
    commits: &'a CommitLog,
    events: &'a EventLog,
    seed: u64,
    delays: bool,
}

impl Exec<'_> {
    fn env(&self, t: &ThreadRecord) -> SegmentEnv<'_> {
        SegmentEnv {
            tid: t.tid,
            seg_ordinal: t.seg_ordinal,
            attempt: self.events.next_attempt(),
            store: self.store,
            commits: self.commits,
            events: self.events,
        }
    }

    fn access_error(t: &ThreadRecord, source: crate::AccessError) -> RuntimeError {
        RuntimeError::Access {
            tid: t.tid,
            seg_ordinal: t.seg_ordinal,
            source,
        }
    }

    /// Runs one segment of `t`, preceded by its pending predicate if any.
    fn attempt(&self, t: &mut ThreadRecord, mut perturb: Option<&mut Perturb>) -> Result<Attempt, RuntimeError> {
        let epoch = self.commits.reserved();
        let declared = t.program.access_set(&t.locals);
        let mut seg = self.backend.begin(self.env(t), declared.as_ref())?;
        let began = Instant::now();
        t.checkpoint.clone_from(&t.locals);

        if let ThreadStatus::Waiting(pred) = t.status {
            let mut ctx = Ctx::predicate(t.tid, &mut *seg, self.seed)
                .with_declared(declared.as_ref())
                .with_perturb(perturb.as_deref_mut());
            match t.program.predicate(pred, &t.locals, &mut ctx) {
                Ok(true) => {}
                Ok(false) => {
                    seg.cancel();
                    return Ok(Attempt::PollFailed { epoch });
                }
                Err(e) => {
                    let doomed = seg.doomed();
                    seg.cancel();
                    if doomed {
                        return Ok(Attempt::Aborted { var: None });
                    }
                    return Err(Self::access_error(t, e));
                }
            }
        }

        let mut ctx = Ctx::segment(t.tid, &mut *seg, self.seed)
            .with_declared(declared.as_ref())
            .with_sleep(self.delays)
            .with_perturb(perturb);
        let outcome = match t.program.step(&mut t.locals, &mut ctx) {
            Ok(outcome) => outcome,
            Err(e) => {
                t.locals.clone_from(&t.checkpoint);
                let doomed = seg.doomed();
                seg.cancel();
                if doomed {
                    return Ok(Attempt::Aborted { var: None });
                }
                return Err(Self::access_error(t, e));
            }
        };
        let publication = ctx.into_publication();
        let ended = Instant::now();
        match seg.end(publication) {
            CommitResult::Committed(ordinal) => {
                t.seg_ordinal += 1;
                t.status = match outcome {
                    SegmentOutcome::Yield => ThreadStatus::Ready,
                    SegmentOutcome::YieldUntil(p) => ThreadStatus::Waiting(p),
                    SegmentOutcome::Done => ThreadStatus::Done,
                };
                Ok(Attempt::Committed {
                    ordinal,
                    body: (began, ended),
                })
            }
            CommitResult::Aborted(var) => {
                t.locals.clone_from(&t.checkpoint);
                Ok(Attempt::Aborted { var: Some(var) })
            }
        }
    }

    /// Evaluates a waiting thread's predicate without running its step.
    fn probe(&self, t: &ThreadRecord) -> Result<bool, RuntimeError> {
        let ThreadStatus::Waiting(pred) = t.status else {
            return Ok(t.status == ThreadStatus::Ready);
        };
        let declared = t.program.access_set(&t.locals);
        let mut seg = self.backend.begin(self.env(t), declared.as_ref())?;
        let mut ctx = Ctx::predicate(t.tid, &mut *seg, self.seed).with_declared(declared.as_ref());
        let holds = t.program.predicate(pred, &t.locals, &mut ctx);
        seg.cancel();
        holds.map_err(|e| Self::access_error(t, e))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum SlotState {
    Queued,
    Running,
    /// Predicate was false as of this many commits.
    Parked(u64),
    Done,
}

struct Slot {
    record: Option<ThreadRecord>,
    state: SlotState,
}

struct Sched {
    queue: VecDeque<ThreadId>,
    slots: Vec<Slot>,
    running: usize,
    finished: bool,
    error: Option<RuntimeError>,
    stats: RunStats,
}

impl Sched {
    fn dequeue(&mut self, tid: ThreadId) {
        if let Some(pos) = self.queue.iter().position(|&t| t == tid) {
            self.queue.remove(pos);
        }
    }

    fn enqueue(&mut self, tid: ThreadId) {
        self.slots[tid.index()].state = SlotState::Queued;
        self.queue.push_back(tid);
    }
}

struct Pool<'a> {
    backend: &'a dyn Backend,
    store: &'a SharedStore,
    commits: &'a CommitLog,
    events: &'a EventLog,
    cfg: &'a RunConfig,
    start: Instant,
    sched: Mutex<Sched>,
    wake: Condvar,
}

impl Pool<'_> {
    fn work(&self, worker: u64) {
        let exec = Exec {
            backend: self.backend,
            store: self.store,
            commits: self.commits,
            events: self.events,
            seed: self.cfg.seed,
            delays: self.cfg.delays,
        };
        let mut perturb = self.cfg.perturb.map(|seed| Perturb::new(seed, worker));
        while let Some(mut record) = self.dispatch() {
            let result = exec.attempt(&mut record, perturb.as_mut());
            self.complete(record, result);
        }
    }

    fn dispatch(&self) -> Option<ThreadRecord> {
        let mut s = self.sched.lock();
        loop {
            if s.finished {
                return None;
            }
            match s.queue.front().copied() {
                Some(tid) if s.slots[tid.index()].state == SlotState::Queued => {
                    s.queue.rotate_left(1);
                    s.running += 1;
                    s.stats.dispatches.push(tid);
                    let slot = &mut s.slots[tid.index()];
                    slot.state = SlotState::Running;
                    return slot.record.take();
                }
                Some(_) => {}
                None if s.running == 0 => {
                    s.finished = true;
                    self.wake.notify_all();
                    return None;
                }
                None => {}
            }
            self.wake.wait(&mut s);
        }
    }

    fn complete(&self, record: ThreadRecord, result: Result<Attempt, RuntimeError>) {
        let mut s = self.sched.lock();
        s.running -= 1;
        let tid = record.tid;
        match result {
            Err(e) => {
                s.error.get_or_insert(e);
                s.finished = true;
            }
            Ok(Attempt::Committed { ordinal, body }) => {
                s.stats.spans.push(SegmentSpan {
                    tid,
                    seg_ordinal: record.seg_ordinal - 1,
                    ordinal,
                    start: body.0 - self.start,
                    end: body.1 - self.start,
                });
                for born in self.commits.drain_born() {
                    debug_assert_eq!(born.tid.index(), s.slots.len());
                    let tid = born.tid;
                    s.slots.push(Slot {
                        record: Some(ThreadRecord::from_born(born)),
                        state: SlotState::Queued,
                    });
                    s.queue.push_back(tid);
                }
                if record.status == ThreadStatus::Done {
                    s.slots[tid.index()].state = SlotState::Done;
                    s.dequeue(tid);
                } else {
                    s.slots[tid.index()].state = SlotState::Queued;
                }
                let now = self.commits.reserved();
                for i in 0..s.slots.len() {
                    if matches!(s.slots[i].state, SlotState::Parked(epoch) if epoch < now) {
                        s.enqueue(ThreadId(i as u32));
                    }
                }
            }
            Ok(Attempt::PollFailed { epoch }) => {
                s.stats.failed_polls += 1;
                if epoch < self.commits.reserved() {
                    s.slots[tid.index()].state = SlotState::Queued;
                } else {
                    s.slots[tid.index()].state = SlotState::Parked(epoch);
                    s.dequeue(tid);
                }
            }
            Ok(Attempt::Aborted { var }) => {
                s.stats.aborts.push(AbortRecord {
                    tid,
                    seg_ordinal: record.seg_ordinal,
                    var,
                });
                s.slots[tid.index()].state = SlotState::Queued;
            }
        }
        s.slots[tid.index()].record = Some(record);
        drop(s);
        self.wake.notify_all();
    }
}
