//! Concurrency-control backends behind one segment lifecycle:
//! `begin` → reads/writes/release assertions → `end` (commit) or `cancel`.
//!
//! Every backend preserves CM serializability: each committed segment gets a
//! dense ordinal such that running the segments serially in ordinal order
//! reproduces the parallel run.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use crate::commit::{CommitLog, CommitResult};
use crate::error::RuntimeError;
use crate::program::{AccessSet, Publication, SharedAccess, ThreadId};
use crate::store::{SharedStore, VarId};

mod cm;
mod global;
pub mod racy;
mod stm;
mod twopl;

pub use cm::Cm;
pub use global::Global;
pub use stm::Stm;
pub use twopl::TwoPhase;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackendKind {
    /// Serial cooperative baseline, one executor.
    Cm,
    /// One global lock held for the whole segment.
    Global,
    /// Global lock taken on first shared access, released early on request.
    GlobalLazy,
    /// Per-variable locks from a declared access set, two-phase.
    TwoPhase,
    /// Transaction per segment with commit-time validation.
    Stm,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::Cm,
        BackendKind::Global,
        BackendKind::GlobalLazy,
        BackendKind::TwoPhase,
        BackendKind::Stm,
    ];

    /// The backends that can run with more than one worker.
    pub const PARALLEL: [BackendKind; 4] = [
        BackendKind::Global,
        BackendKind::GlobalLazy,
        BackendKind::TwoPhase,
        BackendKind::Stm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Cm => "cm",
            BackendKind::Global => "global",
            BackendKind::GlobalLazy => "global-lazy",
            BackendKind::TwoPhase => "2pl",
            BackendKind::Stm => "stm",
        }
    }

    pub fn instantiate(self, vars: usize) -> Box<dyn Backend> {
        match self {
            BackendKind::Cm => Box::new(Cm::new()),
            BackendKind::Global => Box::new(Global::eager()),
            BackendKind::GlobalLazy => Box::new(Global::lazy()),
            BackendKind::TwoPhase => Box::new(TwoPhase::new(vars)),
            BackendKind::Stm => Box::new(Stm::new(vars)),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown backend `{0}` (expected cm, global, global-lazy, 2pl or stm)")]
pub struct UnknownBackend(pub String);

impl FromStr for BackendKind {
    type Err = UnknownBackend;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownBackend(s.to_string()))
    }
}

/// What a backend needs to open a segment.
#[derive(Copy, Clone)]
pub struct SegmentEnv<'a> {
    pub tid: ThreadId,
    pub seg_ordinal: u64,
    /// Unique id of this segment attempt, for the event log.
    pub attempt: u64,
    pub store: &'a SharedStore,
    pub commits: &'a CommitLog,
    pub events: &'a EventLog,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Backends that must never see two executors at once.
    fn single_executor(&self) -> bool {
        false
    }

    fn begin<'a>(
        &'a self,
        env: SegmentEnv<'a>,
        declared: Option<&AccessSet>,
    ) -> Result<Box<dyn Segment + 'a>, RuntimeError>;
}

/// An open segment.
pub trait Segment: SharedAccess {
    /// Commits: takes the ordinal, publishes `publication`, releases
    /// everything. A transactional backend may abort instead.
    fn end(self: Box<Self>, publication: Publication) -> CommitResult;

    /// Abandons a segment that performed no writes (a failed predicate poll,
    /// or a program error that ends the run).
    fn cancel(self: Box<Self>);

    /// True when the segment can no longer commit, so an error it raised
    /// may come from an inconsistent view rather than the program.
    fn doomed(&self) -> bool {
        false
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum LockTarget {
    Global,
    Var(VarId),
    /// Per-variable commit lock of the STM backend.
    Commit(VarId),
}

impl LockTarget {
    pub fn var(self) -> Option<VarId> {
        match self {
            LockTarget::Global => None,
            LockTarget::Var(v) | LockTarget::Commit(v) => Some(v),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum LockAction {
    Acquire,
    Release,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct LockEvent {
    /// Position in the global event order.
    pub seq: u64,
    pub attempt: u64,
    pub tid: ThreadId,
    pub action: LockAction,
    pub target: LockTarget,
}

/// Optional log of lock acquisitions and releases across all segments.
pub struct EventLog {
    enabled: bool,
    events: Mutex<Vec<LockEvent>>,
    attempts: AtomicU64,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        EventLog {
            enabled,
            events: Mutex::new(Vec::new()),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn next_attempt(&self) -> u64 {
        self.attempts.fetch_add(1, Ordering::Relaxed)
    }

    /// Records an event. Call while the lock state change is still
    /// exclusive to this segment so the log order matches reality.
    pub fn record(&self, env: &SegmentEnv<'_>, action: LockAction, target: LockTarget) {
        if !self.enabled {
            return;
        }
        let mut events = self.events.lock();
        let seq = events.len() as u64;
        events.push(LockEvent {
            seq,
            attempt: env.attempt,
            tid: env.tid,
            action,
            target,
        });
    }

    pub fn into_events(self) -> Vec<LockEvent> {
        self.events.into_inner()
    }
}

/// Checks the two-phase and lock-order rules over an event log.
/// Returns `(acquire_after_release, descending_acquisitions)` counts.
pub fn audit_lock_events(events: &[LockEvent]) -> (usize, usize) {
    use std::collections::HashMap;

    #[derive(Default)]
    struct PerAttempt {
        released: bool,
        last_var: Option<VarId>,
    }
    let mut seen: HashMap<u64, PerAttempt> = HashMap::new();
    let mut after_release = 0;
    let mut descending = 0;
    for ev in events {
        let st = seen.entry(ev.attempt).or_default();
        match ev.action {
            LockAction::Release => st.released = true,
            LockAction::Acquire => {
                if st.released {
                    after_release += 1;
                }
                if let Some(var) = ev.target.var() {
                    if st.last_var.is_some_and(|last| var <= last) {
                        descending += 1;
                    }
                    st.last_var = Some(var);
                }
            }
        }
    }
    (after_release, descending)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_names_round_trip() {
        for kind in BackendKind::ALL {
            assert_eq!(kind.as_str().parse::<BackendKind>(), Ok(kind));
        }
        assert!("tl2".parse::<BackendKind>().is_err());
    }

    #[test]
    fn audit_flags_both_violations() {
        let ev = |seq, attempt, action, var| LockEvent {
            seq,
            attempt,
            tid: ThreadId(0),
            action,
            target: LockTarget::Var(VarId(var)),
        };
        let good = [
            ev(0, 0, LockAction::Acquire, 1),
            ev(1, 0, LockAction::Acquire, 3),
            ev(2, 1, LockAction::Acquire, 0),
            ev(3, 0, LockAction::Release, 1),
            ev(4, 0, LockAction::Release, 3),
        ];
        assert_eq!(audit_lock_events(&good), (0, 0));
        let bad = [
            ev(0, 0, LockAction::Acquire, 3),
            ev(1, 0, LockAction::Acquire, 1),
            ev(2, 0, LockAction::Release, 1),
            ev(3, 0, LockAction::Acquire, 4),
        ];
        assert_eq!(audit_lock_events(&bad), (1, 1));
    }
}
