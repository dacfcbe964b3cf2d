//! Global commit order: dense ordinals, the observable log and the trace.
//!
//! Lock-based backends reserve their ordinal while still holding every lock
//! (their serialization point) and publish output later; transactional
//! backends validate, write back and take the ordinal in one critical step.
//! Publications are flushed strictly in ordinal order, so the log and the
//! trace always agree with the serial order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::program::{Locals, Program, Publication, ThreadId};
use crate::store::VarId;
use crate::trace::TraceRecord;

/// Backend verdict on a segment.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CommitResult {
    Committed(u64),
    Aborted(VarId),
}

/// A thread spawned by a committed segment, with its assigned id.
pub struct Born {
    pub tid: ThreadId,
    pub program: Arc<dyn Program>,
    pub locals: Locals,
}

struct Pending {
    tid: ThreadId,
    seg_ordinal: u64,
    publication: Option<Publication>,
}

struct Inner {
    next_ordinal: u64,
    pending: BTreeMap<u64, Pending>,
    records: Vec<TraceRecord>,
    log: Vec<String>,
    born: Vec<Born>,
    next_tid: u32,
}

pub struct CommitLog {
    inner: Mutex<Inner>,
    reserved: AtomicU64,
}

impl CommitLog {
    pub fn new(initial_threads: usize) -> Self {
        CommitLog {
            inner: Mutex::new(Inner {
                next_ordinal: 0,
                pending: BTreeMap::new(),
                records: Vec::new(),
                log: Vec::new(),
                born: Vec::new(),
                next_tid: initial_threads as u32,
            }),
            reserved: AtomicU64::new(0),
        }
    }

    /// Number of ordinals handed out so far.
    pub fn reserved(&self) -> u64 {
        self.reserved.load(Ordering::SeqCst)
    }

    fn reserve_locked(&self, inner: &mut Inner, tid: ThreadId, seg_ordinal: u64) -> u64 {
        let ordinal = inner.next_ordinal;
        inner.next_ordinal += 1;
        inner.pending.insert(
            ordinal,
            Pending {
                tid,
                seg_ordinal,
                publication: None,
            },
        );
        self.reserved.store(inner.next_ordinal, Ordering::SeqCst);
        ordinal
    }

    /// Takes the next ordinal for a segment whose effects are already in
    /// place; its publication must follow via [`CommitLog::publish`].
    pub fn reserve(&self, tid: ThreadId, seg_ordinal: u64) -> u64 {
        let mut inner = self.inner.lock();
        self.reserve_locked(&mut inner, tid, seg_ordinal)
    }

    pub fn publish(&self, ordinal: u64, publication: Publication) {
        let mut inner = self.inner.lock();
        let slot = inner
            .pending
            .get_mut(&ordinal)
            .expect("publish for an ordinal that was never reserved");
        slot.publication = Some(publication);
        Self::flush(&mut inner);
    }

    /// Runs `critical` (validation plus write-back) and, if it succeeds,
    /// takes an ordinal and publishes, all without interleaving another
    /// commit.
    pub fn commit_with(
        &self,
        tid: ThreadId,
        seg_ordinal: u64,
        publication: Publication,
        critical: impl FnOnce() -> Result<(), VarId>,
    ) -> CommitResult {
        let mut inner = self.inner.lock();
        if let Err(var) = critical() {
            return CommitResult::Aborted(var);
        }
        let ordinal = self.reserve_locked(&mut inner, tid, seg_ordinal);
        inner.pending.get_mut(&ordinal).unwrap().publication = Some(publication);
        Self::flush(&mut inner);
        CommitResult::Committed(ordinal)
    }

    fn flush(inner: &mut Inner) {
        loop {
            let ready = inner
                .pending
                .first_key_value()
                .is_some_and(|(&k, p)| k == inner.records.len() as u64 && p.publication.is_some());
            if !ready {
                break;
            }
            let (ordinal, pending) = inner.pending.pop_first().unwrap();
            let publication = pending.publication.unwrap();
            inner.records.push(TraceRecord {
                ordinal,
                tid: pending.tid,
                seg_ordinal: pending.seg_ordinal,
                label: publication.label,
            });
            inner.log.extend(publication.output);
            for spawn in publication.spawns {
                let tid = ThreadId(inner.next_tid);
                inner.next_tid += 1;
                inner.born.push(Born {
                    tid,
                    program: spawn.program,
                    locals: spawn.locals,
                });
            }
        }
    }

    pub fn drain_born(&self) -> Vec<Born> {
        std::mem::take(&mut self.inner.lock().born)
    }

    pub fn log_len(&self) -> usize {
        self.inner.lock().log.len()
    }

    /// Trace records and observable log, in commit order.
    pub fn finish(self) -> (Vec<TraceRecord>, Vec<String>) {
        let inner = self.inner.into_inner();
        assert!(inner.pending.is_empty(), "run ended with unpublished commits");
        (inner.records, inner.log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output(line: &str) -> Publication {
        Publication {
            output: vec![line.to_string()],
            ..Default::default()
        }
    }

    #[test]
    fn first_commit_is_ordinal_zero_and_ordinals_are_dense() {
        let log = CommitLog::new(1);
        for i in 0..5 {
            assert_eq!(log.reserve(ThreadId(0), i), i);
            log.publish(i, Publication::default());
        }
        let (records, _) = log.finish();
        let ordinals: Vec<u64> = records.iter().map(|r| r.ordinal).collect();
        assert_eq!(ordinals, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn out_of_order_publication_is_flushed_in_ordinal_order() {
        let log = CommitLog::new(2);
        let a = log.reserve(ThreadId(0), 0);
        let b = log.reserve(ThreadId(1), 0);
        log.publish(b, output("b"));
        assert_eq!(log.log_len(), 0);
        log.publish(a, output("a"));
        let (records, lines) = log.finish();
        assert_eq!(lines, vec!["a", "b"]);
        assert_eq!(records[0].tid, ThreadId(0));
    }

    #[test]
    fn failed_critical_step_takes_no_ordinal() {
        let log = CommitLog::new(1);
        let r = log.commit_with(ThreadId(0), 0, output("x"), || Err(VarId(3)));
        assert_eq!(r, CommitResult::Aborted(VarId(3)));
        assert_eq!(log.reserved(), 0);
        let r = log.commit_with(ThreadId(0), 0, output("y"), || Ok(()));
        assert_eq!(r, CommitResult::Committed(0));
        assert_eq!(log.finish().1, vec!["y"]);
    }

    #[test]
    fn concurrent_commits_are_dense() {
        let log = CommitLog::new(2);
        std::thread::scope(|s| {
            for t in 0..2u32 {
                let log = &log;
                s.spawn(move || {
                    for i in 0..500 {
                        log.commit_with(ThreadId(t), i, Publication::default(), || Ok(()));
                    }
                });
            }
        });
        let (records, _) = log.finish();
        assert_eq!(records.len(), 1000);
        assert!(records.iter().enumerate().all(|(i, r)| r.ordinal == i as u64));
    }
}
