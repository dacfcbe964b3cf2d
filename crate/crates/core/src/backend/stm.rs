use std::collections::BTreeMap;

use crate::backend::{Backend, LockAction, LockTarget, Segment, SegmentEnv};
use crate::commit::CommitResult;
use crate::error::{AccessError, RuntimeError};
use crate::program::{AccessSet, Publication, SharedAccess};
use crate::store::{OwnerLock, Value, VarId};

/// Write-back software transactional memory with per-variable versions.
///
/// A segment buffers its writes and logs `(var, version)` for every read
/// that is not satisfied from its own buffer. At commit it takes the commit
/// locks of its write set in ascending order, then validates the read set
/// and writes back inside the commit log's critical step, so validation and
/// ordinal assignment are atomic with respect to other commits.
pub struct Stm {
    commit_locks: Vec<OwnerLock>,
}

impl Stm {
    pub fn new(vars: usize) -> Self {
        Stm {
            commit_locks: (0..vars).map(|_| OwnerLock::new()).collect(),
        }
    }
}

impl Backend for Stm {
    fn name(&self) -> &'static str {
        "stm"
    }

    fn begin<'a>(
        &'a self,
        env: SegmentEnv<'a>,
        _declared: Option<&AccessSet>,
    ) -> Result<Box<dyn Segment + 'a>, RuntimeError> {
        Ok(Box::new(StmSegment {
            backend: self,
            env,
            reads: Vec::new(),
            writes: BTreeMap::new(),
        }))
    }
}

struct StmSegment<'a> {
    backend: &'a Stm,
    env: SegmentEnv<'a>,
    reads: Vec<(VarId, u64)>,
    writes: BTreeMap<VarId, Value>,
}

impl SharedAccess for StmSegment<'_> {
    fn read(&mut self, var: VarId) -> Result<Value, AccessError> {
        if let Some(&v) = self.writes.get(&var) {
            return Ok(v);
        }
        if !self.env.store.contains(var) {
            return Err(AccessError::NoSuchVar { var });
        }
        let (value, version) = self.env.store.load(var);
        self.reads.push((var, version));
        Ok(value)
    }

    fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError> {
        if !self.env.store.contains(var) {
            return Err(AccessError::NoSuchVar { var });
        }
        self.writes.insert(var, value);
        Ok(())
    }

    fn release_var(&mut self, _var: VarId) -> Result<(), AccessError> {
        Ok(())
    }

    fn release_all(&mut self) -> Result<(), AccessError> {
        Ok(())
    }
}

impl Segment for StmSegment<'_> {
    fn end(self: Box<Self>, publication: Publication) -> CommitResult {
        let StmSegment {
            backend,
            env,
            reads,
            writes,
        } = *self;
        let tid = env.tid;
        for &var in writes.keys() {
            backend.commit_locks[var.index()].acquire(tid);
            env.events.record(&env, LockAction::Acquire, LockTarget::Commit(var));
        }
        let store = env.store;
        let result = env.commits.commit_with(tid, env.seg_ordinal, publication, || {
            for &(var, seen) in &reads {
                if store.version(var) != seen || backend.commit_locks[var.index()].held_by_other(tid) {
                    return Err(var);
                }
            }
            for (&var, &value) in &writes {
                store.publish(var, value);
            }
            Ok(())
        });
        for &var in writes.keys() {
            env.events.record(&env, LockAction::Release, LockTarget::Commit(var));
            backend.commit_locks[var.index()].release(tid);
        }
        result
    }

    fn cancel(self: Box<Self>) {}

    fn doomed(&self) -> bool {
        self.reads
            .iter()
            .any(|&(var, seen)| self.env.store.version(var) != seen)
    }
}
