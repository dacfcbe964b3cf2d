use crate::backend::{Backend, LockAction, LockTarget, Segment, SegmentEnv};
use crate::commit::CommitResult;
use crate::error::{AccessError, RuntimeError};
use crate::program::{AccessSet, Publication, SharedAccess};
use crate::store::{OwnerLock, Value, VarId};

/// Per-variable locks. The whole declared access set is acquired at segment
/// start in ascending id order, so every acquisition precedes every release
/// and no cycle of waiters can form.
pub struct TwoPhase {
    locks: Vec<OwnerLock>,
}

impl TwoPhase {
    pub fn new(vars: usize) -> Self {
        TwoPhase {
            locks: (0..vars).map(|_| OwnerLock::new()).collect(),
        }
    }
}

impl Backend for TwoPhase {
    fn name(&self) -> &'static str {
        "2pl"
    }

    fn begin<'a>(
        &'a self,
        env: SegmentEnv<'a>,
        declared: Option<&AccessSet>,
    ) -> Result<Box<dyn Segment + 'a>, RuntimeError> {
        let declared = declared.ok_or(RuntimeError::MissingAccessSet { tid: env.tid })?.clone();
        if let Some(var) = declared.iter().find(|v| v.index() >= self.locks.len()) {
            return Err(RuntimeError::Access {
                tid: env.tid,
                seg_ordinal: env.seg_ordinal,
                source: AccessError::NoSuchVar { var },
            });
        }
        let mut held = Vec::with_capacity(declared.len());
        for var in declared.iter() {
            self.locks[var.index()].acquire(env.tid);
            env.events.record(&env, LockAction::Acquire, LockTarget::Var(var));
            held.push(var);
        }
        Ok(Box::new(TwoPhaseSegment {
            backend: self,
            env,
            declared,
            held,
            ordinal: None,
            written: Vec::new(),
        }))
    }
}

struct TwoPhaseSegment<'a> {
    backend: &'a TwoPhase,
    env: SegmentEnv<'a>,
    declared: AccessSet,
    /// Ascending; shrinks as locks are released.
    held: Vec<VarId>,
    ordinal: Option<u64>,
    /// Written vars whose version has not been bumped yet.
    written: Vec<VarId>,
}

impl TwoPhaseSegment<'_> {
    fn check(&self, var: VarId) -> Result<(), AccessError> {
        if !self.declared.contains(var) {
            return Err(AccessError::UndeclaredAccess { var });
        }
        if !self.held.contains(&var) {
            return Err(AccessError::AccessAfterRelease { var });
        }
        Ok(())
    }

    fn stamp(&mut self) -> u64 {
        *self
            .ordinal
            .get_or_insert_with(|| self.env.commits.reserve(self.env.tid, self.env.seg_ordinal))
    }

    fn unlock(&mut self, var: VarId) {
        if let Some(pos) = self.written.iter().position(|&w| w == var) {
            self.env.store.bump_version(var);
            self.written.swap_remove(pos);
        }
        self.env
            .events
            .record(&self.env, LockAction::Release, LockTarget::Var(var));
        self.backend.locks[var.index()].release(self.env.tid);
        self.held.retain(|&h| h != var);
    }

    fn unlock_all(&mut self) {
        while let Some(&var) = self.held.first() {
            self.unlock(var);
        }
    }
}

impl SharedAccess for TwoPhaseSegment<'_> {
    fn read(&mut self, var: VarId) -> Result<Value, AccessError> {
        self.check(var)?;
        Ok(self.env.store.value(var))
    }

    fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError> {
        self.check(var)?;
        self.env.store.store(var, value);
        if !self.written.contains(&var) {
            self.written.push(var);
        }
        Ok(())
    }

    fn release_var(&mut self, var: VarId) -> Result<(), AccessError> {
        if !self.declared.contains(var) {
            return Err(AccessError::UndeclaredAccess { var });
        }
        if self.held.contains(&var) {
            // Every declared lock was taken at begin, so releasing now keeps
            // the segment two-phase.
            self.stamp();
            self.unlock(var);
        }
        Ok(())
    }

    fn release_all(&mut self) -> Result<(), AccessError> {
        self.stamp();
        self.unlock_all();
        Ok(())
    }
}

impl Segment for TwoPhaseSegment<'_> {
    fn end(mut self: Box<Self>, publication: Publication) -> CommitResult {
        let ordinal = self.stamp();
        self.unlock_all();
        self.env.commits.publish(ordinal, publication);
        CommitResult::Committed(ordinal)
    }

    fn cancel(mut self: Box<Self>) {
        self.unlock_all();
        if let Some(ordinal) = self.ordinal {
            self.env.commits.publish(ordinal, Publication::default());
        }
    }
}
