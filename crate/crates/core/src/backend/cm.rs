use std::sync::atomic::{AtomicBool, Ordering};

use crate::backend::{Backend, Segment, SegmentEnv};
use crate::commit::CommitResult;
use crate::error::{AccessError, RuntimeError};
use crate::program::{AccessSet, Publication, SharedAccess};
use crate::store::{Value, VarId};

/// Plain cooperative multithreading: one executor, direct access.
#[derive(Default)]
pub struct Cm {
    busy: AtomicBool,
}

impl Cm {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Backend for Cm {
    fn name(&self) -> &'static str {
        "cm"
    }

    fn single_executor(&self) -> bool {
        true
    }

    fn begin<'a>(
        &'a self,
        env: SegmentEnv<'a>,
        _declared: Option<&AccessSet>,
    ) -> Result<Box<dyn Segment + 'a>, RuntimeError> {
        if self.busy.swap(true, Ordering::AcqRel) {
            return Err(RuntimeError::ConcurrentUse);
        }
        Ok(Box::new(CmSegment {
            backend: self,
            env,
            written: Vec::new(),
        }))
    }
}

struct CmSegment<'a> {
    backend: &'a Cm,
    env: SegmentEnv<'a>,
    written: Vec<VarId>,
}

impl Drop for CmSegment<'_> {
    fn drop(&mut self) {
        self.backend.busy.store(false, Ordering::Release);
    }
}

impl SharedAccess for CmSegment<'_> {
    fn read(&mut self, var: VarId) -> Result<Value, AccessError> {
        if !self.env.store.contains(var) {
            return Err(AccessError::NoSuchVar { var });
        }
        Ok(self.env.store.value(var))
    }

    fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError> {
        if !self.env.store.contains(var) {
            return Err(AccessError::NoSuchVar { var });
        }
        self.env.store.store(var, value);
        if !self.written.contains(&var) {
            self.written.push(var);
        }
        Ok(())
    }

    fn release_var(&mut self, _var: VarId) -> Result<(), AccessError> {
        Ok(())
    }

    fn release_all(&mut self) -> Result<(), AccessError> {
        Ok(())
    }
}

impl Segment for CmSegment<'_> {
    fn end(self: Box<Self>, publication: Publication) -> CommitResult {
        let ordinal = self.env.commits.reserve(self.env.tid, self.env.seg_ordinal);
        for &var in &self.written {
            self.env.store.bump_version(var);
        }
        self.env.commits.publish(ordinal, publication);
        CommitResult::Committed(ordinal)
    }

    fn cancel(self: Box<Self>) {}
}
