//! A deliberately broken backend for mutation testing: segments access the
//! store directly with no concurrency control, so parallel runs can produce
//! outcomes no cooperative schedule allows. Never use it for real runs.

use crate::backend::{Backend, Segment, SegmentEnv};
use crate::commit::CommitResult;
use crate::error::{AccessError, RuntimeError};
use crate::program::{AccessSet, Publication, SharedAccess};
use crate::store::{Value, VarId};

#[derive(Default)]
pub struct Racy;

impl Backend for Racy {
    fn name(&self) -> &'static str {
        "racy"
    }

    fn begin<'a>(
        &'a self,
        env: SegmentEnv<'a>,
        _declared: Option<&AccessSet>,
    ) -> Result<Box<dyn Segment + 'a>, RuntimeError> {
        Ok(Box::new(RacySegment { env }))
    }
}

struct RacySegment<'a> {
    env: SegmentEnv<'a>,
}

impl SharedAccess for RacySegment<'_> {
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
        Ok(())
    }

    fn release_var(&mut self, _var: VarId) -> Result<(), AccessError> {
        Ok(())
    }

    fn release_all(&mut self) -> Result<(), AccessError> {
        Ok(())
    }
}

impl Segment for RacySegment<'_> {
    fn end(self: Box<Self>, publication: Publication) -> CommitResult {
        let ordinal = self.env.commits.reserve(self.env.tid, self.env.seg_ordinal);
        self.env.commits.publish(ordinal, publication);
        CommitResult::Committed(ordinal)
    }

    fn cancel(self: Box<Self>) {}
}
