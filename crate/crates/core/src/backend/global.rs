use crate::backend::{Backend, LockAction, LockTarget, Segment, SegmentEnv};
use crate::commit::CommitResult;
use crate::error::{AccessError, RuntimeError};
use crate::program::{AccessSet, Publication, SharedAccess};
use crate::store::{OwnerLock, Value, VarId};

/// A single global lock. The eager flavor takes it at segment start; the
/// lazy flavor waits for the first shared access. Both release it early when
/// the program asserts it is done with shared state.
pub struct Global {
    lock: OwnerLock,
    lazy: bool,
}

impl Global {
    pub fn eager() -> Self {
        Global {
            lock: OwnerLock::new(),
            lazy: false,
        }
    }

    pub fn lazy() -> Self {
        Global {
            lock: OwnerLock::new(),
            lazy: true,
        }
    }
}

impl Backend for Global {
    fn name(&self) -> &'static str {
        if self.lazy {
            "global-lazy"
        } else {
            "global"
        }
    }

    fn begin<'a>(
        &'a self,
        env: SegmentEnv<'a>,
        _declared: Option<&AccessSet>,
    ) -> Result<Box<dyn Segment + 'a>, RuntimeError> {
        let mut seg = GlobalSegment {
            backend: self,
            env,
            held: false,
            released: false,
            ordinal: None,
            written: Vec::new(),
        };
        if !self.lazy {
            seg.acquire();
        }
        Ok(Box::new(seg))
    }
}

struct GlobalSegment<'a> {
    backend: &'a Global,
    env: SegmentEnv<'a>,
    held: bool,
    released: bool,
    ordinal: Option<u64>,
    written: Vec<VarId>,
}

impl GlobalSegment<'_> {
    fn acquire(&mut self) {
        self.backend.lock.acquire(self.env.tid);
        self.env
            .events
            .record(&self.env, LockAction::Acquire, LockTarget::Global);
        self.held = true;
    }

    fn touch(&mut self, var: VarId) -> Result<(), AccessError> {
        if self.released {
            return Err(AccessError::AccessAfterRelease { var });
        }
        if !self.env.store.contains(var) {
            return Err(AccessError::NoSuchVar { var });
        }
        if !self.held {
            self.acquire();
        }
        Ok(())
    }

    /// Serialization point: all locks held, none released yet.
    fn stamp(&mut self) -> u64 {
        if let Some(ordinal) = self.ordinal {
            return ordinal;
        }
        let ordinal = self.env.commits.reserve(self.env.tid, self.env.seg_ordinal);
        for &var in &self.written {
            self.env.store.bump_version(var);
        }
        self.ordinal = Some(ordinal);
        ordinal
    }

    fn unlock(&mut self) {
        if self.held {
            self.env
                .events
                .record(&self.env, LockAction::Release, LockTarget::Global);
            self.backend.lock.release(self.env.tid);
            self.held = false;
        }
    }
}

impl SharedAccess for GlobalSegment<'_> {
    fn read(&mut self, var: VarId) -> Result<Value, AccessError> {
        self.touch(var)?;
        Ok(self.env.store.value(var))
    }

    fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError> {
        self.touch(var)?;
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
        if !self.released {
            self.stamp();
            self.unlock();
            self.released = true;
        }
        Ok(())
    }
}

impl Segment for GlobalSegment<'_> {
    fn end(mut self: Box<Self>, publication: Publication) -> CommitResult {
        let ordinal = self.stamp();
        self.unlock();
        self.env.commits.publish(ordinal, publication);
        CommitResult::Committed(ordinal)
    }

    fn cancel(mut self: Box<Self>) {
        self.unlock();
        if let Some(ordinal) = self.ordinal {
            self.env.commits.publish(ordinal, Publication::default());
        }
    }
}
