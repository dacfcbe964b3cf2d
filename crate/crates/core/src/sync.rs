//! Synchronization idioms built from `yield` and `yieldUntil`.
//!
//! These are fragments, not objects with hidden state: each one reads and
//! writes ordinary shared variables through the segment context, and the
//! waiting side is expressed by returning [`yield_until`] from a step and
//! evaluating the matching test in the program's `predicate`.
//!
//! A counting semaphore waits with `yield_until(sem > 0)` and then takes a
//! permit in the segment that follows, which runs with the predicate still
//! true:
//!
//! ```text
//! pc 0:  return yield_until(SEM_READY)        predicate: Semaphore::available
//! pc 1:  sem.take(ctx)?; ...critical work...; sem.signal(ctx)?
//! ```

use crate::error::AccessError;
use crate::program::{Ctx, PredicateHandle, SegmentOutcome};
use crate::store::{Value, VarId};

/// Ends a segment waiting for `pred`. The next segment runs atomically with
/// a state in which `pred` holds.
pub fn yield_until(pred: PredicateHandle) -> SegmentOutcome {
    SegmentOutcome::YieldUntil(pred)
}

/// A counting semaphore stored in one shared variable.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Semaphore {
    pub var: VarId,
}

impl Semaphore {
    pub fn new(var: VarId) -> Self {
        Semaphore { var }
    }

    /// The wait predicate: a permit is available.
    pub fn available(&self, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        Ok(ctx.read(self.var)? > 0)
    }

    /// Takes a permit. Call only in the segment that follows a satisfied
    /// wait on [`Semaphore::available`].
    pub fn take(&self, ctx: &mut Ctx<'_>) -> Result<Value, AccessError> {
        let v = ctx.read(self.var)?;
        if v <= 0 {
            return Err(AccessError::Program(format!(
                "semaphore {} taken with value {v}",
                self.var
            )));
        }
        ctx.write(self.var, v - 1)?;
        Ok(v - 1)
    }

    pub fn signal(&self, ctx: &mut Ctx<'_>) -> Result<Value, AccessError> {
        ctx.add(self.var, 1)
    }
}

/// Single-use barrier: each of `n` participants increments the counter
/// once, then waits until it reaches `n`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Barrier {
    pub counter: VarId,
    pub n: Value,
}

impl Barrier {
    pub fn new(counter: VarId, n: Value) -> Self {
        Barrier { counter, n }
    }

    pub fn arrive(&self, ctx: &mut Ctx<'_>) -> Result<(), AccessError> {
        ctx.add(self.counter, 1).map(|_| ())
    }

    /// The wait predicate: everyone has arrived.
    pub fn released(&self, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        Ok(ctx.read(self.counter)? == self.n)
    }
}

/// Reusable sense-reversing barrier over a counter and a shared sense flag,
/// both initially 0. Each participant keeps its own sense in a local slot,
/// also initially 0.
///
/// The last arrival of a round resets the counter and flips the shared
/// sense; everyone else waits for the flip. Because waiting is on the sense
/// rather than the count, a fast thread entering the next round cannot
/// confuse a slow one still leaving the previous round.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SenseBarrier {
    pub count: VarId,
    pub sense: VarId,
    pub n: Value,
}

impl SenseBarrier {
    pub fn new(count: VarId, sense: VarId, n: Value) -> Self {
        SenseBarrier { count, sense, n }
    }

    /// Arrives for the next round, flipping `local_sense`. Returns true when
    /// this thread was last and has already released the others; otherwise
    /// the caller should end the segment with `yield_until` on
    /// [`SenseBarrier::passed`].
    pub fn arrive(&self, local_sense: &mut Value, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        *local_sense = 1 - *local_sense;
        let arrived = ctx.read(self.count)? + 1;
        if arrived == self.n {
            ctx.write(self.count, 0)?;
            ctx.write(self.sense, *local_sense)?;
            Ok(true)
        } else {
            ctx.write(self.count, arrived)?;
            Ok(false)
        }
    }

    /// The wait predicate for a participant whose sense is `local_sense`.
    pub fn passed(&self, local_sense: Value, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        Ok(ctx.read(self.sense)? == local_sense)
    }
}
