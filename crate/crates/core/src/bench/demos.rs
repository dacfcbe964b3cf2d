//! Small programs exercising the synchronization fragments, plus the
//! crossed-flags deadlock.

use std::sync::Arc;

use super::{require, BenchError, Params, Workload};
use crate::error::AccessError;
use crate::program::{AccessSet, Ctx, Locals, PredicateHandle, Program, SegmentOutcome};
use crate::store::VarId;
use crate::sync::{yield_until, Barrier, Semaphore, SenseBarrier};

const WAIT: PredicateHandle = PredicateHandle(0);

fn all(vars: &[VarId]) -> Option<AccessSet> {
    Some(vars.iter().copied().collect())
}

/// Waits for a permit, takes it, reports, finishes. Locals: `[pc]`.
struct Waiter {
    sem: Semaphore,
}

impl Program for Waiter {
    fn name(&self) -> &str {
        "sem-waiter"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        if l[0] == 0 {
            l[0] = 1;
            ctx.label("yieldUntil (sem > 0);");
            return Ok(yield_until(WAIT));
        }
        let left = self.sem.take(ctx)?;
        ctx.emit(format!("{} acquired, {left} left", ctx.tid()))?;
        Ok(SegmentOutcome::Done)
    }

    fn predicate(&self, _: PredicateHandle, _: &Locals, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        self.sem.available(ctx)
    }

    fn access_set(&self, _: &Locals) -> Option<AccessSet> {
        all(&[self.sem.var])
    }
}

pub(super) fn semaphore(p: &Params, n: i64, permits: i64) -> Result<Workload, BenchError> {
    require("n", n, 1)?;
    require("permits", permits, 0)?;
    let mut w = Workload::new("semaphore", p, vec![permits]);
    let program: Arc<dyn Program> = Arc::new(Waiter {
        sem: Semaphore::new(VarId(0)),
    });
    for _ in 0..n {
        w.thread(&program, vec![0]);
    }
    w.monitor(|s| (s[0] < 0).then(|| format!("semaphore at {}", s[0])));
    Ok(w)
}

/// Critical section guarded by a binary semaphore, with a yield between
/// reading and writing the counter. Locals: `[pc, iter, tmp]`.
struct Guarded {
    sem: Semaphore,
    counter: VarId,
    iters: i64,
}

impl Program for Guarded {
    fn name(&self) -> &str {
        "sem-guarded"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        match l[0] {
            0 => {
                if l[1] == self.iters {
                    return Ok(SegmentOutcome::Done);
                }
                l[0] = 1;
                ctx.label("semWait (sem);");
                Ok(yield_until(WAIT))
            }
            1 => {
                self.sem.take(ctx)?;
                l[2] = ctx.read(self.counter)?;
                l[0] = 2;
                ctx.label("yield;");
                Ok(SegmentOutcome::Yield)
            }
            _ => {
                ctx.write(self.counter, l[2] + 1)?;
                self.sem.signal(ctx)?;
                l[1] += 1;
                if l[1] == self.iters {
                    return Ok(SegmentOutcome::Done);
                }
                l[0] = 1;
                ctx.label("semWait (sem);");
                Ok(yield_until(WAIT))
            }
        }
    }

    fn predicate(&self, _: PredicateHandle, _: &Locals, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        self.sem.available(ctx)
    }

    fn access_set(&self, _: &Locals) -> Option<AccessSet> {
        all(&[self.sem.var, self.counter])
    }
}

pub(super) fn sem_mutex(p: &Params, n: i64, iters: i64) -> Result<Workload, BenchError> {
    require("n", n, 1)?;
    require("iters", iters, 0)?;
    let mut w = Workload::new("sem-mutex", p, vec![1, 0]);
    let program: Arc<dyn Program> = Arc::new(Guarded {
        sem: Semaphore::new(VarId(0)),
        counter: VarId(1),
        iters,
    });
    for _ in 0..n {
        w.thread(&program, vec![0, 0, 0]);
    }
    w.monitor(|s| match s[0] {
        0 | 1 => None,
        v => Some(format!("binary semaphore at {v}")),
    });
    Ok(w)
}

/// Arrives at a single-use barrier, then reports. Locals: `[pc]`.
struct Arrive {
    barrier: Barrier,
}

impl Program for Arrive {
    fn name(&self) -> &str {
        "barrier-arrive"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        if l[0] == 0 {
            self.barrier.arrive(ctx)?;
            l[0] = 1;
            ctx.label("yieldUntil (count == NUM_THREADS);");
            return Ok(yield_until(WAIT));
        }
        ctx.emit(format!("{} passed", ctx.tid()))?;
        Ok(SegmentOutcome::Done)
    }

    fn predicate(&self, _: PredicateHandle, _: &Locals, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        self.barrier.released(ctx)
    }

    fn access_set(&self, _: &Locals) -> Option<AccessSet> {
        all(&[self.barrier.counter])
    }
}

pub(super) fn barrier(p: &Params, n: i64, threads: i64) -> Result<Workload, BenchError> {
    require("n", n, 1)?;
    require("threads", threads, 1)?;
    let mut w = Workload::new("barrier", p, vec![0]);
    let program: Arc<dyn Program> = Arc::new(Arrive {
        barrier: Barrier::new(VarId(0), n),
    });
    for _ in 0..threads {
        w.thread(&program, vec![0]);
    }
    w.monitor(move |s| (s[0] > threads).then(|| format!("barrier counted {} arrivals", s[0])));
    Ok(w)
}

/// Rounds through a sense-reversing barrier. Locals: `[pc, sense, round]`.
struct Rounds {
    barrier: SenseBarrier,
    rounds: i64,
}

impl Program for Rounds {
    fn name(&self) -> &str {
        "sense-rounds"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        if l[0] == 0 {
            if l[2] == self.rounds {
                return Ok(SegmentOutcome::Done);
            }
            l[0] = 1;
            let mut sense = l[1];
            let last = self.barrier.arrive(&mut sense, ctx)?;
            l[1] = sense;
            if last {
                ctx.label("yield;");
                return Ok(SegmentOutcome::Yield);
            }
            ctx.label("yieldUntil (sense == localSense);");
            return Ok(yield_until(WAIT));
        }
        ctx.emit(format!("{} round {}", ctx.tid(), l[2]))?;
        l[0] = 0;
        l[2] += 1;
        if l[2] == self.rounds {
            return Ok(SegmentOutcome::Done);
        }
        ctx.label("yield;");
        Ok(SegmentOutcome::Yield)
    }

    fn predicate(&self, _: PredicateHandle, l: &Locals, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        self.barrier.passed(l[1], ctx)
    }

    fn access_set(&self, _: &Locals) -> Option<AccessSet> {
        all(&[self.barrier.count, self.barrier.sense])
    }
}

pub(super) fn sense_barrier(p: &Params, n: i64, rounds: i64) -> Result<Workload, BenchError> {
    require("n", n, 1)?;
    require("iters", rounds, 0)?;
    let mut w = Workload::new("sense-barrier", p, vec![0, 0]);
    let program: Arc<dyn Program> = Arc::new(Rounds {
        barrier: SenseBarrier::new(VarId(0), VarId(1), n),
        rounds,
    });
    for _ in 0..n {
        w.thread(&program, vec![0, 0, 0]);
    }
    w.monitor(move |s| {
        (s[0] < 0 || s[0] >= n || !(0..=1).contains(&s[1]))
            .then(|| format!("barrier state count={} sense={}", s[0], s[1]))
    });
    Ok(w)
}

/// Increments its own counter once per segment. Locals: `[var, iter]`.
struct Counter {
    iters: i64,
}

impl Program for Counter {
    fn name(&self) -> &str {
        "counter"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        if l[1] == self.iters {
            return Ok(SegmentOutcome::Done);
        }
        ctx.add(VarId(l[0] as u32), 1)?;
        l[1] += 1;
        if l[1] == self.iters {
            return Ok(SegmentOutcome::Done);
        }
        Ok(SegmentOutcome::Yield)
    }

    fn access_set(&self, l: &Locals) -> Option<AccessSet> {
        all(&[VarId(l[0] as u32)])
    }
}

pub(super) fn counters(p: &Params, n: i64, iters: i64) -> Result<Workload, BenchError> {
    require("n", n, 1)?;
    require("iters", iters, 0)?;
    let mut w = Workload::new("counters", p, vec![0; n as usize]);
    let program: Arc<dyn Program> = Arc::new(Counter { iters });
    for i in 0..n {
        w.thread(&program, vec![i, 0]);
    }
    w.monitor(move |s| {
        s.iter()
            .position(|&v| !(0..=iters).contains(&v))
            .map(|i| format!("counter {i} at {}", s[i]))
    });
    Ok(w)
}

/// Takes flag `first`, then flag `second`, then releases both. The two
/// threads use opposite orders. Locals: `[pc]`.
struct Crossed {
    first: VarId,
    second: VarId,
    first_name: &'static str,
    second_name: &'static str,
}

impl Program for Crossed {
    fn name(&self) -> &str {
        "crossed-flags"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        let pc = l[0];
        l[0] += 1;
        match pc {
            0 => {
                ctx.label(format!("yieldUntil ({} == 0);", self.first_name));
                Ok(yield_until(PredicateHandle(0)))
            }
            1 => {
                ctx.write(self.first, 1)?;
                ctx.label(format!("yieldUntil ({} == 0);", self.second_name));
                Ok(yield_until(PredicateHandle(1)))
            }
            2 => {
                ctx.write(self.second, 1)?;
                ctx.label("yield;");
                Ok(SegmentOutcome::Yield)
            }
            _ => {
                ctx.write(self.first, 0)?;
                ctx.write(self.second, 0)?;
                Ok(SegmentOutcome::Done)
            }
        }
    }

    fn predicate(&self, pred: PredicateHandle, _: &Locals, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        let var = match pred.0 {
            0 => self.first,
            1 => self.second,
            _ => return Err(AccessError::UnknownPredicate(pred)),
        };
        Ok(ctx.read(var)? == 0)
    }

    fn access_set(&self, _: &Locals) -> Option<AccessSet> {
        all(&[self.first, self.second])
    }
}

pub(super) fn deadlock(p: &Params) -> Workload {
    let (a, b) = (VarId(0), VarId(1));
    let mut w = Workload::new("deadlock-demo", p, vec![0, 0]);
    let ta: Arc<dyn Program> = Arc::new(Crossed {
        first: a,
        second: b,
        first_name: "a",
        second_name: "b",
    });
    let tb: Arc<dyn Program> = Arc::new(Crossed {
        first: b,
        second: a,
        first_name: "b",
        second_name: "a",
    });
    w.thread(&ta, vec![0]);
    w.thread(&tb, vec![0]);
    w.monitor(|s| s.iter().any(|&v| v != 0 && v != 1).then(|| format!("flags {s:?}")));
    w
}
