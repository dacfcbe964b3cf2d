//! Dining philosophers, in the two styles.
//!
//! Invisible: forks are use counters that a philosopher bumps and restores
//! inside a single segment, so no other philosopher ever sees a fork in use.
//! Visible: forks have an `isFree` flag and a holder, taken in one segment
//! and put back several segments later; neighbours wait on the flags.
//!
//! Visible locals: `[id, pc, iter, rng]`.

use std::sync::Arc;

use super::{jitter, require, BenchError, Params, Workload};
use crate::error::AccessError;
use crate::program::{AccessSet, Ctx, Locals, PredicateHandle, Program, SegmentOutcome};
use crate::store::VarId;
use crate::sync::yield_until;

const ID: usize = 0;
const PC: usize = 1;
const ITER: usize = 2;
const RNG: usize = 3;

const FORKS_FREE: PredicateHandle = PredicateHandle(0);

fn forks(id: i64, n: i64) -> (u32, u32) {
    (id as u32, ((id + 1) % n) as u32)
}

/// Locals: `[id, segment, rng]`. Odd philosophers start by eating, so
/// neighbours begin out of phase.
struct Invisible {
    n: i64,
    iters: i64,
    delay: i64,
}

impl Invisible {
    /// Whether segment `seg` of philosopher `id` eats, and which meal it is.
    fn meal(id: i64, seg: i64) -> (bool, i64) {
        let shifted = seg + id % 2;
        (shifted % 2 == 1, shifted / 2)
    }
}

impl Program for Invisible {
    fn name(&self) -> &str {
        "phil-invisible"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        let (id, seg) = (l[0], l[1]);
        if seg == 2 * self.iters {
            return Ok(SegmentOutcome::Done);
        }
        let (eats, meal) = Self::meal(id, seg);
        if eats {
            let (left, right) = forks(id, self.n);
            let (left, right) = (VarId(left), VarId(right));
            let (lv, rv) = (ctx.read(left)?, ctx.read(right)?);
            if lv != 0 || rv != 0 {
                ctx.emit(format!("VIOLATION phil {id} found forks in use ({lv}, {rv})"))?;
            }
            ctx.write(left, lv + 1)?;
            ctx.write(right, rv + 1)?;
            ctx.emit(format!("phil {id} eats {meal}"))?;
            let eat = jitter(self.delay, &mut l[2], ctx);
            ctx.delay(eat);
            ctx.write(left, lv)?;
            ctx.write(right, rv)?;
        }
        ctx.assert_no_more_shared()?;
        if !eats {
            let think = jitter(self.delay, &mut l[2], ctx);
            ctx.delay(think);
        }
        l[1] += 1;
        if l[1] == 2 * self.iters {
            return Ok(SegmentOutcome::Done);
        }
        ctx.label("yield;");
        Ok(SegmentOutcome::Yield)
    }

    fn access_set(&self, l: &Locals) -> Option<AccessSet> {
        if !Self::meal(l[0], l[1]).0 {
            return Some(AccessSet::new());
        }
        let (left, right) = forks(l[0], self.n);
        Some([VarId(left), VarId(right)].into_iter().collect())
    }
}

pub(super) fn invisible(p: &Params, n: i64, iters: i64, delay: i64) -> Result<Workload, BenchError> {
    require("n", n, 2)?;
    require("iters", iters, 0)?;
    require("delay_us", delay, 0)?;
    let mut w = Workload::new("phils-invisible", p, vec![0; n as usize]);
    let program: Arc<dyn Program> = Arc::new(Invisible { n, iters, delay });
    for id in 0..n {
        w.thread(&program, vec![id, 0, 0]);
    }
    w.monitor(|s| {
        s.iter()
            .position(|&v| v != 0)
            .map(|i| format!("fork {i} left at use count {}", s[i]))
    });
    Ok(w)
}

/// Shared layout: `isFree[0..n]` then `holder[0..n]`, holder being the
/// philosopher id plus one, or 0.
struct Visible {
    n: i64,
    iters: i64,
    delay: i64,
}

impl Visible {
    fn free(&self, fork: u32) -> VarId {
        VarId(fork)
    }

    fn holder(&self, fork: u32) -> VarId {
        VarId(self.n as u32 + fork)
    }
}

impl Program for Visible {
    fn name(&self) -> &str {
        "phil-visible"
    }

    fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        let id = l[ID];
        let (left, right) = forks(id, self.n);
        match l[PC] {
            0 => {
                if l[ITER] == self.iters {
                    return Ok(SegmentOutcome::Done);
                }
                ctx.assert_no_more_shared()?;
                let think = jitter(self.delay, &mut l[RNG], ctx);
                ctx.delay(think);
                l[PC] = 1;
                ctx.label("yieldUntil (isFree[i] && isFree[(i+1)%n]);");
                Ok(yield_until(FORKS_FREE))
            }
            1 => {
                for fork in [left, right] {
                    ctx.write(self.free(fork), 0)?;
                    ctx.write(self.holder(fork), id + 1)?;
                }
                l[PC] = 2;
                ctx.label("yield;");
                Ok(SegmentOutcome::Yield)
            }
            2 => {
                ctx.assert_no_more_shared()?;
                ctx.emit(format!("phil {id} eats {}", l[ITER]))?;
                let eat = jitter(self.delay, &mut l[RNG], ctx);
                ctx.delay(eat);
                l[PC] = 3;
                ctx.label("yield;");
                Ok(SegmentOutcome::Yield)
            }
            _ => {
                for fork in [left, right] {
                    let held = ctx.read(self.holder(fork))?;
                    if held != id + 1 {
                        ctx.emit(format!("VIOLATION phil {id} lost fork {fork} to holder {held}"))?;
                    }
                    ctx.write(self.holder(fork), 0)?;
                    ctx.write(self.free(fork), 1)?;
                }
                l[ITER] += 1;
                l[PC] = 0;
                if l[ITER] == self.iters {
                    return Ok(SegmentOutcome::Done);
                }
                ctx.label("yield;");
                Ok(SegmentOutcome::Yield)
            }
        }
    }

    fn predicate(&self, pred: PredicateHandle, l: &Locals, ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        if pred != FORKS_FREE {
            return Err(AccessError::UnknownPredicate(pred));
        }
        let (left, right) = forks(l[ID], self.n);
        Ok(ctx.read(self.free(left))? != 0 && ctx.read(self.free(right))? != 0)
    }

    fn access_set(&self, l: &Locals) -> Option<AccessSet> {
        let (left, right) = forks(l[ID], self.n);
        Some(match l[PC] {
            1 | 3 => [left, right]
                .into_iter()
                .flat_map(|f| [self.free(f), self.holder(f)])
                .collect(),
            _ => AccessSet::new(),
        })
    }
}

pub(super) fn visible(name: &str, p: &Params, n: i64, iters: i64, delay: i64) -> Result<Workload, BenchError> {
    require("n", n, 2)?;
    require("iters", iters, 0)?;
    require("delay_us", delay, 0)?;
    let forks_n = n as usize;
    let mut initial = vec![1; forks_n];
    initial.resize(2 * forks_n, 0);
    let mut w = Workload::new(name, p, initial);
    let program: Arc<dyn Program> = Arc::new(Visible { n, iters, delay });
    for id in 0..n {
        w.thread(&program, vec![id, 0, 0, 0]);
    }
    w.monitor(move |s| {
        let (free, holder) = s.split_at(forks_n);
        for fork in 0..forks_n {
            let h = holder[fork];
            match (free[fork], h) {
                (1, 0) => {}
                (0, h) if h >= 1 && h <= forks_n as i64 => {
                    let phil = (h - 1) as usize;
                    if phil != fork && (phil + 1) % forks_n != fork {
                        return Some(format!("fork {fork} held by non-neighbour {phil}"));
                    }
                }
                (f, h) => return Some(format!("fork {fork} has isFree={f} holder={h}")),
            }
        }
        None
    });
    Ok(w)
}
