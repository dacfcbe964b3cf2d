//! Transfers out of a shared source account.
//!
//! Shared layout: `[src, dst1, dst2]`. Thread 0 moves `a` into `dst1`,
//! thread 1 moves `b` into `dst2`, each only while the source can cover it.

use std::sync::Arc;

use super::{require, BenchError, Params, Workload};
use crate::error::AccessError;
use crate::program::{AccessSet, Ctx, Locals, Program, SegmentOutcome};
use crate::store::VarId;

const SRC: VarId = VarId(0);

/// Locals: `[amount, dst]`.
struct Transfer {
    looping: bool,
}

impl Program for Transfer {
    fn name(&self) -> &str {
        if self.looping {
            "transfer-loop"
        } else {
            "transfer-once"
        }
    }

    fn step(&self, locals: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
        let (amount, dst) = (locals[0], VarId(locals[1] as u32));
        let balance = ctx.read(SRC)?;
        if balance < amount {
            return Ok(SegmentOutcome::Done);
        }
        ctx.write(SRC, balance - amount)?;
        ctx.add(dst, amount)?;
        if self.looping {
            ctx.label("yield;");
            Ok(SegmentOutcome::Yield)
        } else {
            Ok(SegmentOutcome::Done)
        }
    }

    fn access_set(&self, locals: &Locals) -> Option<AccessSet> {
        Some([SRC, VarId(locals[1] as u32)].into_iter().collect())
    }
}

fn build(name: &str, p: &Params, looping: bool, src: i64, a: i64, b: i64) -> Result<Workload, BenchError> {
    require("src", src, 0)?;
    require("a", a, 1)?;
    require("b", b, 1)?;
    let mut w = Workload::new(name, p, vec![src, 0, 0]);
    let program: Arc<dyn Program> = Arc::new(Transfer { looping });
    w.thread(&program, vec![a, 1]);
    w.thread(&program, vec![b, 2]);
    let total = src;
    w.monitor(move |s| {
        if let Some(v) = s.iter().find(|&&v| v < 0) {
            return Some(format!("overdrawn account holding {v}"));
        }
        let sum: i64 = s.iter().sum();
        (sum != total).then(|| format!("accounts sum to {sum}, expected {total}"))
    });
    Ok(w)
}

pub(super) fn looping(p: &Params, src: i64, a: i64, b: i64) -> Result<Workload, BenchError> {
    build("banking", p, true, src, a, b)
}

pub(super) fn once(p: &Params, src: i64, a: i64, b: i64) -> Result<Workload, BenchError> {
    build("banking-once", p, false, src, a, b)
}
