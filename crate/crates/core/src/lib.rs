//! Cooperative threads whose segments run in parallel.
//!
//! Programs are written as cooperative threads whose code between two
//! yields (a segment) behaves atomically. The runtime executes segments in
//! parallel on a pool of workers, and each concurrency-control backend
//! guarantees the result is one some uniprocessor schedule could produce.
//!
//! ```
//! use std::sync::Arc;
//! use ocm_core::{AccessError, BackendKind, Ctx, Locals, Program, RunConfig, Runtime, SegmentOutcome, VarId};
//!
//! struct Bump;
//!
//! impl Program for Bump {
//!     fn name(&self) -> &str { "bump" }
//!     fn step(&self, l: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError> {
//!         ctx.add(VarId(0), 1)?;
//!         l[0] -= 1;
//!         Ok(if l[0] == 0 { SegmentOutcome::Done } else { SegmentOutcome::Yield })
//!     }
//! }
//!
//! let mut rt = Runtime::new(BackendKind::Stm);
//! rt.create_shared(0).unwrap();
//! for _ in 0..4 {
//!     rt.spawn(Arc::new(Bump), vec![3]);
//! }
//! let result = rt.run(&RunConfig::new(2)).unwrap();
//! assert_eq!(result.final_shared, vec![12]);
//! assert_eq!(result.commits, 12);
//! ```

pub mod backend;
pub mod bench;
pub mod checker;
pub mod commit;
pub mod error;
pub mod program;
pub mod runtime;
pub mod store;
pub mod sync;
pub mod trace;

pub use backend::{audit_lock_events, BackendKind};
pub use error::{AccessError, RuntimeError};
pub use program::{
    thread_seed, AccessSet, Ctx, Locals, PredicateHandle, Program, SegmentOutcome, SharedAccess, ThreadId, ThreadStatus,
};
pub use runtime::{ExecutionResult, RunConfig, Runtime};
pub use store::{Value, VarId};
pub use trace::{Trace, TraceRecord};
