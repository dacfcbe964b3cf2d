use thiserror::Error;

use crate::program::{PredicateHandle, ThreadId};
use crate::store::VarId;

/// A violated access contract inside a segment or predicate.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("access to {var} which is not in the declared access set")]
    UndeclaredAccess { var: VarId },
    #[error("access to {var} after asserting it would not be used again")]
    AccessAfterRelease { var: VarId },
    #[error("predicate attempted a side effect")]
    PredicateSideEffect,
    #[error("no shared variable {var}")]
    NoSuchVar { var: VarId },
    #[error("unknown predicate {0:?}")]
    UnknownPredicate(PredicateHandle),
    #[error("program error: {0}")]
    Program(String),
}

/// Errors surfaced by [`crate::Runtime`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("shared variables can only be created before the run starts")]
    CalledDuringRun,
    #[error("runtime already ran")]
    AlreadyRan,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("thread {tid} has no declared access set")]
    MissingAccessSet { tid: ThreadId },
    #[error("cm backend entered by two executors at once")]
    ConcurrentUse,
    #[error("thread {tid}, segment {seg_ordinal}: {source}")]
    Access {
        tid: ThreadId,
        seg_ordinal: u64,
        #[source]
        source: AccessError,
    },
    #[error("trace divergence at ordinal {ordinal}: {reason}")]
    TraceDivergence { ordinal: u64, reason: String },
}
