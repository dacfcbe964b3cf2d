//! The OCM program model: threads are step functions over a locals blob,
//! and every shared access goes through a [`Ctx`].

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::AccessError;
use crate::store::{Value, VarId};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThreadId(pub u32);

impl ThreadId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Thread-local state. Must be a canonical encoding of everything the thread
/// carries between segments: the checker hashes it and rollback restores it.
pub type Locals = Vec<i64>;

/// Id of a predicate registered by a program.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredicateHandle(pub u32);

/// How a segment ended.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum SegmentOutcome {
    Yield,
    YieldUntil(PredicateHandle),
    Done,
}

/// Scheduling status of a thread between segments.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ThreadStatus {
    Ready,
    Waiting(PredicateHandle),
    Done,
}

/// Variables a segment may touch, declared up front for the two-phase
/// locking backend.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessSet(BTreeSet<VarId>);

impl AccessSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, var: VarId) {
        self.0.insert(var);
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.0.contains(&var)
    }

    /// Ascending, which is the global lock order.
    pub fn iter(&self) -> impl Iterator<Item = VarId> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<VarId> for AccessSet {
    fn from_iter<I: IntoIterator<Item = VarId>>(iter: I) -> Self {
        AccessSet(iter.into_iter().collect())
    }
}

/// A cooperative thread body.
///
/// `step` runs one segment: the code between two successive yields. It must
/// be a deterministic function of the locals at entry and the values returned
/// by `ctx.read`, because the STM backend re-executes aborted segments from a
/// checkpoint and replay re-executes whole runs.
pub trait Program: Send + Sync {
    fn name(&self) -> &str;

    fn step(&self, locals: &mut Locals, ctx: &mut Ctx<'_>) -> Result<SegmentOutcome, AccessError>;

    /// Evaluates a predicate this program yielded on. `ctx` is read-only here.
    fn predicate(&self, pred: PredicateHandle, _locals: &Locals, _ctx: &mut Ctx<'_>) -> Result<bool, AccessError> {
        Err(AccessError::UnknownPredicate(pred))
    }

    /// Variables the next segment (including a pending predicate) may touch.
    fn access_set(&self, _locals: &Locals) -> Option<AccessSet> {
        None
    }
}

/// Raw shared-variable access for one open segment. Implemented by backend
/// segments and by the checker's snapshot.
pub trait SharedAccess {
    fn read(&mut self, var: VarId) -> Result<Value, AccessError>;
    fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError>;
    /// The segment will not touch `var` again.
    fn release_var(&mut self, var: VarId) -> Result<(), AccessError>;
    /// The segment will not touch shared state again.
    fn release_all(&mut self) -> Result<(), AccessError>;
}

/// A thread created inside a segment; it exists only if the segment commits.
#[derive(Clone)]
pub struct Spawn {
    pub program: Arc<dyn Program>,
    pub locals: Locals,
}

impl fmt::Debug for Spawn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spawn")
            .field("program", &self.program.name())
            .field("locals", &self.locals)
            .finish()
    }
}

/// Everything a segment makes visible when it commits.
#[derive(Debug, Default)]
pub struct Publication {
    pub label: Option<String>,
    pub output: Vec<String>,
    pub spawns: Vec<Spawn>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Mode {
    Segment,
    Predicate,
}

/// Schedule noise injected at shared accesses to widen the set of
/// interleavings a parallel run explores.
pub struct Perturb {
    rng: ChaCha8Rng,
}

impl Perturb {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Perturb { rng }
    }

    fn jolt(&mut self) {
        let roll: u32 = self.rng.gen_range(0..100);
        if roll < 30 {
            std::thread::yield_now();
        } else if roll < 35 {
            let spins = self.rng.gen_range(50..2_000);
            for _ in 0..spins {
                std::hint::spin_loop();
            }
        }
    }
}

/// Per-thread seed derived from the run seed and the thread id.
pub fn thread_seed(seed: u64, tid: ThreadId) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(tid.0) + 1);
    rng.gen::<u64>() | 1
}

/// The segment context: the only path from a program to shared state.
pub struct Ctx<'a> {
    tid: ThreadId,
    access: &'a mut dyn SharedAccess,
    mode: Mode,
    seed: u64,
    sleep: bool,
    perturb: Option<&'a mut Perturb>,
    declared: Option<AccessSet>,
    released: BTreeSet<VarId>,
    no_more_shared: bool,
    publication: Publication,
}

impl<'a> Ctx<'a> {
    pub fn segment(tid: ThreadId, access: &'a mut dyn SharedAccess, seed: u64) -> Self {
        Ctx {
            tid,
            access,
            mode: Mode::Segment,
            seed,
            sleep: false,
            perturb: None,
            declared: None,
            released: BTreeSet::new(),
            no_more_shared: false,
            publication: Publication::default(),
        }
    }

    /// A read-only context for predicate evaluation.
    pub fn predicate(tid: ThreadId, access: &'a mut dyn SharedAccess, seed: u64) -> Self {
        Ctx {
            mode: Mode::Predicate,
            ..Ctx::segment(tid, access, seed)
        }
    }

    pub fn with_sleep(mut self, sleep: bool) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn with_perturb(mut self, perturb: Option<&'a mut Perturb>) -> Self {
        self.perturb = perturb;
        self
    }

    /// Rejects access to variables outside `declared`, when given.
    pub fn with_declared(mut self, declared: Option<&AccessSet>) -> Self {
        self.declared = declared.cloned();
        self
    }

    pub fn tid(&self) -> ThreadId {
        self.tid
    }

    /// Seed for this thread's private PRNG; stable across replays.
    pub fn thread_seed(&self) -> u64 {
        thread_seed(self.seed, self.tid)
    }

    fn check_live(&self, var: VarId) -> Result<(), AccessError> {
        if self.no_more_shared || self.released.contains(&var) {
            return Err(AccessError::AccessAfterRelease { var });
        }
        if self.declared.as_ref().is_some_and(|d| !d.contains(var)) {
            return Err(AccessError::UndeclaredAccess { var });
        }
        Ok(())
    }

    fn check_effect(&self) -> Result<(), AccessError> {
        match self.mode {
            Mode::Segment => Ok(()),
            Mode::Predicate => Err(AccessError::PredicateSideEffect),
        }
    }

    pub fn read(&mut self, var: VarId) -> Result<Value, AccessError> {
        self.check_live(var)?;
        if let Some(p) = self.perturb.as_deref_mut() {
            p.jolt();
        }
        self.access.read(var)
    }

    pub fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError> {
        self.check_effect()?;
        self.check_live(var)?;
        if let Some(p) = self.perturb.as_deref_mut() {
            p.jolt();
        }
        self.access.write(var, value)
    }

    /// Read-modify-write convenience; returns the new value.
    pub fn add(&mut self, var: VarId, delta: Value) -> Result<Value, AccessError> {
        let v = self.read(var)? + delta;
        self.write(var, v)?;
        Ok(v)
    }

    /// Asserts `var` is not touched again in this segment. Lock backends may
    /// release its lock now; a later access fails.
    pub fn assert_done_with(&mut self, var: VarId) -> Result<(), AccessError> {
        self.check_effect()?;
        if self.no_more_shared || !self.released.insert(var) {
            return Ok(());
        }
        self.access.release_var(var)
    }

    /// Asserts no further shared access before the next yield.
    pub fn assert_no_more_shared(&mut self) -> Result<(), AccessError> {
        self.check_effect()?;
        if self.no_more_shared {
            return Ok(());
        }
        self.no_more_shared = true;
        self.access.release_all()
    }

    /// Buffers one line of observable output, published on commit.
    pub fn emit(&mut self, line: impl Into<String>) -> Result<(), AccessError> {
        self.check_effect()?;
        self.publication.output.push(line.into());
        Ok(())
    }

    pub fn spawn(&mut self, program: Arc<dyn Program>, locals: Locals) -> Result<(), AccessError> {
        self.check_effect()?;
        self.publication.spawns.push(Spawn { program, locals });
        Ok(())
    }

    /// Context label recorded in the trace for this segment, typically the
    /// yield point the segment ends at.
    pub fn label(&mut self, text: impl Into<String>) {
        let text = text.into();
        self.publication.label = (!text.is_empty()).then_some(text);
    }

    /// Simulated work. Sleeps only when the run enables real delays.
    pub fn delay(&mut self, micros: u64) {
        if self.sleep && micros > 0 {
            std::thread::sleep(Duration::from_micros(micros));
        }
    }

    pub fn into_publication(self) -> Publication {
        self.publication
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Plain {
        cells: Vec<Value>,
        released: Vec<VarId>,
        all: bool,
    }

    impl SharedAccess for Plain {
        fn read(&mut self, var: VarId) -> Result<Value, AccessError> {
            Ok(self.cells[var.index()])
        }
        fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError> {
            self.cells[var.index()] = value;
            Ok(())
        }
        fn release_var(&mut self, var: VarId) -> Result<(), AccessError> {
            self.released.push(var);
            Ok(())
        }
        fn release_all(&mut self) -> Result<(), AccessError> {
            self.all = true;
            Ok(())
        }
    }

    #[test]
    fn access_after_done_with_is_rejected() {
        let mut cells = Plain {
            cells: vec![1, 2],
            ..Default::default()
        };
        let mut ctx = Ctx::segment(ThreadId(0), &mut cells, 0);
        ctx.assert_done_with(VarId(1)).unwrap();
        ctx.assert_done_with(VarId(1)).unwrap();
        assert_eq!(
            ctx.read(VarId(1)),
            Err(AccessError::AccessAfterRelease { var: VarId(1) })
        );
        assert_eq!(ctx.read(VarId(0)), Ok(1));
        drop(ctx);
        assert_eq!(cells.released, vec![VarId(1)]);
    }

    #[test]
    fn no_more_shared_is_idempotent_and_enforced() {
        let mut cells = Plain {
            cells: vec![1],
            ..Default::default()
        };
        let mut ctx = Ctx::segment(ThreadId(0), &mut cells, 0);
        ctx.assert_no_more_shared().unwrap();
        ctx.assert_no_more_shared().unwrap();
        assert_eq!(
            ctx.write(VarId(0), 3),
            Err(AccessError::AccessAfterRelease { var: VarId(0) })
        );
        ctx.emit("still fine").unwrap();
        let publication = ctx.into_publication();
        assert_eq!(publication.output, vec!["still fine".to_string()]);
        assert!(cells.all);
    }

    #[test]
    fn declared_set_bounds_access() {
        let mut cells = Plain {
            cells: vec![1, 2],
            ..Default::default()
        };
        let declared: AccessSet = [VarId(0)].into_iter().collect();
        let mut ctx = Ctx::segment(ThreadId(0), &mut cells, 0).with_declared(Some(&declared));
        assert_eq!(ctx.add(VarId(0), 1), Ok(2));
        assert_eq!(ctx.read(VarId(1)), Err(AccessError::UndeclaredAccess { var: VarId(1) }));
        assert_eq!(
            ctx.write(VarId(1), 0),
            Err(AccessError::UndeclaredAccess { var: VarId(1) })
        );
    }

    #[test]
    fn predicate_context_is_read_only() {
        let mut cells = Plain {
            cells: vec![4],
            ..Default::default()
        };
        let mut ctx = Ctx::predicate(ThreadId(0), &mut cells, 0);
        assert_eq!(ctx.read(VarId(0)), Ok(4));
        assert_eq!(ctx.write(VarId(0), 5), Err(AccessError::PredicateSideEffect));
        assert_eq!(ctx.emit("x"), Err(AccessError::PredicateSideEffect));
        assert_eq!(ctx.assert_no_more_shared(), Err(AccessError::PredicateSideEffect));
        assert_eq!(cells.cells, vec![4]);
    }

    #[test]
    fn thread_seeds_differ_per_thread_and_are_stable() {
        assert_eq!(thread_seed(3, ThreadId(1)), thread_seed(3, ThreadId(1)));
        assert_ne!(thread_seed(3, ThreadId(1)), thread_seed(3, ThreadId(2)));
        assert_ne!(thread_seed(3, ThreadId(1)), thread_seed(4, ThreadId(1)));
    }
}
