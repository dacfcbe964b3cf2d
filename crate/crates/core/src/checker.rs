//! Exhaustive enumeration of cooperative schedules for small programs.
//!
//! Starting from the initial state, every scheduling point branches on each
//! thread that could run next: a Ready thread, or a Waiting thread whose
//! predicate holds in the current state. A chosen thread runs one whole
//! segment, exactly as a uniprocessor would. The result is the set of
//! observable outcomes of all complete schedules, including the ones that
//! end with live threads none of which can run.
//!
//! States reached along different paths are merged: the search memoizes,
//! for every (shared values, thread locals, statuses) state, the set of
//! outcome suffixes reachable from it and the number of schedules below it.
//! Waiting threads are never polled, so a schedule never contains a no-op
//! retry segment; that is the same observable behavior as spinning on
//! `yield` until the predicate holds, with a finite search space.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use crate::error::AccessError;
use crate::program::{Ctx, Locals, Program, SegmentOutcome, SharedAccess, ThreadId, ThreadStatus};
use crate::runtime::ExecutionResult;
use crate::store::{Value, VarId};

/// What a run can be observed to do.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Outcome {
    pub final_shared: Vec<Value>,
    pub log: Vec<String>,
    pub stuck: bool,
}

impl Outcome {
    pub fn of(result: &ExecutionResult) -> Self {
        Outcome {
            final_shared: result.final_shared.clone(),
            log: result.log.clone(),
            stuck: result.stuck,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Limits {
    /// Longest schedule, in segments.
    pub max_commits: usize,
    /// Distinct states to memoize before giving up.
    pub max_states: usize,
    /// Outcome suffixes held in memory across all states.
    pub max_outcomes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_commits: 10_000,
            max_states: 2_000_000,
            max_outcomes: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("state space exceeds {max_states} states")]
    LimitExceeded { max_states: usize },
    #[error("more than {max_outcomes} partial outcomes")]
    OutcomeLimit { max_outcomes: usize },
    #[error("a schedule exceeds {max_commits} segments")]
    CommitLimit { max_commits: usize },
    #[error("thread {tid}: {source}")]
    Program {
        tid: ThreadId,
        #[source]
        source: AccessError,
    },
}

#[derive(Clone, Debug)]
pub struct Enumeration {
    pub outcomes: BTreeSet<Outcome>,
    /// Number of distinct complete schedules.
    pub schedules: u128,
    /// Distinct states visited.
    pub states: usize,
}

impl Enumeration {
    pub fn contains(&self, result: &ExecutionResult) -> bool {
        check_membership(result, &self.outcomes)
    }
}

pub fn check_membership(result: &ExecutionResult, oracle: &BTreeSet<Outcome>) -> bool {
    oracle.contains(&Outcome::of(result))
}

/// Enumerates every cooperative schedule of `threads` over `initial`.
/// `seed` feeds per-thread PRNG seeds exactly as in a real run.
pub fn enumerate(
    threads: &[(Arc<dyn Program>, Locals)],
    initial: &[Value],
    seed: u64,
    limits: Limits,
) -> Result<Enumeration, CheckError> {
    let mut search = Search {
        programs: Vec::new(),
        memo: HashMap::new(),
        held: 0,
        seed,
        limits,
    };
    let mut root = State {
        shared: initial.to_vec(),
        threads: Vec::new(),
    };
    for (program, locals) in threads {
        let program = search.intern(program);
        root.threads.push(ThreadState {
            program,
            locals: locals.clone(),
            status: ThreadStatus::Ready,
        });
    }
    let (suffixes, schedules) = search.run(root)?;
    Ok(Enumeration {
        outcomes: suffixes.iter().cloned().collect(),
        schedules,
        states: search.memo.len(),
    })
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct ThreadState {
    program: usize,
    locals: Locals,
    status: ThreadStatus,
}

#[derive(Clone, Default, PartialEq, Eq, Hash)]
struct State {
    shared: Vec<Value>,
    threads: Vec<ThreadState>,
}

type Suffixes = Rc<BTreeSet<Outcome>>;

struct Frame {
    key: State,
    /// Output of the segment that led here from the parent.
    lines: Vec<String>,
    children: Vec<(Vec<String>, State)>,
    next: usize,
    suffixes: BTreeSet<Outcome>,
    schedules: u128,
}

enum Opened {
    Known(Suffixes, u128),
    Frame(Frame),
}

struct Search {
    programs: Vec<Arc<dyn Program>>,
    memo: HashMap<State, (Suffixes, u128)>,
    /// Sum of suffix set sizes held by `memo`.
    held: usize,
    seed: u64,
    limits: Limits,
}

/// Plain shared memory for one segment.
struct Cells<'a>(&'a mut Vec<Value>);

impl SharedAccess for Cells<'_> {
    fn read(&mut self, var: VarId) -> Result<Value, AccessError> {
        self.0.get(var.index()).copied().ok_or(AccessError::NoSuchVar { var })
    }

    fn write(&mut self, var: VarId, value: Value) -> Result<(), AccessError> {
        let cell = self.0.get_mut(var.index()).ok_or(AccessError::NoSuchVar { var })?;
        *cell = value;
        Ok(())
    }

    fn release_var(&mut self, _var: VarId) -> Result<(), AccessError> {
        Ok(())
    }

    fn release_all(&mut self) -> Result<(), AccessError> {
        Ok(())
    }
}

fn prepend(lines: &[String], suffix: &Outcome) -> Outcome {
    let mut log = Vec::with_capacity(lines.len() + suffix.log.len());
    log.extend_from_slice(lines);
    log.extend_from_slice(&suffix.log);
    Outcome {
        final_shared: suffix.final_shared.clone(),
        log,
        stuck: suffix.stuck,
    }
}

impl Search {
    fn intern(&mut self, program: &Arc<dyn Program>) -> usize {
        match self.programs.iter().position(|p| Arc::ptr_eq(p, program)) {
            Some(i) => i,
            None => {
                self.programs.push(Arc::clone(program));
                self.programs.len() - 1
            }
        }
    }

    /// Every (output, successor) pair reachable by running one segment.
    fn successors(&mut self, state: &State) -> Result<Vec<(Vec<String>, State)>, CheckError> {
        let mut out = Vec::new();
        for i in 0..state.threads.len() {
            let tid = ThreadId(i as u32);
            let thread = &state.threads[i];
            let program = Arc::clone(&self.programs[thread.program]);
            let err = |source| CheckError::Program { tid, source };
            let mut shared = state.shared.clone();
            let declared = program.access_set(&thread.locals);
            match thread.status {
                ThreadStatus::Done => continue,
                ThreadStatus::Ready => {}
                ThreadStatus::Waiting(pred) => {
                    let mut cells = Cells(&mut shared);
                    let mut ctx = Ctx::predicate(tid, &mut cells, self.seed).with_declared(declared.as_ref());
                    if !program.predicate(pred, &thread.locals, &mut ctx).map_err(err)? {
                        continue;
                    }
                }
            }
            let mut locals = thread.locals.clone();
            let mut cells = Cells(&mut shared);
            let mut ctx = Ctx::segment(tid, &mut cells, self.seed).with_declared(declared.as_ref());
            let outcome = program.step(&mut locals, &mut ctx).map_err(err)?;
            let publication = ctx.into_publication();

            let mut next = State {
                shared,
                threads: state.threads.clone(),
            };
            next.threads[i].locals = locals;
            next.threads[i].status = match outcome {
                SegmentOutcome::Yield => ThreadStatus::Ready,
                SegmentOutcome::YieldUntil(p) => ThreadStatus::Waiting(p),
                SegmentOutcome::Done => ThreadStatus::Done,
            };
            for spawn in &publication.spawns {
                let program = self.intern(&spawn.program);
                next.threads.push(ThreadState {
                    program,
                    locals: spawn.locals.clone(),
                    status: ThreadStatus::Ready,
                });
            }
            out.push((publication.output, next));
        }
        Ok(out)
    }

    fn open(&mut self, state: State, lines: Vec<String>) -> Result<(Opened, Vec<String>), CheckError> {
        if let Some((suffixes, count)) = self.memo.get(&state) {
            return Ok((Opened::Known(Rc::clone(suffixes), *count), lines));
        }
        let children = self.successors(&state)?;
        if children.is_empty() {
            let stuck = state.threads.iter().any(|t| t.status != ThreadStatus::Done);
            let suffixes = Rc::new(BTreeSet::from([Outcome {
                final_shared: state.shared.clone(),
                log: Vec::new(),
                stuck,
            }]));
            self.remember(state, Rc::clone(&suffixes), 1)?;
            return Ok((Opened::Known(suffixes, 1), lines));
        }
        Ok((
            Opened::Frame(Frame {
                key: state,
                lines: Vec::new(),
                children,
                next: 0,
                suffixes: BTreeSet::new(),
                schedules: 0,
            }),
            lines,
        ))
    }

    fn remember(&mut self, state: State, suffixes: Suffixes, count: u128) -> Result<(), CheckError> {
        self.held += suffixes.len();
        self.memo.insert(state, (suffixes, count));
        if self.memo.len() > self.limits.max_states {
            return Err(CheckError::LimitExceeded {
                max_states: self.limits.max_states,
            });
        }
        if self.held > self.limits.max_outcomes {
            return Err(CheckError::OutcomeLimit {
                max_outcomes: self.limits.max_outcomes,
            });
        }
        Ok(())
    }

    fn check_frame(&self, frame: &Frame) -> Result<(), CheckError> {
        if self.held + frame.suffixes.len() > self.limits.max_outcomes {
            return Err(CheckError::OutcomeLimit {
                max_outcomes: self.limits.max_outcomes,
            });
        }
        Ok(())
    }

    fn run(&mut self, root: State) -> Result<(Suffixes, u128), CheckError> {
        let mut stack = match self.open(root, Vec::new())? {
            (Opened::Known(s, c), _) => return Ok((s, c)),
            (Opened::Frame(f), _) => vec![f],
        };
        loop {
            let top = stack.last_mut().expect("search stack is never empty here");
            if top.next < top.children.len() {
                let (lines, child) = std::mem::take(&mut top.children[top.next]);
                top.next += 1;
                match self.open(child, lines)? {
                    (Opened::Known(suffixes, count), lines) => {
                        let top = stack.last_mut().unwrap();
                        top.suffixes.extend(suffixes.iter().map(|s| prepend(&lines, s)));
                        top.schedules += count;
                        self.check_frame(top)?;
                    }
                    (Opened::Frame(mut frame), lines) => {
                        if stack.len() >= self.limits.max_commits {
                            return Err(CheckError::CommitLimit {
                                max_commits: self.limits.max_commits,
                            });
                        }
                        frame.lines = lines;
                        stack.push(frame);
                    }
                }
                continue;
            }
            let done = stack.pop().unwrap();
            let suffixes = Rc::new(done.suffixes);
            self.remember(done.key, Rc::clone(&suffixes), done.schedules)?;
            match stack.last_mut() {
                None => return Ok((suffixes, done.schedules)),
                Some(parent) => {
                    parent.suffixes.extend(suffixes.iter().map(|s| prepend(&done.lines, s)));
                    parent.schedules += done.schedules;
                    self.check_frame(parent)?;
                }
            }
        }
    }
}
