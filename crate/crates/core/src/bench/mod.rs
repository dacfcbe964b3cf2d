//! Built-in workloads and the measurement harness.
//!
//! Every workload is a named program family with integer parameters. Building
//! one yields the initial shared values, the initial threads and an invariant
//! monitor that is checked against every committed state of a run.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backend::{Backend, BackendKind};
use crate::checker::{self, CheckError, Enumeration, Limits};
use crate::error::RuntimeError;
use crate::program::{Ctx, Locals, Program};
use crate::runtime::{ExecutionResult, RunConfig, Runtime};
use crate::store::Value;
use crate::trace::{self, TraceError};

mod ants;
mod banking;
mod demos;
mod phils;

pub type Params = BTreeMap<String, i64>;

/// Checks one committed state; returns a description of what is wrong.
pub type Monitor = Arc<dyn Fn(&[Value]) -> Option<String> + Send + Sync>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown program `{0}`")]
    UnknownProgram(String),
    #[error("program `{program}` has no parameter `{key}`")]
    UnknownParam { program: String, key: String },
    #[error("parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// A ready-to-run instance of a named program.
#[derive(Clone)]
pub struct Workload {
    pub name: String,
    pub params: Params,
    pub initial_shared: Vec<Value>,
    pub threads: Vec<(Arc<dyn Program>, Locals)>,
    pub monitor: Option<Monitor>,
}

impl Workload {
    fn new(name: &str, params: &Params, initial_shared: Vec<Value>) -> Self {
        Workload {
            name: name.to_string(),
            params: params.clone(),
            initial_shared,
            threads: Vec::new(),
            monitor: None,
        }
    }

    fn thread(&mut self, program: &Arc<dyn Program>, locals: Locals) {
        self.threads.push((Arc::clone(program), locals));
    }

    fn monitor(&mut self, f: impl Fn(&[Value]) -> Option<String> + Send + Sync + 'static) {
        self.monitor = Some(Arc::new(f));
    }

    fn populate(&self, mut rt: Runtime) -> Runtime {
        rt.describe(&self.name, &self.params);
        for &v in &self.initial_shared {
            rt.create_shared(v).expect("fresh runtime accepts variables");
        }
        for (program, locals) in &self.threads {
            rt.spawn(Arc::clone(program), locals.clone());
        }
        rt
    }

    /// A fresh runtime loaded with this workload.
    pub fn runtime(&self, kind: BackendKind) -> Runtime {
        self.populate(Runtime::new(kind))
    }

    pub fn runtime_with(&self, factory: impl Fn(usize) -> Box<dyn Backend> + Send + Sync + 'static) -> Runtime {
        self.populate(Runtime::with_backend(factory))
    }

    pub fn run(&self, kind: BackendKind, cfg: &RunConfig) -> Result<ExecutionResult, RuntimeError> {
        self.runtime(kind).run(cfg)
    }

    /// All cooperative outcomes, for membership checks.
    pub fn enumerate(&self, seed: u64, limits: Limits) -> Result<Enumeration, CheckError> {
        checker::enumerate(&self.threads, &self.initial_shared, seed, limits)
    }

    /// Invariant violations of a finished run: monitor failures on every
    /// committed state (found by replaying its trace), `VIOLATION` lines the
    /// program itself logged, and any disagreement between the run and its
    /// replay.
    pub fn violations(&self, result: &ExecutionResult) -> Vec<String> {
        let mut found: Vec<String> = result
            .log
            .iter()
            .filter(|line| line.contains("VIOLATION"))
            .cloned()
            .collect();
        let monitor = self.monitor.clone();
        let replayed = trace::replay_monitored(&result.trace, self, |ordinal, state| {
            if let Some(what) = monitor.as_ref().and_then(|m| m(state)) {
                found.push(format!("after commit {ordinal}: {what}"));
            }
        });
        match replayed {
            Ok(replayed) if replayed.final_shared != result.final_shared || replayed.log != result.log => {
                found.push("serial replay disagrees with the run".to_string());
            }
            Ok(_) => {}
            Err(e) => found.push(format!("serial replay failed: {e}")),
        }
        found
    }
}

pub struct ProgramInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub defaults: &'static [(&'static str, i64)],
}

pub const PROGRAMS: &[ProgramInfo] = &[
    ProgramInfo {
        name: "banking",
        summary: "two looping transfers of 5 and 10 out of one account",
        defaults: &[("src", 20), ("a", 5), ("b", 10)],
    },
    ProgramInfo {
        name: "banking-once",
        summary: "two single guarded transfers out of one account",
        defaults: &[("src", 20), ("a", 5), ("b", 10)],
    },
    ProgramInfo {
        name: "phils-invisible",
        summary: "dining philosophers that eat inside one segment",
        defaults: &[("n", 13), ("iters", 50), ("delay_us", 0)],
    },
    ProgramInfo {
        name: "phils-visible",
        summary: "dining philosophers that hold forks across yields",
        defaults: &[("n", 13), ("iters", 50), ("delay_us", 0)],
    },
    ProgramInfo {
        name: "phils-visible-small",
        summary: "phils-visible sized for exhaustive checking",
        defaults: &[("n", 3), ("iters", 2), ("delay_us", 0)],
    },
    ProgramInfo {
        name: "ants",
        summary: "ants wandering a grid looking for food, with a printer thread",
        defaults: &[
            ("width", 8),
            ("height", 8),
            ("ants", 4),
            ("food", 3),
            ("health", 40),
            ("food_health", 40),
            ("layout_seed", 1),
            ("delay_us", 0),
        ],
    },
    ProgramInfo {
        name: "semaphore",
        summary: "waiters competing for fewer permits than waiters",
        defaults: &[("n", 3), ("permits", 2)],
    },
    ProgramInfo {
        name: "sem-mutex",
        summary: "binary semaphore around a read-yield-write increment",
        defaults: &[("n", 3), ("iters", 3)],
    },
    ProgramInfo {
        name: "barrier",
        summary: "single-use counting barrier",
        defaults: &[("n", 3), ("threads", 3)],
    },
    ProgramInfo {
        name: "sense-barrier",
        summary: "reusable sense-reversing barrier over several rounds",
        defaults: &[("n", 3), ("iters", 3)],
    },
    ProgramInfo {
        name: "counters",
        summary: "threads each incrementing their own counter, yielding every time",
        defaults: &[("n", 10), ("iters", 20)],
    },
    ProgramInfo {
        name: "deadlock-demo",
        summary: "two threads taking two flags in opposite orders",
        defaults: &[],
    },
];

pub fn info(name: &str) -> Option<&'static ProgramInfo> {
    PROGRAMS.iter().find(|p| p.name == name)
}

/// Defaults for `name` overridden by `overrides`.
pub fn resolve_params(name: &str, overrides: &Params) -> Result<Params, BenchError> {
    let info = info(name).ok_or_else(|| BenchError::UnknownProgram(name.to_string()))?;
    let mut params: Params = info.defaults.iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for (key, &value) in overrides {
        match params.get_mut(key) {
            Some(slot) => *slot = value,
            None => {
                return Err(BenchError::UnknownParam {
                    program: name.to_string(),
                    key: key.clone(),
                })
            }
        }
    }
    Ok(params)
}

/// Builds the workload `name` with `overrides` applied to its defaults.
pub fn build(name: &str, overrides: &Params) -> Result<Workload, BenchError> {
    let p = resolve_params(name, overrides)?;
    let get = |key: &str| p[key];
    match name {
        "banking" => banking::looping(&p, get("src"), get("a"), get("b")),
        "banking-once" => banking::once(&p, get("src"), get("a"), get("b")),
        "phils-invisible" => phils::invisible(&p, get("n"), get("iters"), get("delay_us")),
        "phils-visible" | "phils-visible-small" => phils::visible(name, &p, get("n"), get("iters"), get("delay_us")),
        "ants" => ants::build(&p),
        "semaphore" => demos::semaphore(&p, get("n"), get("permits")),
        "sem-mutex" => demos::sem_mutex(&p, get("n"), get("iters")),
        "barrier" => demos::barrier(&p, get("n"), get("threads")),
        "sense-barrier" => demos::sense_barrier(&p, get("n"), get("iters")),
        "counters" => demos::counters(&p, get("n"), get("iters")),
        "deadlock-demo" => Ok(demos::deadlock(&p)),
        _ => unreachable!("resolve_params accepted an unregistered program"),
    }
}

fn require(key: &str, value: i64, min: i64) -> Result<(), BenchError> {
    if value < min {
        return Err(BenchError::InvalidParam {
            key: key.to_string(),
            reason: format!("must be at least {min}, got {value}"),
        });
    }
    Ok(())
}

/// Draws from a PRNG whose whole state lives in one locals slot, so that
/// rollback and replay reproduce the same draws. A zero slot is seeded from
/// the thread's seed on first use.
pub(crate) fn draw(slot: &mut i64, ctx: &Ctx<'_>) -> u64 {
    if *slot == 0 {
        *slot = ctx.thread_seed() as i64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(*slot as u64);
    let value = rng.next_u64();
    *slot = (rng.next_u64() | 1) as i64;
    value
}

/// `base` microseconds varied uniformly by up to 20% either way.
pub(crate) fn jitter(base: i64, slot: &mut i64, ctx: &Ctx<'_>) -> u64 {
    if base <= 0 {
        return 0;
    }
    let pct = 80 + draw(slot, ctx) % 41;
    base as u64 * pct / 100
}

/// One measurement cell.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub program: String,
    pub backend: BackendKind,
    pub workers: usize,
    pub params: Params,
    pub seed: u64,
}

impl BenchConfig {
    /// `cm` always runs on one worker.
    pub fn effective_workers(&self) -> usize {
        if self.backend == BackendKind::Cm {
            1
        } else {
            self.workers
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub wall: Duration,
    pub commits: u64,
    pub aborts: u64,
    pub speedup: f64,
    pub violations: Vec<String>,
}

impl BenchResult {
    pub fn csv_header() -> &'static str {
        "program,backend,workers,n,iters,wall_ms,commits,aborts,speedup,violations"
    }

    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let param = |k: &str| c.params.get(k).map(|v| v.to_string()).unwrap_or_default();
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{:.3},{},{},{:.3},{}",
            c.program,
            c.backend,
            c.effective_workers(),
            param("n"),
            param("iters"),
            self.wall.as_secs_f64() * 1000.0,
            self.commits,
            self.aborts,
            self.speedup,
            self.violations.len()
        )
        .unwrap();
        row
    }
}

/// Runs measurements with real delays, reusing one `cm` baseline per
/// (program, params, seed).
#[derive(Default)]
pub struct Bench {
    baselines: HashMap<(String, Params, u64), Duration>,
}

impl Bench {
    pub fn new() -> Self {
        Self::default()
    }

    fn timed(workload: &Workload, kind: BackendKind, workers: usize, seed: u64) -> Result<ExecutionResult, BenchError> {
        let cfg = RunConfig::new(workers).seed(seed).delays(true);
        Ok(workload.run(kind, &cfg)?)
    }

    pub fn measure(&mut self, config: &BenchConfig) -> Result<BenchResult, BenchError> {
        let workload = build(&config.program, &config.params)?;
        let result = Self::timed(&workload, config.backend, config.effective_workers(), config.seed)?;
        let key = (config.program.clone(), workload.params.clone(), config.seed);
        let baseline = if config.backend == BackendKind::Cm {
            *self.baselines.entry(key).or_insert(result.stats.wall)
        } else if let Some(&wall) = self.baselines.get(&key) {
            wall
        } else {
            let wall = Self::timed(&workload, BackendKind::Cm, 1, config.seed)?.stats.wall;
            self.baselines.insert(key, wall);
            wall
        };
        let speedup = if config.backend == BackendKind::Cm {
            1.0
        } else {
            baseline.as_secs_f64() / result.stats.wall.as_secs_f64().max(1e-9)
        };
        Ok(BenchResult {
            config: BenchConfig {
                params: workload.params.clone(),
                ..config.clone()
            },
            wall: result.stats.wall,
            commits: result.commits,
            aborts: result.stats.aborts.len() as u64,
            speedup,
            violations: workload.violations(&result),
        })
    }
}
