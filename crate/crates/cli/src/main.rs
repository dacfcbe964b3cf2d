//! `ocm`: run built-in programs under a chosen backend, record and replay
//! serialization traces, check runs against the exhaustive oracle and
//! produce benchmark CSV.
//!
//! Exit codes: 0 success, 1 invariant or serializability failure (or a
//! runtime error), 2 usage error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ocm_core::backend::racy::Racy;
use ocm_core::bench::{self, Bench, BenchConfig, BenchResult, Params, Workload};
use ocm_core::checker::{CheckError, Limits};
use ocm_core::runtime::log_digest;
use ocm_core::trace::{self, Trace, TraceError};
use ocm_core::{BackendKind, ExecutionResult, RunConfig, RuntimeError};

#[derive(Parser)]
#[command(
    name = "ocm",
    version,
    about = "Cooperative threads with parallel, serializable segments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a program once and print its result.
    Run(RunArgs),
    /// Replay a recorded trace serially and compare with the recording.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Check randomized parallel runs against every cooperative outcome.
    Check(CheckArgs),
    /// Measure a backends x workers matrix and write CSV.
    Bench(BenchArgs),
    /// Print a trace as `X->Y (at X's `label')` lines.
    RenderTrace {
        #[arg(long)]
        trace: PathBuf,
    },
    /// List the built-in programs and their parameters.
    Programs,
}

#[derive(Args, Clone)]
struct ProgramArgs {
    #[arg(long)]
    program: String,
    #[arg(long)]
    n: Option<i64>,
    #[arg(long)]
    iters: Option<i64>,
    #[arg(long)]
    delay_us: Option<i64>,
    /// Any program parameter, as key=value. Repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, i64)>,
}

impl ProgramArgs {
    fn overrides(&self) -> Params {
        let mut p: Params = self.params.iter().cloned().collect();
        for (key, value) in [("n", self.n), ("iters", self.iters), ("delay_us", self.delay_us)] {
            if let Some(v) = value {
                p.insert(key.to_string(), v);
            }
        }
        p
    }

    fn workload(&self) -> Result<Workload, Failure> {
        bench::build(&self.program, &self.overrides()).map_err(|e| Failure::Usage(e.to_string()))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// cm, global, global-lazy, 2pl or stm.
    #[arg(long)]
    backend: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long)]
    backend: String,
    #[arg(long, default_value_t = 100)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 200_000)]
    max_states: usize,
    #[arg(long, default_value_t = 1_000_000)]
    max_outcomes: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    program: ProgramArgs,
    /// Backends and worker counts, e.g. `cm,global,2pl:1,2,4`.
    #[arg(long, default_value = "cm,global,global-lazy,2pl,stm:1,2,4")]
    matrix: String,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    /// Exit 1.
    Failed(String),
    /// Exit 2.
    Usage(String),
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Failed(e.to_string()),
        }
    }
}

fn parse_param(s: &str) -> Result<(String, i64), String> {
    let (key, value) = s.split_once('=').ok_or("expected key=value")?;
    let value = value.parse().map_err(|e| format!("`{value}`: {e}"))?;
    Ok((key.to_string(), value))
}

/// A backend as named on the command line. `racy` is an unsynchronized
/// test double used to show that `check` catches a broken backend.
#[derive(Copy, Clone, PartialEq, Eq)]
enum Choice {
    Kind(BackendKind),
    Racy,
}

fn backend(name: &str) -> Result<Choice, Failure> {
    if name == "racy" {
        return Ok(Choice::Racy);
    }
    name.parse()
        .map(Choice::Kind)
        .map_err(|e: ocm_core::backend::UnknownBackend| Failure::Usage(e.to_string()))
}

fn execute(workload: &Workload, choice: Choice, cfg: &RunConfig) -> Result<ExecutionResult, RuntimeError> {
    match choice {
        Choice::Kind(kind) => workload.run(kind, cfg),
        Choice::Racy => workload.runtime_with(|_| Box::new(Racy)).run(cfg),
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let workload = args.program.workload()?;
    let choice = backend(&args.backend)?;
    let cfg = RunConfig::new(args.workers).seed(args.seed).delays(true);
    let result = execute(&workload, choice, &cfg)?;
    if let Some(path) = &args.trace_out {
        result
            .trace
            .save(path)
            .map_err(|e| Failure::Failed(format!("writing {}: {e}", path.display())))?;
    }
    let violations = workload.violations(&result);
    println!("program: {}", workload.name);
    println!("backend: {}", args.backend);
    println!("workers: {}", args.workers);
    println!("seed: {}", args.seed);
    println!("final: {}", join(&result.final_shared));
    println!("commits: {}", result.commits);
    println!("log-lines: {}", result.log.len());
    println!("log-sha256: {}", log_digest(&result.log));
    println!("stuck: {}", result.stuck);
    if result.stuck {
        let waiting: Vec<String> = result.waiting().iter().map(|t| trace::thread_name(*t)).collect();
        println!("waiting: {}", waiting.join(","));
    }
    println!("violations: {}", violations.len());
    for v in &violations {
        println!("  {v}");
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("{} invariant violations", violations.len())))
    }
}

fn load(path: &PathBuf) -> Result<Trace, Failure> {
    Trace::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_replay(path: &PathBuf) -> Result<(), Failure> {
    let recorded = load(path)?;
    let m = &recorded.manifest;
    let workload = bench::build(&m.program, &m.params).map_err(|e| Failure::Usage(e.to_string()))?;
    let replayed = trace::replay(&recorded, &workload).map_err(|e| match e {
        TraceError::Runtime(RuntimeError::TraceDivergence { ordinal, reason }) => {
            Failure::Failed(format!("divergence at ordinal {ordinal}: {reason}"))
        }
        TraceError::Runtime(e) => Failure::Failed(e.to_string()),
        e => Failure::Usage(e.to_string()),
    })?;
    if let Some(summary) = &recorded.summary {
        let digest = log_digest(&replayed.log);
        let mut diffs = Vec::new();
        if replayed.final_shared != summary.final_shared {
            diffs.push(format!(
                "final state {} (recorded {})",
                join(&replayed.final_shared),
                join(&summary.final_shared)
            ));
        }
        if digest != summary.log_sha256 {
            diffs.push(format!("log digest {digest} (recorded {})", summary.log_sha256));
        }
        if replayed.stuck != summary.stuck {
            diffs.push(format!("stuck {} (recorded {})", replayed.stuck, summary.stuck));
        }
        if !diffs.is_empty() {
            return Err(Failure::Failed(format!(
                "divergence at ordinal {}: {}",
                replayed.commits,
                diffs.join("; ")
            )));
        }
    }
    println!("replay matches: {} commits", replayed.commits);
    println!("final: {}", join(&replayed.final_shared));
    println!("log-sha256: {}", log_digest(&replayed.log));
    println!("stuck: {}", replayed.stuck);
    Ok(())
}

fn cmd_check(args: &CheckArgs) -> Result<(), Failure> {
    let workload = args.program.workload()?;
    let choice = backend(&args.backend)?;
    let workers = if choice == Choice::Kind(BackendKind::Cm) {
        1
    } else {
        args.workers
    };
    let limits = Limits {
        max_states: args.max_states,
        max_outcomes: args.max_outcomes,
        ..Limits::default()
    };
    let oracle = workload.enumerate(args.seed, limits).map_err(|e| match e {
        CheckError::LimitExceeded { .. } | CheckError::OutcomeLimit { .. } | CheckError::CommitLimit { .. } => {
            Failure::Usage(format!("{} is too large to check exhaustively: {e}", workload.name))
        }
        e => Failure::Failed(e.to_string()),
    })?;
    println!(
        "oracle: {} outcomes over {} schedules ({} states)",
        oracle.outcomes.len(),
        oracle.schedules,
        oracle.states
    );
    for i in 0..args.runs {
        let perturb = args.seed.wrapping_add(i);
        let cfg = RunConfig::new(workers).seed(args.seed).perturb(perturb);
        let result = execute(&workload, choice, &cfg)?;
        if !oracle.contains(&result) {
            println!("counterexample: run {i}, perturbation seed {perturb}");
            println!("final: {}", join(&result.final_shared));
            println!("stuck: {}", result.stuck);
            return Err(Failure::Failed(
                "outcome not reachable by any cooperative schedule".into(),
            ));
        }
    }
    println!("all {} runs are cooperative outcomes", args.runs);
    Ok(())
}

fn parse_matrix(matrix: &str) -> Result<Vec<(BackendKind, usize)>, Failure> {
    let usage = |m: String| Failure::Usage(format!("--matrix `{matrix}`: {m}"));
    let (backends, workers) = matrix.split_once(':').unwrap_or((matrix, "1"));
    let backends = backends
        .split(',')
        .map(|b| b.trim().parse::<BackendKind>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let workers = workers
        .split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(usage(format!("bad worker count `{w}`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(backends
        .iter()
        .flat_map(|&b| workers.iter().map(move |&w| (b, w)))
        .collect())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let cells = parse_matrix(&args.matrix)?;
    let params = bench::resolve_params(&args.program.program, &args.program.overrides())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let mut harness = Bench::new();
    let mut csv = vec![BenchResult::csv_header().to_string()];
    println!("{}", csv[0]);
    let mut violations = 0;
    for (backend, workers) in cells {
        let config = BenchConfig {
            program: args.program.program.clone(),
            backend,
            workers,
            params: params.clone(),
            seed: args.seed,
        };
        let result = harness.measure(&config).map_err(|e| Failure::Failed(e.to_string()))?;
        violations += result.violations.len();
        let row = result.csv_row();
        println!("{row}");
        csv.push(row);
    }
    csv.push(String::new());
    fs::write(&args.csv, csv.join("\n"))
        .map_err(|e| Failure::Failed(format!("writing {}: {e}", args.csv.display())))?;
    if violations > 0 {
        return Err(Failure::Failed(format!("{violations} invariant violations")));
    }
    Ok(())
}

fn cmd_programs() {
    for p in bench::PROGRAMS {
        let defaults: Vec<String> = p.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<20} {}", p.name, p.summary);
        if !defaults.is_empty() {
            println!("{:<20} {}", "", defaults.join(" "));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Replay { trace } => cmd_replay(trace),
        Command::Check(args) => cmd_check(args),
        Command::Bench(args) => cmd_bench(args),
        Command::RenderTrace { trace } => load(trace).map(|t| print!("{}", trace::render(&t))),
        Command::Programs => {
            cmd_programs();
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
