//! Serialization traces: the commit order of a run, enough to replay it
//! serially under the `cm` backend.
//!
//! File format (line oriented, tab separated):
//!
//! ```text
//! ocm-trace  1
//! program  <name>
//! param  <key>  <value>        (zero or more, sorted by key)
//! seed  <u64>
//! initial  <comma separated values>
//! threads  <initial thread count>
//! backend  <name>             (summary block, optional as a whole)
//! workers  <n>
//! final  <comma separated values>
//! stuck  <true|false>
//! waiting  <comma separated thread ids>
//! log-sha256  <hex>
//! records  <count>
//! <ordinal>  <tid>  <segOrdinal>  <label>
//! ```
//!
//! Labels escape `\`, tab and newline as `\\`, `\t`, `\n`; an empty label
//! field means no label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::bench::Workload;
use crate::error::RuntimeError;
use crate::program::ThreadId;
use crate::runtime::ExecutionResult;
use crate::store::Value;

/// One committed segment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub ordinal: u64,
    pub tid: ThreadId,
    pub seg_ordinal: u64,
    pub label: Option<String>,
}

/// What is needed to rebuild the initial state of a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub program: String,
    pub params: BTreeMap<String, i64>,
    pub seed: u64,
    pub initial: Vec<Value>,
    pub threads: usize,
}

/// The recorded result of the run that produced a trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub backend: String,
    pub workers: usize,
    pub final_shared: Vec<Value>,
    pub stuck: bool,
    pub waiting: Vec<ThreadId>,
    pub log_sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub manifest: Manifest,
    pub records: Vec<TraceRecord>,
    pub summary: Option<RunSummary>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("trace manifest does not match the workload: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

impl Trace {
    /// Checks the structural invariants: dense ordinals and gap-free
    /// per-thread segment ordinals starting at zero.
    pub fn validate(&self) -> Result<(), String> {
        let mut next_seg: BTreeMap<ThreadId, u64> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.ordinal != i as u64 {
                return Err(format!("record {i} has ordinal {}", r.ordinal));
            }
            let expected = next_seg.entry(r.tid).or_insert(0);
            if r.seg_ordinal != *expected {
                return Err(format!(
                    "record {i}: thread {} segment {} follows {}",
                    r.tid.0, r.seg_ordinal, expected
                ));
            }
            *expected += 1;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.manifest;
        out.push_str("ocm-trace\t1\n");
        writeln!(out, "program\t{}", m.program).unwrap();
        for (k, v) in &m.params {
            writeln!(out, "param\t{k}\t{v}").unwrap();
        }
        writeln!(out, "seed\t{}", m.seed).unwrap();
        writeln!(out, "initial\t{}", join(&m.initial)).unwrap();
        writeln!(out, "threads\t{}", m.threads).unwrap();
        if let Some(s) = &self.summary {
            writeln!(out, "backend\t{}", s.backend).unwrap();
            writeln!(out, "workers\t{}", s.workers).unwrap();
            writeln!(out, "final\t{}", join(&s.final_shared)).unwrap();
            writeln!(out, "stuck\t{}", s.stuck).unwrap();
            let waiting: Vec<u32> = s.waiting.iter().map(|t| t.0).collect();
            writeln!(out, "waiting\t{}", join(&waiting)).unwrap();
            writeln!(out, "log-sha256\t{}", s.log_sha256).unwrap();
        }
        writeln!(out, "records\t{}", self.records.len()).unwrap();
        for r in &self.records {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.ordinal,
                r.tid.0,
                r.seg_ordinal,
                r.label.as_deref().map(escape).unwrap_or_default()
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        Parser::new(text).parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
        Trace::parse(&std::fs::read_to_string(path)?)
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn escape(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(field: &str) -> Result<String, String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => return Err(format!("bad escape sequence \\{}", other.unwrap_or(' '))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last_line: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text.lines().enumerate().peekable(),
            last_line: 0,
        }
    }

    fn err(line: usize, message: impl Into<String>) -> TraceError {
        TraceError::Parse {
            line,
            message: message.into(),
        }
    }

    /// Next line as (1-based line number, fields).
    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>), TraceError> {
        match self.lines.next() {
            Some((i, line)) => {
                self.last_line = i + 1;
                Ok((i + 1, line.split('\t').collect()))
            }
            None => Err(Self::err(
                self.last_line + 1,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }

    fn peek_key(&mut self) -> Option<&'a str> {
        self.lines.peek().map(|(_, l)| l.split('\t').next().unwrap_or(""))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), TraceError> {
        let (n, fields) = self.next(key)?;
        if fields[0] != key {
            return Err(Self::err(n, format!("expected `{key}`, found `{}`", fields[0])));
        }
        Ok((n, fields[1..].to_vec()))
    }

    fn single(&mut self, key: &str) -> Result<(usize, &'a str), TraceError> {
        let (n, fields) = self.keyed(key)?;
        if fields.len() != 1 {
            return Err(Self::err(n, format!("`{key}` takes exactly one value")));
        }
        Ok((n, fields[0]))
    }

    fn number<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, TraceError> {
        s.parse()
            .map_err(|_| Self::err(line, format!("`{s}` is not a valid number")))
    }

    fn list<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>, TraceError> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| Self::number(line, x)).collect()
    }

    fn parse(mut self) -> Result<Trace, TraceError> {
        let (n, version) = self.single("ocm-trace")?;
        if version != "1" {
            return Err(Self::err(n, format!("unsupported trace version {version}")));
        }
        let (_, program) = self.single("program")?;
        let mut params = BTreeMap::new();
        while self.peek_key() == Some("param") {
            let (n, fields) = self.keyed("param")?;
            if fields.len() != 2 {
                return Err(Self::err(n, "`param` takes a key and a value"));
            }
            params.insert(fields[0].to_string(), Self::number(n, fields[1])?);
        }
        let (n, seed) = self.single("seed")?;
        let seed = Self::number(n, seed)?;
        let (n, initial) = self.single("initial")?;
        let initial = Self::list(n, initial)?;
        let (n, threads) = self.single("threads")?;
        let threads = Self::number(n, threads)?;
        let manifest = Manifest {
            program: program.to_string(),
            params,
            seed,
            initial,
            threads,
        };

        let summary = if self.peek_key() == Some("backend") {
            let (_, backend) = self.single("backend")?;
            let (n, workers) = self.single("workers")?;
            let workers = Self::number(n, workers)?;
            let (n, final_shared) = self.single("final")?;
            let final_shared = Self::list(n, final_shared)?;
            let (n, stuck) = self.single("stuck")?;
            let stuck = match stuck {
                "true" => true,
                "false" => false,
                other => return Err(Self::err(n, format!("`{other}` is not a boolean"))),
            };
            let (n, waiting) = self.single("waiting")?;
            let waiting = Self::list::<u32>(n, waiting)?.into_iter().map(ThreadId).collect();
            let (_, digest) = self.single("log-sha256")?;
            Some(RunSummary {
                backend: backend.to_string(),
                workers,
                final_shared,
                stuck,
                waiting,
                log_sha256: digest.to_string(),
            })
        } else {
            None
        };

        let (n, count) = self.single("records")?;
        let count: usize = Self::number(n, count)?;
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let (n, fields) = self.next("a trace record")?;
            if fields.len() != 4 {
                return Err(Self::err(n, "a record has four tab-separated fields"));
            }
            let ordinal: u64 = Self::number(n, fields[0])?;
            if ordinal != i as u64 {
                return Err(Self::err(n, format!("ordinal {ordinal} out of sequence, expected {i}")));
            }
            let label = match fields[3] {
                "" => None,
                l => Some(unescape(l).map_err(|m| Self::err(n, m))?),
            };
            records.push(TraceRecord {
                ordinal,
                tid: ThreadId(Self::number(n, fields[1])?),
                seg_ordinal: Self::number(n, fields[2])?,
                label,
            });
        }
        if let Some((i, _)) = self.lines.next() {
            return Err(Self::err(i + 1, "trailing content after the last record"));
        }
        let trace = Trace {
            manifest,
            records,
            summary,
        };
        trace.validate().map_err(|m| Self::err(self.last_line, m))?;
        Ok(trace)
    }
}

/// Display name for a thread: A, B, ... then T26, T27, ...
pub fn thread_name(tid: ThreadId) -> String {
    if tid.0 < 26 {
        char::from(b'A' + tid.0 as u8).to_string()
    } else {
        format!("T{}", tid.0)
    }
}

/// Human-readable rendering: one `X->Y (at X's `label')` line per record,
/// where X ran the segment and Y runs next. A stuck run ends with a
/// deadlock marker.
pub fn render(trace: &Trace) -> String {
    let mut out = String::new();
    let summary = trace.summary.as_ref();
    for (i, r) in trace.records.iter().enumerate() {
        let from = thread_name(r.tid);
        let to = match trace.records.get(i + 1) {
            Some(next) => thread_name(next.tid),
            None => match summary.filter(|s| s.stuck) {
                Some(s) => next_waiting(r.tid, &s.waiting).map(thread_name).unwrap_or(from.clone()),
                None => "end".to_string(),
            },
        };
        let at = match &r.label {
            Some(label) => format!("`{label}'"),
            None => format!("segment {}", r.seg_ordinal),
        };
        writeln!(out, "{from}->{to} (at {from}'s {at})").unwrap();
    }
    if summary.is_some_and(|s| s.stuck) {
        out.push_str("... deadlock ...\n");
    }
    out
}

/// The waiting thread a round-robin scheduler would try after `from`.
fn next_waiting(from: ThreadId, waiting: &[ThreadId]) -> Option<ThreadId> {
    waiting
        .iter()
        .copied()
        .filter(|&t| t > from)
        .min()
        .or_else(|| waiting.iter().copied().filter(|&t| t != from).min())
}

/// Replays `trace` serially under `cm`, following its commit order. The
/// workload must be the one the trace was recorded from.
pub fn replay(trace: &Trace, workload: &Workload) -> Result<ExecutionResult, TraceError> {
    replay_monitored(trace, workload, |_, _| {})
}

/// [`replay`] with a callback after every commit, given the ordinal and the
/// committed shared state.
pub fn replay_monitored(
    trace: &Trace,
    workload: &Workload,
    monitor: impl FnMut(u64, &[Value]),
) -> Result<ExecutionResult, TraceError> {
    let m = &trace.manifest;
    if m.program != workload.name {
        return Err(TraceError::ManifestMismatch(format!(
            "trace is for `{}`, workload is `{}`",
            m.program, workload.name
        )));
    }
    if m.initial != workload.initial_shared {
        return Err(TraceError::ManifestMismatch("initial shared values differ".into()));
    }
    if m.threads != workload.threads.len() {
        return Err(TraceError::ManifestMismatch(format!(
            "trace starts {} threads, workload starts {}",
            m.threads,
            workload.threads.len()
        )));
    }
    let mut rt = workload.runtime(crate::BackendKind::Cm);
    Ok(rt.replay(&trace.records, m.seed, monitor)?)
}
