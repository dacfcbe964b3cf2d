use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ocm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn record(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name).to_string_lossy().into_owned();
    let mut all = vec!["run"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--trace-out", &path]);
    let out = ocm(&all);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn run_exit_codes() {
    let ok = ocm(&["run", "--program", "banking", "--backend", "stm", "--workers", "4"]);
    assert_eq!(code(&ok), 0);
    let text = stdout(&ok);
    assert!(text.contains("final: 0,5,15") || text.contains("final: 0,10,10") || text.contains("final: 5,5,10"));
    assert!(text.contains("violations: 0"));

    assert_eq!(
        code(&ocm(&[
            "run",
            "--program",
            "banking",
            "--backend",
            "cm",
            "--workers",
            "4"
        ])),
        2
    );
    assert_eq!(code(&ocm(&["run", "--program", "nope", "--backend", "cm"])), 2);
    assert_eq!(code(&ocm(&["run", "--program", "banking", "--backend", "tl2"])), 2);
    assert_eq!(
        code(&ocm(&[
            "run",
            "--program",
            "banking",
            "--backend",
            "cm",
            "--param",
            "src"
        ])),
        2
    );
    assert_eq!(
        code(&ocm(&[
            "run",
            "--program",
            "banking",
            "--backend",
            "cm",
            "--param",
            "zzz=1"
        ])),
        2
    );
}

#[test]
fn cm_output_is_deterministic() {
    let args = ["run", "--program", "ants", "--backend", "cm", "--seed", "3"];
    let (a, b) = (ocm(&args), ocm(&args));
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn stuck_runs_report_waiting_threads() {
    let out = ocm(&[
        "run",
        "--program",
        "deadlock-demo",
        "--backend",
        "2pl",
        "--workers",
        "2",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    if text.contains("stuck: true") {
        assert!(text.contains("waiting: A,B"), "{text}");
    }
}

#[test]
fn render_deadlock_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = record(
        dir.path(),
        "demo.trace",
        &["--program", "deadlock-demo", "--backend", "cm"],
    );
    let out = ocm(&["render-trace", "--trace", &path]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        stdout(&out),
        "A->B (at A's `yieldUntil (a == 0);')\n\
         B->A (at B's `yieldUntil (b == 0);')\n\
         A->B (at A's `yieldUntil (b == 0);')\n\
         B->A (at B's `yieldUntil (a == 0);')\n\
         ... deadlock ...\n"
    );
}

#[test]
fn replay_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--program",
        "phils-invisible",
        "--n",
        "5",
        "--iters",
        "3",
        "--backend",
        "stm",
        "--workers",
        "3",
    ];
    let path = record(dir.path(), "run.trace", &args);
    let ok = ocm(&["replay", "--trace", &path]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout(&ok).starts_with("replay matches: 30 commits"));

    let text = fs::read_to_string(&path).unwrap();
    let write = |name: &str, body: String| {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p.to_string_lossy().into_owned()
    };

    let lines: Vec<&str> = text.lines().collect();
    let last = lines.len() - 1;
    let mut bad_ordinal = lines.clone();
    let renumbered = lines[last].replacen("29\t", "31\t", 1);
    bad_ordinal[last] = &renumbered;
    let p = write("ordinal.trace", bad_ordinal.join("\n") + "\n");
    assert_eq!(code(&ocm(&["replay", "--trace", &p])), 2);

    let p = write(
        "manifest.trace",
        text.replace("initial\t0,0,0,0,0", "initial\t0,0,0,0,1"),
    );
    assert_eq!(code(&ocm(&["replay", "--trace", &p])), 2);

    let p = write("params.trace", text.replace("param\tn\t5", "param\tn\t6"));
    assert_eq!(code(&ocm(&["replay", "--trace", &p])), 2);

    let p = write("summary.trace", text.replace("final\t0,0,0,0,0", "final\t0,0,0,0,9"));
    assert_eq!(code(&ocm(&["replay", "--trace", &p])), 1);

    assert_eq!(code(&ocm(&["replay", "--trace", "/nonexistent/trace"])), 2);
}

#[test]
fn replay_detects_a_reordered_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--program", "banking", "--param", "src=10", "--backend", "cm"];
    let path = record(dir.path(), "bank.trace", &args);
    let text = fs::read_to_string(&path).unwrap();
    let swapped = text
        .replace("\n0\t0\t0\t", "\n0\t1\t0\t")
        .replace("\n1\t1\t0\t", "\n1\t0\t0\t");
    assert_ne!(swapped, text);
    let p = dir.path().join("swapped.trace");
    fs::write(&p, swapped).unwrap();
    assert_eq!(code(&ocm(&["replay", "--trace", p.to_str().unwrap()])), 1);
}

#[test]
fn check_exit_codes() {
    let ok = ocm(&["check", "--program", "banking", "--backend", "stm", "--runs", "20"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));

    let racy = ocm(&["check", "--program", "banking", "--backend", "racy", "--runs", "200"]);
    assert_eq!(code(&racy), 1);

    let big = ocm(&[
        "check",
        "--program",
        "phils-visible",
        "--backend",
        "stm",
        "--max-states",
        "1000",
    ]);
    assert_eq!(code(&big), 2);
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let out = ocm(&[
        "bench",
        "--program",
        "phils-invisible",
        "--n",
        "4",
        "--iters",
        "2",
        "--delay-us",
        "100",
        "--matrix",
        "cm,stm:1,2",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(
        rows[0],
        "program,backend,workers,n,iters,wall_ms,commits,aborts,speedup,violations"
    );
    assert_eq!(rows.len(), 5);
    assert!(rows[1..]
        .iter()
        .all(|r| r.starts_with("phils-invisible,") && r.ends_with(",0")));

    let bad = ocm(&[
        "bench",
        "--program",
        "banking",
        "--matrix",
        "stm:0",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn programs_lists_the_registry() {
    let out = ocm(&["programs"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for name in [
        "banking",
        "phils-invisible",
        "phils-visible",
        "ants",
        "semaphore",
        "deadlock-demo",
    ] {
        assert!(text.contains(name), "{name}");
    }
}
