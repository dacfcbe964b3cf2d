use ocm_core::bench::{self, Bench, BenchConfig, BenchError, BenchResult, Params, Workload};
use ocm_core::{BackendKind, RunConfig};

fn params(pairs: &[(&str, i64)]) -> Params {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

fn workload(name: &str, pairs: &[(&str, i64)]) -> Workload {
    bench::build(name, &params(pairs)).unwrap()
}

#[test]
fn two_philosophers_one_meal() {
    let w = workload("phils-invisible", &[("n", 2), ("iters", 1)]);
    for kind in BackendKind::ALL {
        let workers = if kind == BackendKind::Cm { 1 } else { 2 };
        let r = w.run(kind, &RunConfig::new(workers)).unwrap();
        assert_eq!(r.commits, 4, "{kind}");
        assert_eq!(r.final_shared, vec![0, 0], "{kind}");
        let mut log = r.log.clone();
        log.sort();
        assert_eq!(log, ["phil 0 eats 0", "phil 1 eats 0"], "{kind}");
    }
}

#[test]
fn every_philosopher_eats_every_meal() {
    let (n, iters) = (7, 5);
    let w = workload("phils-visible", &[("n", n), ("iters", iters)]);
    let r = w.run(BackendKind::TwoPhase, &RunConfig::new(4).perturb(1)).unwrap();
    for id in 0..n {
        for meal in 0..iters {
            let line = format!("phil {id} eats {meal}");
            assert_eq!(r.log.iter().filter(|l| **l == line).count(), 1, "{line}");
        }
    }
    assert!(w.violations(&r).is_empty());
}

#[test]
fn ants_terminate_on_every_backend() {
    for kind in BackendKind::ALL {
        for seed in 0..3 {
            let w = workload("ants", &[("layout_seed", seed + 1)]);
            let workers = if kind == BackendKind::Cm { 1 } else { 4 };
            let r = w.run(kind, &RunConfig::new(workers).seed(seed as u64)).unwrap();
            assert!(!r.stuck, "{kind}");
            let (food, alive) = (r.final_shared[64], r.final_shared[65]);
            assert!(food == 0 || alive == 0, "{kind}: food {food} alive {alive}");
            assert!(r.log.iter().any(|l| l.starts_with("snapshot 0 ")));
            assert!(w.violations(&r).is_empty(), "{kind}");
        }
    }
}

#[test]
fn registry_rejects_bad_input() {
    assert!(matches!(
        bench::build("nope", &Params::new()),
        Err(BenchError::UnknownProgram(_))
    ));
    assert!(matches!(
        bench::build("banking", &params(&[("bogus", 1)])),
        Err(BenchError::UnknownParam { .. })
    ));
    assert!(matches!(
        bench::build("phils-invisible", &params(&[("n", 1)])),
        Err(BenchError::InvalidParam { .. })
    ));
    assert!(matches!(
        bench::build(
            "ants",
            &params(&[("width", 2), ("height", 2), ("ants", 4), ("food", 1)])
        ),
        Err(BenchError::InvalidParam { .. })
    ));
}

#[test]
fn every_registered_program_builds_with_defaults() {
    for info in bench::PROGRAMS {
        let w = bench::build(info.name, &Params::new()).unwrap();
        assert_eq!(w.name, info.name);
        assert!(!w.threads.is_empty());
    }
}

#[test]
fn measurements_produce_csv_rows() {
    let mut harness = Bench::new();
    let p = params(&[("n", 5), ("iters", 4), ("delay_us", 200)]);
    let mut rows = vec![BenchResult::csv_header().to_string()];
    for (backend, workers) in [
        (BackendKind::Cm, 1),
        (BackendKind::Stm, 2),
        (BackendKind::GlobalLazy, 2),
    ] {
        let config = BenchConfig {
            program: "phils-invisible".into(),
            backend,
            workers,
            params: p.clone(),
            seed: 3,
        };
        let r = harness.measure(&config).unwrap();
        assert_eq!(r.commits, 40);
        assert!(r.violations.is_empty());
        assert!(r.speedup > 0.0);
        rows.push(r.csv_row());
    }
    assert_eq!(
        rows[0],
        "program,backend,workers,n,iters,wall_ms,commits,aborts,speedup,violations"
    );
    for row in &rows[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 10, "{row}");
        assert_eq!(fields[0], "phils-invisible");
        assert_eq!((fields[3], fields[4], fields[6], fields[9]), ("5", "4", "40", "0"));
        fields[5].parse::<f64>().unwrap();
        fields[8].parse::<f64>().unwrap();
    }
    assert!(rows[1].starts_with("phils-invisible,cm,1,"));
}
