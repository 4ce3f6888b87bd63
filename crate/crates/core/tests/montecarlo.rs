use tbauc::inference::{AucKind, Direction, TestResult};
use tbauc::montecarlo::{
    aggregate, emit_tables, load_replications, run_study, ReplicationResult, StudyConfig, PARAM_NAMES,
};
use tbauc::rng::replication_seed;
use tbauc::Error;

fn small_study(scenario: u8) -> StudyConfig {
    let mut cfg = StudyConfig::new(scenario).unwrap();
    cfg.design.n = 60;
    cfg.design.target_events = 30;
    cfg.design.cens_rate = 0.002;
    cfg.design.gamma_x = -0.9;
    cfg.replications = 4;
    cfg.sampler.q_total = 150;
    cfg.sampler.warmup = Some(100);
    cfg.master_seed = 77;
    cfg
}

fn fake(index: usize, reject: bool, estimate: f64, failed: bool) -> ReplicationResult {
    let t = |kind| TestResult {
        kind,
        theta_hat: -1.0,
        se: 1.0,
        w: -1.0,
        p_value: 0.1,
        reject,
        alpha: 0.025,
        direction: Direction::Left,
        degenerate: false,
    };
    ReplicationResult {
        index,
        seed: index as u64,
        tests: (!failed).then(|| [t(AucKind::Tb), t(AucKind::S), t(AucKind::Total)]),
        estimates: (!failed).then_some([estimate; 9]),
        divergences: 0,
        acceptance: 0.8,
        n_events: 10,
        seconds: 0.0,
        error: failed.then(|| "sampler gave up".to_string()),
    }
}

#[test]
fn report_does_not_depend_on_worker_count() {
    let cfg = small_study(1);
    let one = run_study(&cfg, 1, None).unwrap();
    let three = run_study(&cfg, 3, None).unwrap();
    let strip = |mut r: tbauc::montecarlo::StudyReport| {
        r.replications.iter_mut().for_each(|x| x.seconds = 0.0);
        r
    };
    assert_eq!(strip(one), strip(three));
}

#[test]
fn replication_seeds_are_distinct() {
    let seeds: std::collections::HashSet<u64> = (0..10_000).map(|r| replication_seed(5, r)).collect();
    assert_eq!(seeds.len(), 10_000);
}

#[test]
fn aggregation_arithmetic() {
    let cfg = StudyConfig::new(4).unwrap();
    let reps = vec![
        fake(0, true, 1.0, false),
        fake(1, false, 3.0, false),
        fake(2, false, 2.0, false),
    ];
    let rep = aggregate(&cfg, reps).unwrap();
    assert!((rep.rejection_rates[0] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(rep.param_table.len(), 9);
    for (row, name) in rep.param_table.iter().zip(PARAM_NAMES) {
        assert_eq!(row.parameter, name);
        assert!((row.estimate - 2.0).abs() < 1e-15);
        assert!((row.bias - (row.estimate - row.truth)).abs() < 1e-12);
        assert!(row.mse >= row.bias * row.bias - 1e-12);
    }
}

#[test]
fn failures_excluded_up_to_five_percent() {
    let cfg = StudyConfig::new(4).unwrap();
    let mut reps: Vec<ReplicationResult> = (0..40).map(|r| fake(r, false, 0.0, false)).collect();
    reps[7] = fake(7, false, 0.0, true);
    reps[9] = fake(9, false, 0.0, true);
    let rep = aggregate(&cfg, reps.clone()).unwrap();
    assert_eq!((rep.completed, rep.failed), (38, 2));
    reps[11] = fake(11, false, 0.0, true);
    assert!(matches!(
        aggregate(&cfg, reps),
        Err(Error::TooManyFailures { failed: 3, .. })
    ));
}

#[test]
fn tables_have_expected_shape_and_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_study(4);
    let rep_dir = dir.path().join("reps");
    let report = run_study(&cfg, 2, Some(&rep_dir)).unwrap();
    let loaded = load_replications(&rep_dir).unwrap();
    assert_eq!(loaded, report.replications);

    emit_tables(std::slice::from_ref(&report), dir.path()).unwrap();
    let t3 = std::fs::read_to_string(dir.path().join("table3.csv")).unwrap();
    let lines: Vec<&str> = t3.lines().collect();
    assert_eq!(lines[0], "test,scenario4");
    assert_eq!(lines.len(), 4);
    let ta = std::fs::read_to_string(dir.path().join("tableA.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(ta.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let truth: f64 = row[2].parse().unwrap();
        let est: f64 = row[3].parse().unwrap();
        let bias: f64 = row[4].parse().unwrap();
        assert!((bias - (est - truth)).abs() < 1e-10);
    }
}

#[test]
fn invalid_study_rejected() {
    let mut cfg = StudyConfig::new(2).unwrap();
    cfg.replications = 0;
    assert!(run_study(&cfg, 1, None).is_err());
    assert!(StudyConfig::new(5).is_err());
    let cfg = small_study(2);
    assert!(run_study(&cfg, 0, None).is_err());
}
