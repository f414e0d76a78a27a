use std::path::PathBuf;

use ato::config::{load_config, load_tracking_config, parse_config, parse_tracking_config, ConfigError, DemandSection};
use ato::harness::{
    convergence_sweep, optimality_gap, read_experiment_csv, run_experiment, thread_pool, write_experiment_csv, write_sweep_csv,
    HarnessError,
};
use ato::stats::estimate_long_run_cost;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SMALL: &str = r#"
[system]
bom = [[1, 1], [1, 0]]
lead_times = [1.0, 0.5]
holding = [1.0, 0.1]
backlog = [0.4, 0.5]
cost_scale = 10.0

[demand]
kind = "poisson"
rates = [2.0, 2.0]

[sim]
horizon = 300.0
replications = 4
seed = 5
audit_every = 50
record_timings = false

[[cases]]
label = "a"
orientation = "comp0-long"

[[cases]]
label = "b"
orientation = "comp0-short"
lead_times = [0.5, 1.0]
"#;

#[test]
fn shipped_n_system_config_has_the_caption_parameters() {
    let cfg = load_config(&configs().join("n_system_table3.cfg")).unwrap();
    match &cfg.demand_section {
        DemandSection::Poisson { rates } => assert_eq!(rates, &vec![5.0, 5.0]),
        other => panic!("unexpected demand {other:?}"),
    }
    assert_eq!(cfg.system.holding[0], 1.0);
    assert_eq!(cfg.system.cost_scale, 10.0);
    assert_eq!(cfg.cases.len(), 6);
    for case in &cfg.cases {
        assert_eq!(case.system.lead_times(), &[1.0, 1.5]);
    }
    let first = &cfg.cases[0].system;
    let h0 = (0..2).find(|&j| first.bom_row(j).iter().all(|&a| a == 1)).map(|j| first.holding()[j]).unwrap();
    assert_eq!(h0, 10.0);
}

#[test]
fn every_shipped_config_parses() {
    for name in ["n_system_table3.cfg", "w_system_table1.cfg", "w_system_case27.cfg", "m_system_regions.cfg"] {
        let cfg = load_config(&configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!cfg.cases.is_empty());
    }
    let t = load_tracking_config(&configs().join("tracking_default.cfg")).unwrap();
    assert_eq!(t.lead_times, vec![10.0, 40.0, 160.0]);
    assert_eq!(t.replications, 200);
}

#[test]
fn missing_bom_names_the_field() {
    let text = SMALL.replace("bom = [[1, 1], [1, 0]]\n", "");
    let err = parse_config(&text).unwrap_err();
    assert!(matches!(err, ConfigError::Parse(_)));
    assert!(err.to_string().contains("bom"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = SMALL.replace("seed = 5", "seed = 5\ncolour = 3");
    let err = parse_config(&text).unwrap_err();
    assert!(err.to_string().contains("colour"), "{err}");
}

#[test]
fn negative_holding_cost_fails_system_validation() {
    let text = SMALL.replace("holding = [1.0, 0.1]", "holding = [-1.0, 0.1]");
    match parse_config(&text).unwrap_err() {
        ConfigError::Invalid { field, .. } => assert_eq!(field, "system"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn wrong_lead_time_count_names_the_case() {
    let text = SMALL.replace("lead_times = [0.5, 1.0]", "lead_times = [0.5]");
    let err = parse_config(&text).unwrap_err();
    assert!(err.to_string().starts_with("cases[1].lead_times"), "{err}");
}

#[test]
fn experiment_csv_round_trips_and_is_deterministic() {
    let cfg = parse_config(SMALL).unwrap();
    let a = run_experiment(&cfg, Some(2));
    assert!(a.error.is_none());
    assert_eq!(a.rows.len(), 2);
    for row in &a.rows {
        let r = row.result.as_ref().unwrap();
        assert_eq!(r.gap, ato::harness::sig6(optimality_gap(r.lower_bound, r.sim_mean)));
        assert!(r.ci95.0 <= r.sim_mean && r.sim_mean <= r.ci95.1);
    }
    let mut bytes_a = Vec::new();
    write_experiment_csv(&a.rows, &mut bytes_a).unwrap();
    assert_eq!(read_experiment_csv(&bytes_a[..]).unwrap(), a.rows);

    let b = run_experiment(&cfg, Some(3));
    let mut bytes_b = Vec::new();
    write_experiment_csv(&b.rows, &mut bytes_b).unwrap();
    assert_eq!(bytes_a, bytes_b);

    let text = String::from_utf8(bytes_a).unwrap();
    assert!(text.starts_with("case,orientation,L1,L2,lower_bound,sim_mean,ci95_lo,ci95_hi,ci999_lo,ci999_hi,gap,bound_in_ci95,bound_in_ci999,sp_seconds,sim_seconds\n"));
}

#[test]
fn zero_demand_case_has_zero_bound_cost_and_gap() {
    let text = SMALL.replace("rates = [2.0, 2.0]", "rates = [0.0, 0.0]");
    let cfg = parse_config(&text).unwrap();
    let report = run_experiment(&cfg, Some(1));
    assert!(report.error.is_none());
    for row in &report.rows {
        let r = row.result.as_ref().unwrap();
        assert_eq!((r.lower_bound, r.sim_mean, r.gap), (0.0, 0.0, 0.0));
    }
}

#[test]
fn a_failing_case_leaves_a_marker_row() {
    let text = SMALL.replace("[sim]", "[sp]\nbackend = \"tree\"\nleaf_budget = 2.0\n\n[sim]");
    let cfg = parse_config(&text).unwrap();
    let report = run_experiment(&cfg, Some(1));
    let err = report.error.expect("leaf budget exceeded");
    assert!(matches!(err, HarnessError::Solver { .. }));
    assert_eq!(err.exit_code(), 3);
    assert_eq!(report.rows.len(), 1);
    let mut bytes = Vec::new();
    write_experiment_csv(&report.rows, &mut bytes).unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("FAILED"));
    let back = read_experiment_csv(&bytes[..]).unwrap();
    assert_eq!(back, report.rows);
    assert!(back[0].result.is_none());
}

#[test]
fn config_errors_map_to_exit_code_two() {
    let err: HarnessError = parse_config("[system]\n").unwrap_err().into();
    assert_eq!(err.exit_code(), 2);
}

const TRACKING: &str = r#"
[demand]
kind = "poisson"
rates = [1.0]

[tracking]
lead_times = [10.0, 40.0]
replications = 20
weights = [1.0]
w0_scale = -1.0

[tracking.target]
kind = "constant"
value = 0.0
"#;

#[test]
fn zero_gap_tracking_spec_gives_an_all_zero_table() {
    let cfg = parse_tracking_config(TRACKING).unwrap();
    let pool = thread_pool(Some(2)).unwrap();
    let rows = convergence_sweep(&cfg.spec, &cfg.lead_times, cfg.replications, 0, &pool).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!((r.mean_sup_gap, r.ci_low, r.ci_high), (0.0, 0.0, 0.0));
    }
    let single = convergence_sweep(&cfg.spec, &[10.0], 5, 0, &pool).unwrap();
    assert_eq!(single.len(), 1);
    let mut bytes = Vec::new();
    write_sweep_csv(&single, &mut bytes).unwrap();
    assert_eq!(String::from_utf8(bytes).unwrap(), "L,mean_sup_gap,ci_low,ci_high,reps\n10,0,0,0,5\n");
}

#[test]
fn tracking_config_rejects_bad_lags_and_zero_drift() {
    let bad_lag = TRACKING.replace("weights = [1.0]", "weights = [1.0]\nlags = [1.5]");
    assert!(parse_tracking_config(&bad_lag).unwrap_err().to_string().contains("lag"));
    let no_drift = TRACKING.replace("rates = [1.0]", "rates = [0.0]");
    assert!(parse_tracking_config(&no_drift).is_err());
}

#[test]
fn student_t_intervals_cover_at_the_nominal_rate() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::new(3.0, 2.0).unwrap();
    let trials = 1000;
    let mut covered = 0;
    for _ in 0..trials {
        let xs: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
        let e = estimate_long_run_cost(&xs).unwrap();
        if e.ci95.0 <= 3.0 && 3.0 <= e.ci95.1 {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    // Binomial sd at 1000 trials is about 0.007.
    assert!((0.93..=0.97).contains(&rate), "coverage {rate}");
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("small.cfg");
    std::fs::write(&good, SMALL).unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, SMALL.replace("holding = [1.0, 0.1]", "holding = [-1.0, 0.1]")).unwrap();
    let out = dir.path().join("bounds.csv");
    let run = |args: &[&str]| std::process::Command::new(env!("CARGO_BIN_EXE_ato")).args(args).output().unwrap();

    let ok = run(&["lower-bound", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let sim_out = dir.path().join("sim.csv");
    let sim = run(&["simulate", "--config", good.to_str().unwrap(), "--seed", "9", "--threads", "2", "--out", sim_out.to_str().unwrap()]);
    assert_eq!(sim.status.code(), Some(0));
    let csv = std::fs::read_to_string(&sim_out).unwrap();
    assert!(csv.starts_with("case,replication,seed,avg_cost,holding,backlog,events\n"));
    assert!(csv.lines().nth(1).unwrap().starts_with("a,0,9,"));

    let failed = run(&["experiment", "--config", bad.to_str().unwrap()]);
    assert_eq!(failed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("system"));
}
