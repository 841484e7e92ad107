use std::fs;
use std::path::{Path, PathBuf};

use onebit::bounds::{check_concentration, BoundSide, ConcentrationInput};
use onebit::harness::{
    emit_replicated, emit_sweep, read_report_csv, run_replicated, run_single, run_sweep, ExperimentConfig,
    ReportRow, REPORT_COLUMNS,
};
use onebit::metrics::c_kappa;

/// Small enough to run in well under a second per replication.
fn small() -> ExperimentConfig {
    let text = "\
model.d1 = 4
model.d2 = 3
model.r = 1
model.n = 400
mala.n_steps = 2000
run.replications = 4
run.master_seed = 5
sweep.n_grid =
sweep.r_grid =
";
    ExperimentConfig::parse(text, Path::new("small.cfg")).unwrap()
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/small_report.csv")
}

#[test]
fn report_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_replicated(&small()).unwrap();
    emit_replicated(&result, dir.path()).unwrap();
    let produced = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    if std::env::var_os("ONEBIT_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        fs::write(golden_path(), &produced).unwrap();
    }
    let golden = fs::read_to_string(golden_path()).expect("golden file (set ONEBIT_UPDATE_GOLDEN=1 to create)");
    assert_eq!(produced, golden);
}

#[test]
fn header_is_locked() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_replicated(&ExperimentConfig { replications: 1, ..small() }).unwrap();
    emit_replicated(&result, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "config_digest,seed,n,d1,d2,r,alpha,prior,epsilon_n,frob_sq_mean_est,post_avg_frob_sq,\
         post_avg_hellinger,post_avg_renyi,thr_renyi,thr_hellinger,thr_frobenius,prob_floor,accept_rate"
    );
    assert_eq!(header.split(',').collect::<Vec<_>>(), REPORT_COLUMNS);
}

#[test]
fn re_emission_is_byte_identical() {
    let result = run_replicated(&small()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_replicated(&result, a.path()).unwrap();
    emit_replicated(&result, b.path()).unwrap();
    emit_replicated(&result, b.path()).unwrap();
    for f in ["report.csv", "summary.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn single_run_is_deterministic() {
    let cfg = small();
    assert_eq!(run_single(&cfg).unwrap(), run_single(&cfg).unwrap());
}

#[test]
fn worker_count_does_not_change_results() {
    let serial = run_replicated(&small()).unwrap();
    let parallel = run_replicated(&ExperimentConfig { workers: 3, ..small() }).unwrap();
    assert_eq!(serial.runs, parallel.runs);
    assert_eq!(serial.checks, parallel.checks);
}

#[test]
fn one_replication_gives_a_zero_one_fraction() {
    let result = run_replicated(&ExperimentConfig { replications: 1, ..small() }).unwrap();
    for c in &result.checks {
        assert!(c.empirical_fraction == 0.0 || c.empirical_fraction == 1.0);
    }
}

#[test]
fn seeds_change_runs_but_not_the_digest() {
    let a = run_replicated(&ExperimentConfig { replications: 2, ..small() }).unwrap();
    let b = run_replicated(&ExperimentConfig { replications: 2, master_seed: 6, ..small() }).unwrap();
    assert_eq!(a.config_digest, b.config_digest);
    assert_ne!(a.runs[0].seed, b.runs[0].seed);
    assert_ne!(a.runs[0].post_avg_frob_sq, b.runs[0].post_avg_frob_sq);
}

#[test]
fn checks_agree_with_direct_bookkeeping() {
    let cfg = small();
    let result = run_replicated(&cfg).unwrap();
    let kappa = result.runs.iter().map(|r| r.kappa).fold(0.0, f64::max);
    let first = &result.runs[0];
    for check in &result.checks {
        let values: Vec<f64> = result
            .runs
            .iter()
            .map(|r| match check.side {
                BoundSide::RenyiTheorem => r.post_avg_renyi.estimate,
                BoundSide::HellingerCorollary => r.post_avg_hellinger.estimate,
                BoundSide::FrobeniusTheorem => r.post_avg_frob_sq.estimate,
            })
            .collect();
        let input = ConcentrationInput {
            n: cfg.n,
            epsilon_n: first.epsilon_n,
            alpha: cfg.alpha,
            side: check.side,
            c1: Some(first.c1),
            c_kappa: Some(c_kappa(kappa).unwrap()),
        };
        assert_eq!(&check_concentration(&values, &input).unwrap(), check);
    }
}

#[test]
fn sweep_without_rank_grid_fits_only_n() {
    let cfg = ExperimentConfig { replications: 2, ..small() };
    let report = run_sweep(&cfg, &[200, 400, 800, 1600], &[]).unwrap();
    assert_eq!(report.points.len(), 4);
    assert!(report.slopes.contains_key("post_avg_frob_sq_vs_n"));
    assert!(!report.slopes.contains_key("post_avg_frob_sq_vs_r"));

    let dir = tempfile::tempdir().unwrap();
    emit_sweep(&report, dir.path()).unwrap();
    let rows: Vec<ReportRow> = read_report_csv(fs::File::open(dir.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["slopes"]["post_avg_frob_sq_vs_n"]["slope"].is_f64());
}

#[test]
fn sweep_with_rank_grid_adds_points_at_base_n() {
    let cfg = ExperimentConfig { replications: 1, ..small() };
    let report = run_sweep(&cfg, &[100, 200, 400, 800], &[1, 2]).unwrap();
    // four n points at r = 1, plus r = 2 at the base n
    assert_eq!(report.points.len(), 5);
    assert!(report.points.iter().any(|p| p.n == cfg.n && p.r == 2));
    assert!(report.slopes.contains_key("post_avg_frob_sq_vs_r"));
}

#[test]
fn unwritable_output_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let result = run_replicated(&ExperimentConfig { replications: 1, ..small() }).unwrap();
    let err = emit_replicated(&result, &blocker.join("sub")).unwrap_err();
    assert!(err.to_string().contains("sub"), "{err}");
}
