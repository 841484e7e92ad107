use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
model.d1 = 4
model.d2 = 3
model.r = 1
model.n = 300
mala.n_steps = 1500
mala.step_size = 0.05
run.replications = 3
sweep.n_grid =
sweep.r_grid =
";

fn onebit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onebit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = onebit(args);
    assert!(
        out.status.success(),
        "onebit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--seed", "3", "--out", s(&sim)]);
    for f in ["truth.csv", "pi.csv", "data.csv", "setting.json", "config.cfg"] {
        assert!(sim.join(f).exists(), "missing {f}");
    }
    let data_lines = fs::read_to_string(sim.join("data.csv")).unwrap().lines().count();
    assert_eq!(data_lines, 301);

    let fit = dir.path().join("fit");
    ok(&[
        "fit", "--config", s(&cfg), "--seed", "3", "--data", s(&sim.join("data.csv")), "--out", s(&fit),
    ]);
    for f in ["chain.csv", "chain.json", "mean.csv", "mcse.csv"] {
        assert!(fit.join(f).exists(), "missing {f}");
    }

    let ev = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--a", s(&sim.join("truth.csv")),
        "--b", s(&fit.join("mean.csv")),
        "--pi", s(&sim.join("pi.csv")),
        "--out", s(&ev),
    ]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    for key in ["kl_joint", "hellinger_sq_normalized", "renyi_joint", "frobenius", "sup", "c_kappa"] {
        let v = metrics[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert!(v.is_finite() && v >= 0.0, "{key} = {v}");
    }
}

#[test]
fn evaluate_identical_matrices_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    fs::write(&a, "0.5,-1.0\n0.25,2.0\n").unwrap();
    let out = dir.path().join("ev");
    ok(&["evaluate", "--a", s(&a), "--b", s(&a), "--out", s(&out)]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for key in ["kl_joint", "hellinger_sq_joint", "renyi_normalized", "frobenius"] {
        assert_eq!(metrics[key].as_f64().unwrap(), 0.0, "{key}");
    }
}

#[test]
fn replicated_run_is_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["sweep", "--config", s(&cfg), "--seed", "11", "--out", s(&a)]);
    ok(&["sweep", "--config", s(&cfg), "--seed", "11", "--out", s(&b), "--workers", "2"]);
    for f in ["report.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let rows = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);

    let agg = dir.path().join("agg");
    ok(&["report", "--out", s(&agg), s(&a), s(&b.join("report.csv"))]);
    assert!(agg.join("aggregate.json").exists());
    assert_eq!(fs::read_to_string(agg.join("combined.csv")).unwrap().lines().count(), 7);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model.d1 = 4\nmodel.colour = blue\n").unwrap();
    let out = onebit(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.colour"), "stderr: {err}");
}

#[test]
fn report_requires_existing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = onebit(&["report", "--out", s(dir.path()), s(&dir.path().join("nope"))]);
    assert!(!out.status.success());
}
