use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robusthedge"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).arg("--threads").arg("2").output().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_reports_equal_values() {
    let tmp = tempfile::tempdir().unwrap();
    let mart = tmp.path().join("m");
    let var = tmp.path().join("v");
    let c = config("trinomial_abs.json");
    assert!(run(&["solve", "--config", c.to_str().unwrap()], &mart).status.success());
    let c = config("trinomial_var_bounded.json");
    assert!(run(&["solve", "--config", c.to_str().unwrap()], &var).status.success());
    let m = json(mart.join("solve.json"));
    let v = json(var.join("solve.json"));
    for r in [&m, &v] {
        assert!(r["gap_lp"].as_f64().unwrap().abs() < 1e-9);
        assert!(r["gap_primal"].as_f64().unwrap().abs() < 1e-9);
        assert_eq!(r["schema_version"], 1);
    }
    assert!(v["dp"].as_f64().unwrap() < m["dp"].as_f64().unwrap());
}

#[test]
fn polar_table_lists_one_path() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config("polar_table.json");
    assert!(run(&["solve", "--config", c.to_str().unwrap()], tmp.path()).status.success());
    let r = json(tmp.path().join("solve.json"));
    assert_eq!(r["verification"]["polar_paths"], 1);
    assert!(run(&["hedge", "--config", c.to_str().unwrap()], tmp.path()).status.success());
    let h = json(tmp.path().join("hedge.json"));
    assert_eq!(h["verification"]["polar_paths"].as_array().unwrap().len(), 1);
    assert_eq!(h["X0"], 1.0);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\n  \"schema_version\": 1,\n  \"family\": {\"class\": \"nope\"}\n}\n").unwrap();
    let out = run(&["solve", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":3:") && err.contains("family.class"), "{err}");
}

#[test]
fn mutated_kernel_fails_membership() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("p.json");
    fs::write(&cfg, r#"{"schema_version": 1, "seed": 5, "suites": {"membership": 20, "tower": 5}}"#).unwrap();
    let clean = run(&["proptest", "--config", cfg.to_str().unwrap()], &tmp.path().join("a"));
    assert!(clean.status.success());
    let out = tmp.path().join("b");
    let bad = run(&["proptest", "--mutate-kernel", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(bad.status.code(), Some(1));
    let text = String::from_utf8_lossy(&bad.stdout);
    assert!(text.contains("at node"), "{text}");
    let report = json(out.join("proptest.json"));
    let replay = report["failure_configs"][0].as_str().unwrap();
    let again = run(&["proptest", "--config", out.join(replay).to_str().unwrap()], &tmp.path().join("c"));
    assert_eq!(again.status.code(), Some(1));
    let summary = json(tmp.path().join("c/proptest.json"));
    assert_eq!(summary["suites"][0]["failed"], 1);
}

#[test]
fn single_band_counterexample() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"schema_version": 1, "counterexample": {"bands": 1}}"#).unwrap();
    assert!(run(&["counterexample", "--config", cfg.to_str().unwrap()], tmp.path()).status.success());
    let mut rows = csv::Reader::from_path(tmp.path().join("divergence.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let s: f64 = rows[0][3].parse().unwrap();
    assert!((1.0..=2.0).contains(&s));
    fs::write(&cfg, r#"{"schema_version": 1, "counterexample": {"bands": 51}}"#).unwrap();
    assert_eq!(run(&["counterexample", "--config", cfg.to_str().unwrap()], tmp.path()).status.code(), Some(2));
}
