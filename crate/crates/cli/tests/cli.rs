use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gt-market")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn simulate_pair(dir: &Path) -> String {
    let path = dir.join("pair.csv");
    let p = path.to_str().unwrap().to_string();
    let o = run(&["simulate", "--vol", "0.2", "--stock-vol", "0.3", "--dt", "1e-4", "--seed", "5", "--output", &p]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

#[test]
fn quantiles_table_has_requested_rows() {
    let o = run(&["quantiles", "--qmin", "1e-5", "--qmax", "0.5", "--points", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("q,X,eta,ratio"));
    assert_eq!(lines.count(), 200);
}

#[test]
fn quantiles_json_and_bad_range() {
    let o = run(&["quantiles", "--points", "3", "--format", "json"]);
    let rows: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    let o = run(&["quantiles", "--qmin", "0.6"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--qmin"));
}

#[test]
fn simulate_then_analyze_capm_bound() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate_pair(dir.path());
    let header = std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,index,stock");

    let o = run(&["analyze", "--input", &csv, "--delta", "0.1", "--T", "0.01", "--family", "capm_optimized"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let bound = &report["bounds"][0];
    assert_eq!(bound["spec"]["family"], "capm_optimized");
    assert!(bound["hit"].is_boolean());
    assert!(report["identities"]["mu_identity_gap"].as_f64().unwrap() < 0.05);
    let tpd = report["tpd"]["tpd"].as_f64().unwrap();
    assert!((tpd - 0.045).abs() < 0.02, "tpd {tpd}");
}

#[test]
fn analyze_emits_side_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate_pair(dir.path());
    let file = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (curves, capital, ladder, report) = (file("curves.csv"), file("capital.csv"), file("ladder.json"), file("r.json"));
    let o = run(&[
        "analyze", "--input", &csv, "--emit-curves", &curves, "--emit-capital", &capital, "--mix", "stock_mix",
        "--mix-epsilon", "0.25", "--dump-ladder", &ladder, "--output", &report,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let cap = std::fs::read_to_string(&capital).unwrap();
    assert!(cap.starts_with("t,capital,relative,theoretical_exponent"));
    assert_eq!(cap.lines().count(), 10_002);
    let ladders: Value = serde_json::from_str(&std::fs::read_to_string(&ladder).unwrap()).unwrap();
    assert!(ladders["pair"]["levels"].as_array().unwrap().len() >= 2);
    assert!(std::fs::read_to_string(&curves).unwrap().lines().count() > 10_000);
    assert!(serde_json::from_str::<Value>(&std::fs::read_to_string(&report).unwrap()).is_ok());
}

#[test]
fn malformed_input_names_the_row_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "t,index\n0,1\n1,abc\n").unwrap();
    let out = dir.path().join("out.json");
    let o = run(&["analyze", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("row 3"), "{err}");
    assert!(err.contains("--input"), "{err}");
    assert!(!out.exists());
    assert!(o.stdout.is_empty());
}

#[test]
fn capm_family_without_stock_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("idx.csv");
    let o = run(&["simulate", "--output", input.to_str().unwrap()]);
    assert!(o.status.success());
    let o = run(&["analyze", "--input", input.to_str().unwrap(), "--delta", "0.1", "--T", "0.01", "--family", "capm_mixing", "--epsilon", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--family"));
    let o = run(&["analyze", "--input", input.to_str().unwrap(), "--family", "ep_mixing"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--delta"));
}

#[test]
fn flag_errors_exit_with_one() {
    assert_eq!(run(&["quantiles", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--drift", "custom"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--dt", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "--input", "x.csv", "--format", "csv"]).status.code(), Some(1));
}

#[test]
fn help_lists_flags_with_units() {
    let o = run(&["simulate", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in ["--vol", "--drift", "--mu", "--horizon", "--dt", "--stock-vol", "--seed", "--output", "--format"] {
        assert!(text.contains(flag), "{flag} missing");
    }
    assert!(text.contains("time units"));
    let text = stdout(&run(&["analyze", "--help"]));
    assert!(text.contains("log-variance"));
    assert!(text.contains("capm_optimized"));
}

#[test]
fn smoke_suite_is_byte_identical_across_runs_and_workers() {
    let a = run(&["coverage", "--suite", "smoke", "--seed", "42", "--workers", "1"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = run(&["coverage", "--suite", "smoke", "--seed", "42", "--workers", "2"]);
    let c = run(&["coverage", "--suite", "smoke", "--seed", "42"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["criteria"].as_array().unwrap().len(), 10);
    assert!(report.get("workers").is_none());
    assert_ne!(a.stdout, run(&["coverage", "--suite", "smoke", "--seed", "43"]).stdout);
}

fn write_config(dir: &Path) -> String {
    let config = serde_json::json!({
        "generator": { "vol": 0.2, "drift_mode": { "kind": "index_numeraire" }, "horizon": 1.0, "dt": 1e-3, "stock_vol": 0.3 },
        "n_paths": 50,
        "levels": { "kind": "fixed", "n_min": 2, "n_max": 4 },
        "bounds": [ { "family": "ep_optimized", "delta": 0.1, "T": 0.02 } ],
        "strategies": [ { "mode": "cash_mix", "epsilon": 0.5 } ],
        "master_seed": 1
    });
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn config_file_with_flags_winning() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let o = run(&["coverage", "--config", &config, "--seed", "9", "--paths", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["coverage"]["config"]["master_seed"], 9);
    assert_eq!(v["coverage"]["results"][0]["n_paths"], 20);
    assert_eq!(v["supermartingale"]["results"][0]["n_paths"], 20);

    let o = run(&["report", "--config", &config, "--paths", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["identities"]["n_paths"], 10);
    assert!(v["config_hash"].as_str().unwrap().len() == 64);
    assert!(v["coverage"].is_object() && v["supermartingale"].is_object());
}

#[test]
fn invalid_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, "{ \"n_paths\": 3 }").unwrap();
    let o = run(&["coverage", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
    let config = write_config(dir.path());
    assert_eq!(run(&["coverage", "--config", &config, "--paths", "0"]).status.code(), Some(1));
    assert_eq!(run(&["coverage", "--suite", "smoke", "--paths", "5"]).status.code(), Some(1));
}
