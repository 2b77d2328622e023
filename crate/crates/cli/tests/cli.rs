use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rksindy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rksindy")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rksindy(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Coefficient of `term` in an equation line such as `dx/dt = -0.100 x + 2.000 y`.
fn coefficient(line: &str, term: &str) -> Option<f64> {
    let rhs = line.split(" = ").nth(1)?;
    let rhs = rhs.replace(" - ", " + -");
    rhs.split(" + ").find_map(|t| {
        let t = t.trim();
        let (num, label) = t.split_once(' ').unwrap_or((t, "1"));
        (label == term).then(|| num.parse().ok()).flatten()
    })
}

#[test]
fn simulate_lorenz_rows_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--benchmark", "lorenz", "--dt", "0.01", "--t-final", "20", "--out", path(dir.path())]);
    let text = fs::read_to_string(dir.path().join("lorenz.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,x3"));
    assert_eq!(lines.count(), 2001);
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn simulate_mm_writes_one_file_per_initial_condition() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--benchmark", "mm", "--dt", "0.05", "--out", path(dir.path())]);
    for s0 in ["0.5", "1", "1.5", "2"] {
        let text = fs::read_to_string(dir.path().join(format!("mm_s0_{s0}.csv"))).unwrap();
        let first: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(first, s0.parse::<f64>().unwrap());
    }
}

#[test]
fn simulate_hopf_writes_one_file_per_mu() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--benchmark", "hopf", "--out", path(dir.path())]);
    let csvs = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "csv").count();
    assert_eq!(csvs, 8);
    let text = fs::read_to_string(dir.path().join("hopf_mu_-0.2.csv")).unwrap();
    assert!(text.starts_with("t,x1,x2,p1\n"));
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for noise in ["0", "0.1"] {
        for d in [&a, &b] {
            ok(&["simulate", "--benchmark", "linear2d", "--noise", noise, "--seed", "7", "--out", path(d.path())]);
        }
        let x = fs::read(a.path().join("linear2d.csv")).unwrap();
        let y = fs::read(b.path().join("linear2d.csv")).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn discover_linear_oscillator_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["discover", "--benchmark", "linear2d", "--dt", "0.1", "--out", path(dir.path())]);
    let eq = fs::read_to_string(dir.path().join("equations.txt")).unwrap();
    let lines: Vec<&str> = eq.lines().collect();
    let expected = [("x", -0.100, 0), ("y", 2.001, 0), ("x", -2.001, 1), ("y", -0.100, 1)];
    for (term, value, row) in expected {
        let got = coefficient(lines[row], term).unwrap();
        assert!((got - value).abs() <= 2e-3, "{term} in {}: {got}", lines[row]);
    }
    for f in ["model.json", "pareto.csv", "reconstruction.csv", "config.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let model: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(model["method"], "rk-sindy");
    let config: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config["dt"], 0.1);
    assert_eq!(config["discovery"]["mode"]["lambda"], 0.05);
}

#[test]
fn discover_fhn_at_half_step() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["discover", "--benchmark", "fhn", "--dt", "0.5", "--out", path(dir.path())]);
    let eq = fs::read_to_string(dir.path().join("equations.txt")).unwrap();
    let v = eq.lines().next().unwrap();
    for (term, value) in [("1", 0.501), ("v", 1.001), ("w", -1.001), ("v^3", -0.334)] {
        let got = coefficient(v, term).unwrap();
        assert!((got - value).abs() <= 3e-3, "{term} in {v}: {got}");
    }
}

#[test]
fn empty_dictionary_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"benchmark": "linear2d", "discovery": {"dictionary": {"degree": 0, "constant": false}}}"#).unwrap();
    let out = rksindy(&["discover", "--config", path(&cfg), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let diag: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(diag["error"].as_str().unwrap().contains("dictionary is empty"));
}

#[test]
fn unknown_benchmark_and_conflicting_sources_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = rksindy(&["simulate", "--benchmark", "nope", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = rksindy(&["discover", "--benchmark", "mm", "--data", "x.csv", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_1_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blowup.csv");
    let mut text = String::from("t,x1\n");
    for k in 0..40 {
        let t = k as f64 * 0.1;
        text.push_str(&format!("{t},{}\n", (3.0 * t).exp()));
    }
    fs::write(&data, text).unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"discovery": {"solver": {"lr": 1e14, "l1_weight": 1.0, "warm_start": false}}}"#).unwrap();
    let out = rksindy(&["discover", "--data", path(&data), "--config", path(&cfg), "--dict-degree", "5", "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let diag: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(diag["error"].as_str().unwrap().contains("diverged"));
}

#[test]
fn discover_from_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--benchmark", "linear2d", "--dt", "0.1", "--out", path(dir.path())]);
    let data = dir.path().join("linear2d.csv");
    let text = ok(&["discover", "--data", path(&data), "--dict-degree", "2", "--backward", "--out", path(&dir.path().join("o"))]);
    let first = text.lines().next().unwrap();
    assert!((coefficient(first, "x2").unwrap() - 2.0).abs() < 2e-3, "{text}");
}

fn report(dir: &Path) -> Vec<Value> {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn compare_linear_oscillator_at_coarse_step() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compare", "--benchmark", "linear2d", "--dt", "0.5", "--out", path(dir.path())]);
    let r = report(dir.path());
    assert_eq!(r[0]["method"], "rk-sindy");
    assert_eq!(r[0]["support_size"], serde_json::json!([2, 2]));
    assert_eq!(r[1]["method"], "std-sindy");
    let rk = r[0]["rmse"].as_f64().unwrap();
    let std = r[1]["rmse"].as_f64().unwrap_or(f64::INFINITY);
    assert!(std > 10.0 * rk, "rk {rk}, baseline {std}");
    assert!(dir.path().join("std-sindy/model.json").exists());
}

#[test]
fn compare_cubic_oscillator_baseline_fails() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compare", "--benchmark", "cubic2d", "--dt", "0.1", "--out", path(dir.path())]);
    let r = report(dir.path());
    assert_eq!(r[0]["support"], serde_json::json!([["x^3", "y^3"], ["x^3", "y^3"]]));
    let lines: Vec<&str> = r[0]["equations"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for (row, term, value) in [(0, "x^3", -0.1), (0, "y^3", 2.0), (1, "x^3", -2.0), (1, "y^3", -0.1)] {
        let got = coefficient(lines[row], term).unwrap();
        assert!((got - value).abs() <= 0.02 * value.abs() + 5e-4, "{term}: {got}");
    }
    let baseline_support = r[1]["support"].clone();
    let baseline_correct = baseline_support == r[0]["support"];
    assert!(!baseline_correct || !r[1]["stable"].as_bool().unwrap());
}

#[test]
fn compare_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["compare", "--benchmark", "linear2d", "--dt", "0.3", "--noise", "0.01", "--out", path(d.path())]);
    }
    assert_eq!(fs::read(a.path().join("report.json")).unwrap(), fs::read(b.path().join("report.json")).unwrap());
}

#[test]
fn assess_degree_on_linear_data() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&["assess-degree", "--benchmark", "linear2d", "--dt", "0.1", "--max-degree", "3", "--out", path(dir.path())]);
    let rows: Vec<(u32, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (d, v) = l.split_once(',').unwrap();
            (d.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|(_, l)| *l < 1e-12), "{rows:?}");
    assert!(dir.path().join("degree.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sweep", "--benchmark", "linear2d", "--dt", "0.1", "--dict-degree", "2", "--lambdas", "0.05,0.15,3", "--out", path(dir.path())]);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let counts: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(counts, vec![4, 2, 0]);
}
