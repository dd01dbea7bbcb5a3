use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn standard(out: &Path) -> Value {
    json!({
        "operator": {"terms": [{"c": 1.0, "p": 2.0}]},
        "reaction": {
            "h": {"c": 1.0, "cutoff": 0.5},
            "weight_k": {"c": 0.1, "cutoff": 1.0},
            "gamma": 1.0, "r": 0.5, "eta": 2.0, "theta": 3.0,
            "beta": 1.0, "sigma": 0.5, "alpha": 1.0
        },
        "grid": {"dim": 2, "cells_per_unit": 32},
        "pipeline": {"n_max": 3},
        "output_dir": out
    })
}

fn run(config: &Value, dir: &Path, args: &[&str]) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_singconv"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn check_operator_reports_constants() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = standard(&dir.path().join("out"));
    cfg["operator"] = json!({"terms": [{"c": 1.0, "p": 3.0}, {"c": 1.0, "p": 2.0}]});
    let out = run(&cfg, dir.path(), &["check-operator"]);
    assert_eq!(out.status.code(), Some(0));
    let rep = stdout_json(&out);
    assert!((rep["Lambda"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    cfg["operator"] = json!({"terms": [{"c": 1.0, "p": 3.0}]});
    let rep = stdout_json(&run(&cfg, dir.path(), &["check-operator"]));
    assert!((rep["i_a"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((rep["s_a"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    cfg["operator"] = json!({"terms": [{"c": -1.0, "p": 3.0}]});
    assert_eq!(run(&cfg, dir.path(), &["check-operator"]).status.code(), Some(2));
}

#[test]
fn check_exponents_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = standard(&dir.path().join("out"));
    let out = run(&cfg, dir.path(), &["check-exponents"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["interpolation"]["holds"], json!(true));

    cfg["reaction"]["r"] = json!(1.5);
    let out = run(&cfg, dir.path(), &["check-exponents"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["admissible"], json!(false));

    cfg["reaction"]["unknown"] = json!(0);
    assert_eq!(run(&cfg, dir.path(), &["check-exponents"]).status.code(), Some(2));
}

#[test]
fn solve_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&standard(&out_dir), dir.path(), &["solve", "--n", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("u_1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("r,u,Du"));
    assert_eq!(lines.count(), 33);
}

#[test]
fn solve_with_half_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = standard(&dir.path().join("out"));
    cfg["reaction"]["gamma"] = json!(0.5);
    assert_eq!(run(&cfg, dir.path(), &["solve", "--n", "2"]).status.code(), Some(0));
}

#[test]
fn injected_trap_escape_names_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &standard(&dir.path().join("out")),
        dir.path(),
        &["solve", "--n", "1", "--inject-upper-shift", "1.3"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trap escape at node"), "{err}");
}

#[test]
fn pipeline_report_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run(&standard(&a), dir.path(), &["pipeline"]);
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    run(&standard(&b), dir.path(), &["pipeline"]);
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    let report: Value = serde_json::from_slice(&ra).unwrap();
    for key in ["omega", "C", "d", "iterations"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["iterations"].as_array().unwrap().len(), 3);
    assert_eq!(report["omega"].as_array().unwrap().len(), 2);
    assert_eq!(out.status.code(), Some(if report["passed"] == json!(true) { 0 } else { 1 }));
    for f in ["u_3.csv", "sub_3.csv", "super_3.csv"] {
        assert!(a.join("fields").join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(a.join("trace.jsonl")).unwrap();
    let first: Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    for key in ["stage", "k", "residual", "energy", "grad_norm"] {
        assert!(first.get(key).is_some(), "trace missing {key}");
    }
}

#[test]
fn pipeline_single_ball() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let mut cfg = standard(&out_dir);
    cfg["pipeline"]["n_max"] = json!(1);
    run(&cfg, dir.path(), &["pipeline"]);
    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["omega"], json!([]));
    assert_eq!(report["C"], json!([]));
    assert_eq!(report["d"], json!([]));
}

#[test]
fn inconsistent_exponents_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let mut cfg = standard(&out_dir);
    cfg["reaction"]["theta"] = json!(1.0);
    let out = run(&cfg, dir.path(), &["pipeline"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
    let out = run(&cfg, dir.path(), &["solve", "--n", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn missing_config_is_a_configuration_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_singconv")).arg("pipeline").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_appendix_reference_family() {
    let out = Command::new(env!("CARGO_BIN_EXE_singconv")).arg("verify-appendix").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let list = stdout_json(&out);
    assert_eq!(list.as_array().unwrap().len(), 7);
}
