use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ttosc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttosc")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

/// Two cells, four services, short episodes.
fn small_config(dir: &Path) -> String {
    let out = ttosc(&["config", "init"]);
    assert!(out.status.success());
    let mut cfg = stdout_json(&out);
    cfg["cells"] = 2.into();
    cfg["services"] = 4.into();
    cfg["frames"] = 3.into();
    cfg["slots_per_frame"] = 2.into();
    cfg["training"]["hidden"] = 4.into();
    cfg["training"]["batch_size"] = 2.into();
    cfg["training"]["buffer_capacity"] = 8.into();
    let path = dir.join("small.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn config_init_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let p = path.to_str().unwrap();
    assert!(ttosc(&["config", "init", "-o", p]).status.success());
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(cfg["cells"], 5);
    assert_eq!(cfg["training"]["learning_rate"], 0.01);

    let again = ttosc(&["config", "init", "-o", p]);
    assert_eq!(again.status.code(), Some(2));
    assert_eq!(error_json(&again)["error"], "invalid-argument");
    assert!(ttosc(&["config", "init", "-o", p, "--force"]).status.success());
}

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = ttosc(&[
            "--config", &cfg, "run", "--scheme", "ttosc", "--episodes", "3", "--eval-episodes", "1", "--seed", "9",
            "--service-delays", "--trace", "-q", "-o", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let summary = stdout_json(&out);
        assert_eq!(summary["scheme"], "ttosc");
        assert_eq!(summary["seed"], 9);
        assert!(summary["mean_delay"].as_f64().unwrap() > 0.0);
        summaries.push(summary);
    }
    assert_eq!(summaries[0], summaries[1]);
    for file in ["slots.csv", "frames.csv", "episodes.csv", "service_delays.csv", "agent0.json", "agent1.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let delays = std::fs::read_to_string(dir.path().join("a/service_delays.csv")).unwrap();
    assert!(delays.starts_with("slot,service,service_delay,slot_delay\n"));
    let trace = std::fs::read_to_string(dir.path().join("a/trace.csv")).unwrap();
    assert!(trace.starts_with("slot,cell,service,count\n"));
    // 3 frames x 2 slots x 2 cells x 4 services
    assert_eq!(trace.lines().count(), 1 + 48);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/config.json")).unwrap()).unwrap();
    assert_eq!(saved["seed"], 9);
}

#[test]
fn every_baseline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for scheme in ["cloud", "popularity", "greedy", "random"] {
        let out = ttosc(&["--config", &cfg, "run", "--scheme", scheme, "--episodes", "2", "-q"]);
        assert!(out.status.success(), "{scheme}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stdout_json(&out)["scheme"], scheme);
    }
}

#[test]
fn errors_carry_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let bad_scheme = ttosc(&["--config", &cfg, "run", "--scheme", "ddpg", "--episodes", "1"]);
    assert_eq!(bad_scheme.status.code(), Some(2));
    assert_eq!(error_json(&bad_scheme)["error"], "invalid-argument");

    let missing = ttosc(&["--config", "/nonexistent/cfg.json", "run"]);
    assert_eq!(missing.status.code(), Some(4));
    assert_eq!(error_json(&missing)["error"], "io");

    let garbled = dir.path().join("garbled.json");
    std::fs::write(&garbled, "{ not json").unwrap();
    let out = ttosc(&["--config", garbled.to_str().unwrap(), "run"]);
    assert!(!out.status.success());
    assert!(error_json(&out)["error"].is_string());

    let invalid = dir.path().join("invalid.json");
    std::fs::write(&invalid, r#"{"cells": 0}"#).unwrap();
    let out = ttosc(&["--config", invalid.to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "config");

    let axis = ttosc(&["sweep", "--axis", "bandwidth", "--values", "1"]);
    assert_eq!(axis.status.code(), Some(2));
}

#[test]
fn sweep_then_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sweep_dir = dir.path().join("sweep");
    let out = ttosc(&[
        "--config", &cfg, "sweep", "--axis", "zipf", "--values", "0.8,2", "--schemes", "ttosc,cloud", "--seeds", "1,2",
        "--episodes", "2", "--eval-episodes", "1", "-o", sweep_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["runs"], 8);
    let summary = std::fs::read_to_string(sweep_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 9);

    let plots = dir.path().join("plots");
    let out = ttosc(&["plotdata", "-i", sweep_dir.to_str().unwrap(), "-o", plots.to_str().unwrap(), "--window", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!stdout_json(&out)["written"].as_array().unwrap().is_empty());
    assert!(plots.join("zipf_table.csv").exists());
}

#[test]
fn oracle_check_passes() {
    let out = ttosc(&["oracle-check", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports = stdout_json(&out);
    assert_eq!(reports.as_array().unwrap().len(), 3);
    assert!(reports.as_array().unwrap().iter().all(|r| r["failures"] == 0));
}

#[test]
fn bench_reports_both_timescales() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = ttosc(&["--config", &cfg, "bench", "--warmup", "1", "--episodes", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["cells"], 2);
    assert!(report["slot_median"].as_f64().unwrap() > 0.0);
    assert!(report["deployment_median"].as_f64().unwrap() > 0.0);
}
