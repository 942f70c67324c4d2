//! End-to-end runs of the command-line binary: exit codes, artifact layout,
//! byte-level determinism, flag overrides, the structured error record, and
//! log filtering.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(config: &str, args: &[&str], out_dir: &Path) -> Output {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_fracvar"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(out_dir)
        .args(args)
        .env_remove("FRACVAR_LOG")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn solve_with_zero_data_exits_zero_and_writes_zeros() {
    let dir = TempDir::new().unwrap();
    let out = run(
        r#"{"task": "solve", "alpha": 0.5, "N": 64, "f": "0"}"#,
        &[],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("result: pass"), "stdout: {text}");

    let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node,value"));
    let mut rows = 0;
    for line in lines {
        let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(value, 0.0, "line {line}");
        rows += 1;
    }
    assert_eq!(rows, 65);

    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("certificate.json")).unwrap())
            .unwrap();
    assert!(cert["k2_estimate"].as_f64().unwrap() > 0.0);
}

#[test]
fn csv_values_carry_seventeen_significant_digits() {
    let dir = TempDir::new().unwrap();
    let out = run(
        r#"{"task": "solve", "alpha": 0.5, "N": 32, "f": "1+x"}"#,
        &[],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    // interior values are nonzero and printed as d.dddddddddddddddde<exp>
    let row = csv.lines().nth(2).unwrap();
    let value = row.split(',').nth(1).unwrap();
    let mantissa = value.split('e').next().unwrap();
    let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
    assert_eq!(digits, 17, "value {value}");
}

#[test]
fn identical_config_and_seed_reproduce_artifacts_byte_for_byte() {
    let config = r#"{
        "task": "scan", "alpha": 0.35, "beta": 0.05, "q": 3.0, "N": 256,
        "delta_grid": [0.25, 0.0625, 0.015625, 0.00390625],
        "family_size": 8, "seed": 11
    }"#;
    let d1 = TempDir::new().unwrap();
    let d2 = TempDir::new().unwrap();
    assert!(run(config, &[], d1.path()).status.success());
    assert!(run(config, &[], d2.path()).status.success());
    for name in ["scan.csv", "scan.json"] {
        let a = fs::read(d1.path().join(name)).unwrap();
        let b = fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn failed_rate_check_exits_one_but_still_writes_artifacts() {
    // z* = x (1 - x)^0.6 has a non-square-integrable second derivative, so
    // the observed L2 rate lands well under the 1.8 floor
    let dir = TempDir::new().unwrap();
    let out = run(
        r#"{"task": "convergence", "alpha": 0.5, "z_star": "x*(1-x)^0.6", "N_list": [32, 64]}"#,
        &[],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("check l2_rate: fail"), "stdout: {text}");
    assert!(text.contains("result: fail"), "stdout: {text}");
    assert!(dir.path().join("convergence.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("convergence.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pass"], serde_json::Value::Bool(false));
}

#[test]
fn invalid_coefficient_exits_two_with_structured_record() {
    let dir = TempDir::new().unwrap();
    let out = run(
        r#"{"task": "solve", "alpha": 0.5, "p": "x-1"}"#,
        &[],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(record["error"]["kind"], "ellipticity");
    let message = record["error"]["message"].as_str().unwrap();
    assert!(message.contains('p'), "message: {message}");
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = run(
        r#"{"task": "solve", "alpha": 0.5, "Nn": 32}"#,
        &[],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(record["error"]["kind"], "config");
    assert!(record["error"]["message"]
        .as_str()
        .unwrap()
        .contains("unknown field"));
}

#[test]
fn task_flag_overrides_config_file() {
    let dir = TempDir::new().unwrap();
    let out = run(
        r#"{"task": "solve", "alpha": 0.5, "N": 128, "f": "1"}"#,
        &["--task", "verify"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(dir.path().join("verify.json").exists());
    assert!(!dir.path().join("solution.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    for key in ["sbp", "greens", "adjoint", "accretivity"] {
        assert_eq!(summary[key]["pass"], serde_json::Value::Bool(true), "{key}");
    }
}

#[test]
fn seed_flag_overrides_config_file() {
    let config = r#"{
        "task": "scan", "alpha": 0.35, "beta": 0.05, "q": 3.0, "N": 128,
        "delta_grid": [0.25, 0.0625], "family_size": 4, "seed": 11
    }"#;
    let dir = TempDir::new().unwrap();
    let out = run(config, &["--seed", "9"], dir.path());
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let scan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("scan.json")).unwrap()).unwrap();
    assert_eq!(scan["seed"], serde_json::json!(9));
}

#[test]
fn log_filter_env_var_silences_warnings() {
    // alpha <= 1/2 makes the printed q-window empty, which logs a warning
    let config = r#"{
        "task": "scan", "alpha": 0.5, "beta": 0.05, "q": 3.0, "N": 128,
        "delta_grid": [0.25, 0.0625], "family_size": 4, "seed": 1
    }"#;
    let noisy_dir = TempDir::new().unwrap();
    let noisy = run(config, &[], noisy_dir.path());
    assert!(noisy.status.success());
    assert!(
        stderr(&noisy).contains("q-window"),
        "expected default warn output, got: {}",
        stderr(&noisy)
    );

    let quiet_dir = TempDir::new().unwrap();
    let path = quiet_dir.path().join("config.json");
    fs::write(&path, config).unwrap();
    let quiet = Command::new(env!("CARGO_BIN_EXE_fracvar"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(quiet_dir.path())
        .env("FRACVAR_LOG", "error")
        .output()
        .unwrap();
    assert!(quiet.status.success());
    assert!(
        !stderr(&quiet).contains("q-window"),
        "warnings not filtered: {}",
        stderr(&quiet)
    );
}
