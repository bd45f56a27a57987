//! End-to-end runs of the command-line binary.

use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_anova-evidence");

fn data(name: &str) -> String {
    format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let mut full = vec!["--format", "json"];
    full.extend_from_slice(args);
    let out = run(&full);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn analyze_reports_all_sections() {
    let t1 = data("published.json");
    let v = json(&["analyze", &t1, "--sigma2", "1.134", "--prior-odds", "0.1"]);
    for key in [
        "version", "command", "inputs", "sigma2", "evidence", "odds", "flags",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let pooled = v["evidence"]["pooled"]["v"].as_f64().unwrap();
    assert!((pooled - 56.88).abs() < 0.2);
    assert_eq!(v["sigma2"]["source"], "flag");
    assert_eq!(v["flags"]["posterior_exceeds_one"], true);
}

#[test]
fn sigma_falls_back_to_f_recovery() {
    let t1 = data("published.json");
    let v = json(&["analyze", &t1, "--model", "pooled"]);
    assert_eq!(v["sigma2"]["source"], "f-recovery");
    assert!(v["evidence"]["per_group"].is_null());
}

#[test]
fn output_is_byte_identical_across_runs() {
    let t1 = data("published.json");
    let args = [
        "--format",
        "json",
        "calibrate",
        &t1,
        "--sigma2",
        "1.134",
        "--reps",
        "50",
        "--seed",
        "3",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_is_seeded() {
    let args = [
        "--format", "json", "simulate", "--cells", "4", "--n", "30", "--rho", "0.3", "--sigma2",
        "1", "--seed", "42",
    ];
    let a = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, run(&args).stdout);
}

#[test]
fn validation_errors_exit_one() {
    let dir = std::env::temp_dir().join(format!("ae-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"design": []}"#).unwrap();
    let out = run(&["analyze", bad.to_str().unwrap(), "--sigma2", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    let out = run(&["analyze", &data("published.json"), "--sigma2=-1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["analyze", &data("published.json"), "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_variance_exits_two() {
    let mut v: Value =
        serde_json::from_str(&std::fs::read_to_string(data("published.json")).unwrap()).unwrap();
    v["f_statistics"] = Value::Array(vec![]);
    let dir = std::env::temp_dir().join(format!("ae-cli2-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("nof.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let out = run(&["analyze", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn combine_multiplies_and_absorbs_infinity() {
    let v = json(&["combine", "2", "3.5"]);
    assert!((v["combined"].as_f64().unwrap() - 7.0).abs() < 1e-12);
    let v = json(&["combine", "2", "infinity"]);
    assert_eq!(v["combined"], "infinity");
    assert_eq!(run(&["combine", "0.5"]).status.code(), Some(1));
}

#[test]
fn sensitivity_reports_worst_case_table() {
    let t1 = data("published.json");
    let v = json(&[
        "sensitivity",
        &t1,
        "--sigma2",
        "1.134",
        "--worst-sigma2",
        "1.168",
    ]);
    let s = &v["sensitivity"];
    assert_eq!(s["worst_case_table"].as_array().unwrap().len(), 12);
    let pooled = s["evidence"]["pooled"]["v"].as_f64().unwrap();
    assert!((pooled - 1.92).abs() < 0.02);
}

#[test]
fn text_output_is_the_default() {
    let out = run(&["analyze", &data("published.json"), "--sigma2", "1.134"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("V = 56.8"));
}
