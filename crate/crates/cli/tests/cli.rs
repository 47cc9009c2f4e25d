use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bapmsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn advise_bundled_profile() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["advise", "castep"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("MemoryMode"));
}

#[test]
fn advise_json_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--format", "json", "advise", "fdb5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.to_string().contains("DirectAccess"));
}

#[test]
fn empty_profile_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.json"), "").unwrap();
    let o = run(dir.path(), &["advise", "empty.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn unknown_scenario_lists_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "nope"]);
    assert_eq!(code(&o), 1);
    let e = stderr(&o);
    assert!(e.contains("table1") && e.contains("powerloss-demo"), "{e}");
}

#[test]
fn simulate_writes_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--out", "res", "simulate", "table1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let res = dir.path().join("res");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(res.join("summary.json")).unwrap()).unwrap();
    assert!(summary["metrics"]["table1:lustre:ensemble:1"].as_f64().unwrap() > 0.0);
    let csv: Vec<_> = fs::read_dir(&res)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert!(!csv.is_empty());
}

#[test]
fn model_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{
        "nodes": {"mode": "AppDirect"},
        "jobs": [{"id": "big", "nodes": [0],
                  "profile": {"base": "synthetic", "mem_footprint_per_process": "5GiB"}}]
    }"#;
    fs::write(dir.path().join("spec.json"), spec).unwrap();
    let o = run(dir.path(), &["simulate", "spec.json"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn spec_file_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{
        "nodes": {"mode": "AppDirect"},
        "jobs": [{"id": "a", "nodes": [0, 1], "profile": {"base": "synthetic", "steps": 10}}]
    }"#;
    fs::write(dir.path().join("spec.json"), spec).unwrap();
    let o = run(dir.path(), &["--format", "json", "simulate", "spec.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["metrics"]["makespan"].as_f64(), Some(10.0));
}

#[test]
fn check_only_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["calibrate", "--check-only"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn reproduce_passes_with_bundled_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--out", ".", "reproduce", "all"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    assert!(dir.path().join("reproduce.csv").exists());
}

#[test]
fn reproduce_fails_on_uncalibrated_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--calibration", "defaults", "reproduce", "table1"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("WARNING"));
}
