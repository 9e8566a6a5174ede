use std::path::Path;
use std::process::{Command, Output};

fn ljm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ljm"))
        .current_dir(dir)
        .env_remove("LJM_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ljm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

const SIM: &str = r#"{"n_patients": 40}"#;
const SAEM: &str = r#"{"n_iterations": 400, "n_rm_iterations": 80, "init": {"kind": "longitudinal_prefit", "iterations": 50}}"#;

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("sim.json"), SIM).unwrap();
    std::fs::write(dir.join("saem.json"), SAEM).unwrap();
    ok(dir, &["simulate", "--config", "sim.json", "--seed", "7", "--out", "data"]);
    ok(dir, &["fit", "--data", "data", "--config", "saem.json", "--seed", "3", "--out", "model.json", "--trace", "trace.csv"]);
    ok(dir, &["personalize", "--model", "model.json", "--data", "data", "--k-visits", "2", "--out", "effects.csv"]);
    ok(dir, &["predict", "--model", "model.json", "--effects", "effects.csv", "--horizons", "1.0,1.5", "--data", "data", "--out", "preds.csv"]);
    ok(dir, &["report", "--preds", "preds.csv", "--truth", "data", "--effects", "effects.csv", "--out", "report.json"]);
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "data/longitudinal.csv",
        "data/events.csv",
        "data/truth.csv",
        "model.json",
        "trace.csv",
        "effects.csv",
        "preds.csv",
        "report.json",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs between runs");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert!(report["prediction"]["auc"]["mean"].as_f64().unwrap() > 0.5);
    assert!(report["icc_tau"].is_number());
    let trace = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 401);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ljm(dir.path(), &["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    let out = ljm(dir.path(), &["nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = ljm(dir.path(), &["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("personalize"));
}

#[test]
fn schema_violations_are_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad");
    std::fs::create_dir(&data).unwrap();
    std::fs::write(data.join("longitudinal.csv"), "patient_id,time_years,score_normalized\na,1,0.2\na,1,0.3\nb,1,2\n").unwrap();
    std::fs::write(data.join("events.csv"), "patient_id,event_time_years,observed\na,2,1\nb,2,0\nc,2,0\n").unwrap();
    let out = ljm(dir.path(), &["fit", "--data", "bad", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "validation");
    // b also loses its only visit, so it is reported twice
    assert_eq!(err["details"]["issues"].as_array().unwrap().len(), 4);
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sim.json"), "{\"n_patients\": \"many\"}").unwrap();
    let out = ljm(dir.path(), &["simulate", "--config", "sim.json", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "json");
}

#[test]
fn runtime_failures_exit_nonzero_with_json() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sim.json"), SIM).unwrap();
    ok(dir.path(), &["simulate", "--config", "sim.json", "--out", "data"]);
    std::fs::write(dir.path().join("model.json"), "{\"params\": 1}").unwrap();
    let out = ljm(dir.path(), &["personalize", "--model", "model.json", "--data", "data", "--out", "e.csv"]);
    assert!(!out.status.success());
    assert!(error_json(&out)["message"].is_string());
}

#[test]
fn output_directory_override() {
    let dir = tempfile::tempdir().unwrap();
    let target = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sim.json"), SIM).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ljm"))
        .current_dir(dir.path())
        .env("LJM_OUT_DIR", target.path())
        .args(["simulate", "--config", "sim.json", "--out", "data"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.path().join("data/events.csv").exists());
    assert!(!dir.path().join("data").exists());
}
