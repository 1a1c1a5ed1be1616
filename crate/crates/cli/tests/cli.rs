use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detective"))
}

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden")
}

fn run_golden(out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .args(["run", "--mock", "--bundle"])
        .arg(golden().join("bundle"))
        .args(["--query", "What color is the car the man drives away in?", "--options", "red,blue,green,white"])
        .args(extra)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn mock_run_reproduces_golden_outputs() {
    let out = tempfile::tempdir().unwrap();
    let res = run_golden(out.path(), &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(String::from_utf8_lossy(&res.stdout).trim(), "A");
    for name in ["answer.json", "package.json", "trace.jsonl"] {
        assert_eq!(
            fs::read(out.path().join(name)).unwrap(),
            fs::read(golden().join("expected").join(name)).unwrap(),
            "{name}"
        );
    }
    for name in ["beliefs.bin", "metrics.csv"] {
        assert!(out.path().join(name).exists(), "{name}");
    }
}

#[test]
fn missing_bundle_exits_with_input_code() {
    let out = tempfile::tempdir().unwrap();
    let res = bin()
        .args(["run", "--mock", "--bundle", "/no/such/bundle", "--query", "q", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(err["kind"], "BundleNotFound");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn invalid_override_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let res = run_golden(out.path(), &["--set", "base_budget=0"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.path().join("answer.json").exists());
}

#[test]
fn bench_writes_summary() {
    let out = tempfile::tempdir().unwrap();
    let res = bin()
        .args(["bench", "--seeds", "8", "--variants", "full,uniform", "--workers", "2", "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);
    assert!(out.path().join("summary.json").exists());
}

#[test]
fn graph_export() {
    let out = tempfile::tempdir().unwrap();
    let res = bin()
        .args(["graph", "--bundle"])
        .arg(golden().join("bundle"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.path().join("graph.json").exists());
    assert!(out.path().join("nodes.json").exists());
}
