use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uqgate_mock::{MockLlmOptions, MockLlmServer, Script};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn uqgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqgate")).env("RUST_LOG", "off").args(args).output().unwrap()
}

fn run(endpoint: &str, out: &Path, extra: &[&str]) -> Output {
    let dataset = fixture("e2e_queries.jsonl");
    let mut args = vec![
        "run",
        "--dataset",
        dataset.to_str().unwrap(),
        "--method",
        "msp",
        "--endpoint",
        endpoint,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    uqgate(&args)
}

fn script() -> Script {
    Script::load(&fixture("e2e_script.json")).unwrap()
}

#[test]
fn invalid_configuration_exits_2() {
    let out = uqgate(&["run", "--method", "cocoa", "--regime", "topk", "--dataset", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));
}

#[test]
fn existing_run_without_resume_exits_2() {
    let server = MockLlmServer::start(script(), MockLlmOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(server.url(), &out, &[]).status.code(), Some(0));
    assert_eq!(run(server.url(), &out, &[]).status.code(), Some(2));
    assert_eq!(run(server.url(), &out, &["--resume"]).status.code(), Some(0));
}

#[test]
fn unsupported_topk_exits_3() {
    let opts = MockLlmOptions { reject_multi: true, ..Default::default() };
    let server = MockLlmServer::start(script(), opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let dataset = fixture("e2e_queries.jsonl");
    let out = dir.path().join("run");
    let status = uqgate(&[
        "run",
        "--dataset",
        dataset.to_str().unwrap(),
        "--method",
        "consistency",
        "--regime",
        "topk",
        "--sim-backend",
        "lexical",
        "--endpoint",
        server.url(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(status.status.code(), Some(3));
}

#[test]
fn corrupt_cache_exits_4_and_rebuild_recovers() {
    let server = MockLlmServer::start(script(), MockLlmOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(server.url(), &out, &[]).status.code(), Some(0));
    let report = fs::read(out.join("report.json")).unwrap();
    let samples = out.join("samples.jsonl");
    let text = fs::read_to_string(&samples).unwrap();
    fs::write(&samples, text.replacen("\"query_id\"", "\"query_ix\"", 1)).unwrap();
    assert_eq!(run(server.url(), &out, &["--resume"]).status.code(), Some(4));
    assert_eq!(run(server.url(), &out, &["--resume", "--rebuild-cache"]).status.code(), Some(0));
    assert_eq!(fs::read(out.join("report.json")).unwrap(), report);
}

#[test]
fn report_merges_runs() {
    let server = MockLlmServer::start(script(), MockLlmOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(server.url(), &out, &[]).status.code(), Some(0));
    let csv = dir.path().join("table.csv");
    let merged = uqgate(&["report", out.to_str().unwrap(), out.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(merged.status.code(), Some(0));
    let stdout = String::from_utf8(merged.stdout).unwrap();
    assert!(stdout.contains("Filtered ACC") && stdout.contains("Remaining"));
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 3);
}
