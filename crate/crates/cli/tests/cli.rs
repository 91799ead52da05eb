use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use bugprio::bridge::conformance::run_driver_suite;
use bugprio::bridge::{spawn_worker, BridgeError};
use bugprio::corpus::{write_csv, ColumnMap};
use bugprio::synthetic::{tracker_corpus, TrackerSpec};
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_bugprio");

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn setup(extra: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    let corpus = tracker_corpus(&TrackerSpec {
        reports: 300,
        ..TrackerSpec::default()
    });
    let file = fs::File::create(dir.path().join("bugs.csv")).unwrap();
    write_csv(&corpus.reports, &ColumnMap::default(), file).unwrap();
    let config = format!(
        r#"
seed = 5
output_dir = "run"

[dataset]
path = "bugs.csv"

[lda]
num_topics = 3
iterations = 120
burn_in = 40
inference_iterations = 40

[classifier]
min_topic_size = 10
{extra}
"#
    );
    fs::write(dir.path().join("config.toml"), config).unwrap();
    dir
}

fn bugprio(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.toml");
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    if args[0] != "mock-worker" {
        cmd.arg("--config").arg(&config);
    }
    cmd.output().unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error on stderr");
    serde_json::from_str(line).unwrap()
}

#[test]
fn full_cycle_through_the_binary() {
    let dir = setup("");
    let ingest = ok_json(&bugprio(dir.path(), &["ingest"]));
    assert_eq!(ingest["ingested"], 300);

    let train = ok_json(&bugprio(dir.path(), &["train"]));
    assert_eq!(train["train_size"], 240);
    assert_eq!(train["test_size"], 60);
    assert_eq!(train["bundle_hash"].as_str().unwrap().len(), 64);

    let metrics = ok_json(&bugprio(dir.path(), &["evaluate"]));
    assert_eq!(metrics["total"], 60);

    let report = bugprio(dir.path(), &["report"]);
    assert!(report.status.success());
    assert!(!report.stdout.is_empty());

    let input = dir.path().join("new.jsonl");
    fs::write(
        &input,
        "{\"bug_id\": 9001, \"summary\": \"t1w0 t1w2\", \"description\": \"cue2\", \"component\": \"comp1\"}\n",
    )
    .unwrap();
    let output = dir.path().join("out.jsonl");
    let out = bugprio(
        dir.path(),
        &["predict", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = fs::read_to_string(&output).unwrap();
    let pred: Value = serde_json::from_str(written.lines().next().unwrap()).unwrap();
    assert_eq!(pred["bug_id"], 9001);
    assert_eq!(pred["scores"].as_array().unwrap().len(), 5);

    // stdin to stdout gives the same line
    let mut child = Command::new(BIN)
        .args(["predict", "--config"])
        .arg(dir.path().join("config.toml"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&fs::read(&input).unwrap()).unwrap();
    let piped = child.wait_with_output().unwrap();
    assert!(piped.status.success());
    assert_eq!(String::from_utf8(piped.stdout).unwrap(), written);
}

#[test]
fn metrics_json_matches_schema() {
    let dir = setup("");
    ok_json(&bugprio(dir.path(), &["ingest"]));
    ok_json(&bugprio(dir.path(), &["train", "--evaluate"]));
    let schema: Value = serde_json::from_slice(&fs::read(workspace_file("docs/metrics.schema.json")).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let metrics: Value =
        serde_json::from_slice(&fs::read(dir.path().join("run/metrics.json")).unwrap()).unwrap();
    if let Err(errors) = compiled.validate(&metrics) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("metrics.json violates schema: {msgs:?}");
    }
    // and the schema does reject something
    let mut broken = metrics.clone();
    broken["micro"]["f1"] = Value::from(1.5);
    assert!(!compiled.is_valid(&broken));
}

#[test]
fn empty_dataset_exits_2_with_json_error() {
    let dir = setup("");
    fs::write(dir.path().join("bugs.csv"), "").unwrap();
    let out = bugprio(dir.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert!(err["error"]["code"].is_string());
    assert!(err["error"]["message"].is_string());
}

#[test]
fn config_without_seed_exits_2() {
    let dir = setup("");
    let config = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    fs::write(dir.path().join("config.toml"), config.replace("seed = 5", "")).unwrap();
    let out = bugprio(dir.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("seed"));
}

#[test]
fn evaluate_before_train_fails() {
    let dir = setup("");
    ok_json(&bugprio(dir.path(), &["ingest"]));
    let out = bugprio(dir.path(), &["evaluate"]);
    assert!(!out.status.success());
    error_json(&out);
}

#[test]
fn external_fixed_worker_gives_all_p3_baseline() {
    let extra = format!(
        "kind = \"external\"\n\n[external]\ncommand = [{:?}, \"mock-worker\", \"--fixed\", \"P3\"]\nhandshake_timeout_secs = 10\n",
        BIN
    );
    let dir = setup(&extra);
    ok_json(&bugprio(dir.path(), &["ingest"]));
    let out = ok_json(&bugprio(dir.path(), &["train", "--evaluate"]));
    let metrics = &out["metrics"];
    assert_eq!(metrics["macro"]["recall"], 0.2);
    let p3 = metrics["per_class"].as_array().unwrap().iter().find(|c| c["label"] == "P3").unwrap();
    assert_eq!(p3["recall"], 1.0);
    assert_eq!(metrics["correct"], p3["support"]);

    // a bundle from the external kind cannot serve a later evaluate
    let out = bugprio(dir.path(), &["evaluate"]);
    assert!(!out.status.success());
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("train --evaluate"), "{msg}");
}

fn mock_command(extra: &[&str]) -> Vec<String> {
    let mut cmd = vec![BIN.to_string(), "mock-worker".to_string()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

#[test]
fn subprocess_mock_passes_driver_suite() {
    let cmd = mock_command(&[]);
    let outcomes = run_driver_suite(&mut || spawn_worker(&cmd, Duration::from_secs(10)));
    assert!(!outcomes.is_empty());
    for case in &outcomes {
        assert!(case.result.is_ok(), "{}: {:?}", case.name, case.result);
    }
}

#[test]
fn subprocess_fixed_mock_fails_driver_suite() {
    let cmd = mock_command(&["--fixed", "P1"]);
    let outcomes = run_driver_suite(&mut || spawn_worker(&cmd, Duration::from_secs(10)));
    assert!(outcomes.iter().any(|c| c.result.is_err()));
}

#[test]
fn wrong_announced_version_is_rejected() {
    let cmd = mock_command(&["--announce", "2"]);
    match spawn_worker(&cmd, Duration::from_secs(10)) {
        Err(BridgeError::VersionMismatch { found, .. }) => assert_eq!(found, "2"),
        Err(other) => panic!("expected a version mismatch, got {other}"),
        Ok(_) => panic!("version 2 accepted"),
    }
}
