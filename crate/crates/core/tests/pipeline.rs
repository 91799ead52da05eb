use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use bugprio::bridge::mock::{MockBehavior, MockWorker};
use bugprio::bridge::{EpochPolicy, ExternalKind, WorkerHandle};
use bugprio::corpus::{write_csv, ColumnMap, Priority};
use bugprio::evaluate::MetricsReport;
use bugprio::pipeline::{self, predict_stream, Pipeline, PipelineConfig, PipelineError};
use bugprio::synthetic::{tracker_corpus, TrackerSpec};
use tempfile::TempDir;

fn write_dataset(dir: &Path, spec: &TrackerSpec) {
    let corpus = tracker_corpus(spec);
    let file = fs::File::create(dir.join("bugs.csv")).unwrap();
    write_csv(&corpus.reports, &ColumnMap::default(), file).unwrap();
}

fn config_text(extra: &str) -> String {
    format!(
        r#"
seed = 5
output_dir = "run"

[dataset]
path = "bugs.csv"

[lda]
num_topics = 3
iterations = 150
burn_in = 50
inference_iterations = 50

[classifier]
min_topic_size = 10
{extra}
"#
    )
}

fn setup(extra: &str, spec: &TrackerSpec) -> (TempDir, PipelineConfig) {
    let dir = TempDir::new().unwrap();
    write_dataset(dir.path(), spec);
    let path = dir.path().join("config.toml");
    fs::write(&path, config_text(extra)).unwrap();
    let config = PipelineConfig::load(&path).unwrap();
    (dir, config)
}

fn small_spec() -> TrackerSpec {
    TrackerSpec {
        reports: 300,
        ..TrackerSpec::default()
    }
}

#[test]
fn synthetic_end_to_end_beats_majority_baseline() {
    let (_dir, config) = setup("", &small_spec());
    let mut p = Pipeline::new(config).unwrap();
    let ingest = p.ingest().unwrap();
    assert_eq!(ingest.ingested, 300);
    assert_eq!(ingest.rejected, 0);
    let summary = p.train().unwrap();
    assert_eq!(summary.train_size, 240);
    assert_eq!(summary.test_size, 60);
    let metrics = p.evaluate().unwrap();
    assert_eq!(metrics.total, 60);

    let test = fs::read_to_string(p.run_dir().join(pipeline::TEST_FILE)).unwrap();
    let mut counts = [0u64; 5];
    for line in test.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        counts[Priority::parse(v["priority"].as_str().unwrap()).unwrap().index()] += 1;
    }
    let majority = *counts.iter().max().unwrap() as f64 / 60.0;
    let accuracy = metrics.correct as f64 / metrics.total as f64;
    assert!(accuracy > majority, "accuracy {accuracy} vs majority {majority}");

    for name in [
        "corpus.jsonl",
        "rejects.jsonl",
        "distribution.json",
        "bundle/manifest.json",
        "topic_histogram.json",
        "timing_train.json",
        "metrics.json",
        "metrics.csv",
        "confusion.csv",
        "predictions.jsonl",
        "timing_evaluate.json",
    ] {
        assert!(p.run_dir().join(name).exists(), "{name} missing");
    }
    let manifest: pipeline::RunManifest =
        serde_json::from_slice(&fs::read(p.run_dir().join("manifest.json")).unwrap()).unwrap();
    let metrics_entry = manifest.artifacts.iter().find(|a| a.path == "metrics.json").unwrap();
    assert_eq!(
        metrics_entry.sha256,
        pipeline::sha256_hex(&fs::read(p.run_dir().join("metrics.json")).unwrap())
    );
    assert!(manifest.artifacts.iter().any(|a| a.path == "bundle/lda.txt"));
    let report = p.report().unwrap();
    assert!(report.contains("metrics"));
}

#[test]
fn same_config_same_bundle_and_metrics() {
    let run = || {
        let (dir, config) = setup("", &small_spec());
        let mut p = Pipeline::new(config).unwrap();
        p.ingest().unwrap();
        let hash = p.train().unwrap().bundle_hash;
        p.evaluate().unwrap();
        let metrics = fs::read(p.run_dir().join("metrics.json")).unwrap();
        let corpus = fs::read(p.run_dir().join("corpus.jsonl")).unwrap();
        drop(dir);
        (hash, metrics, corpus)
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn ingest_rerun_is_byte_identical() {
    let (_dir, config) = setup("", &small_spec());
    let p = Pipeline::new(config).unwrap();
    p.ingest().unwrap();
    let first = fs::read(p.run_dir().join("corpus.jsonl")).unwrap();
    let first_dist = fs::read(p.run_dir().join("distribution.json")).unwrap();
    p.ingest().unwrap();
    assert_eq!(first, fs::read(p.run_dir().join("corpus.jsonl")).unwrap());
    assert_eq!(first_dist, fs::read(p.run_dir().join("distribution.json")).unwrap());
}

#[test]
fn empty_dataset_is_input_error() {
    let (dir, config) = setup("", &small_spec());
    fs::write(dir.path().join("bugs.csv"), "").unwrap();
    let err = Pipeline::new(config).unwrap().ingest().unwrap_err();
    assert!(err.is_input_error(), "{err}");
}

#[test]
fn external_kind_without_worker_is_config_error() {
    let (_dir, config) = setup("kind = \"external\"", &small_spec());
    let mut p = Pipeline::new(config).unwrap();
    p.ingest().unwrap();
    let err = p.train().unwrap_err();
    assert!(matches!(err, PipelineError::Config(ref m) if m.contains("[external]")), "{err}");
}

#[test]
fn tampered_bundle_is_refused() {
    let (_dir, config) = setup("", &small_spec());
    let mut p = Pipeline::new(config).unwrap();
    p.ingest().unwrap();
    p.train().unwrap();
    let bundle = p.run_dir().join("bundle");

    let vocab_path = bundle.join("topic_vocab.jsonl");
    let original = fs::read(&vocab_path).unwrap();
    let mut tampered = original.clone();
    tampered.extend_from_slice(b"{\"token\":\"zzz\",\"index\":9999,\"doc_freq\":1}\n");
    fs::write(&vocab_path, &tampered).unwrap();
    assert!(matches!(p.evaluate(), Err(PipelineError::HashMismatch { .. })));
    fs::write(&vocab_path, &original).unwrap();
    p.evaluate().unwrap();

    // a consistent file hash but a broken cross-link is refused as well
    let cls_path = bundle.join("classifiers.json");
    let mut cls: serde_json::Value = serde_json::from_slice(&fs::read(&cls_path).unwrap()).unwrap();
    cls["classifier_vocab_sha256"] = serde_json::json!("0".repeat(64));
    let bytes = serde_json::to_vec_pretty(&cls).unwrap();
    fs::write(&cls_path, &bytes).unwrap();
    let man_path = bundle.join("manifest.json");
    let mut man: serde_json::Value = serde_json::from_slice(&fs::read(&man_path).unwrap()).unwrap();
    man["files"]["classifiers.json"] = serde_json::json!(pipeline::sha256_hex(&bytes));
    fs::write(&man_path, serde_json::to_vec_pretty(&man).unwrap()).unwrap();
    match p.evaluate() {
        Err(PipelineError::HashMismatch { artifact, .. }) => assert!(artifact.contains("classifier vocabulary")),
        other => panic!("expected a hash mismatch, got {other:?}"),
    }
}

fn mock_kind(behavior: MockBehavior, failing: &[u32]) -> Arc<ExternalKind> {
    let (mut worker, _) = MockWorker::new(behavior);
    for &t in failing {
        worker = worker.fail_training_for(t);
    }
    let handle = WorkerHandle::connect(Box::new(worker), Duration::from_secs(1)).unwrap();
    Arc::new(ExternalKind::new(handle, EpochPolicy::default()))
}

#[test]
fn fixed_p3_worker_yields_all_p3_baseline() {
    let (_dir, config) = setup("kind = \"external\"", &small_spec());
    let mut p = Pipeline::new(config).unwrap();
    p.attach_external(mock_kind(MockBehavior::Fixed(Priority::P3), &[]));
    p.ingest().unwrap();
    let (_, metrics) = p.train_and_evaluate().unwrap();

    let golds = fs::read_to_string(p.run_dir().join("test.jsonl")).unwrap();
    let golds: Vec<Priority> = golds
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            Priority::parse(v["priority"].as_str().unwrap()).unwrap()
        })
        .collect();
    let all_p3 = vec![Priority::P3; golds.len()];
    let baseline = MetricsReport::for_priorities(&golds, &all_p3, Default::default()).unwrap();
    assert_eq!(metrics, baseline);
    assert_eq!(metrics.macro_avg.recall, 0.2);

    // the worker's models cannot be reloaded from the bundle
    assert!(matches!(p.evaluate(), Err(PipelineError::Config(_))));
}

#[test]
fn failed_training_leaves_no_partial_outputs() {
    let (_dir, config) = setup("kind = \"external\"", &small_spec());
    let mut p = Pipeline::new(config).unwrap();
    p.attach_external(mock_kind(MockBehavior::Memorize, &[0, 1, 2, 3]));
    p.ingest().unwrap();
    assert!(p.train().is_err());
    for name in ["bundle", "test.jsonl", "topic_histogram.json", "timing_train.json", ".train.partial"] {
        assert!(!p.run_dir().join(name).exists(), "{name} left behind");
    }
}

#[test]
fn predict_stream_handles_malformed_lines() {
    let (_dir, config) = setup("", &small_spec());
    let mut p = Pipeline::new(config).unwrap();
    p.ingest().unwrap();
    p.train().unwrap();
    let bundle = p.load_bundle().unwrap();
    let input = concat!(
        r#"{"bug_id": 1, "summary": "t0w1 t0w2 cue0", "component": "comp0"}"#,
        "\n",
        "{not json\n",
        "\n",
        r#"{"bug_id": 2, "summary": "t2w0 t2w3 cue4", "description": "cue4", "component": "comp2"}"#,
        "\n",
    );
    let run = || {
        let mut out = Vec::new();
        let summary = predict_stream(&bundle.predictor, input.as_bytes(), &mut out).unwrap();
        (summary, String::from_utf8(out).unwrap())
    };
    let (summary, out) = run();
    assert_eq!(summary.predicted, 2);
    assert_eq!(summary.errors, 1);
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["bug_id"], 1);
    assert_eq!(lines[1]["line"], 2);
    assert_eq!(lines[2]["bug_id"], 2);
    assert_eq!(lines[2]["scores"].as_array().unwrap().len(), 5);
    assert_eq!(run().1, out);
}

#[test]
fn gaussian_kind_trains_and_reloads() {
    let (_dir, config) = setup("kind = \"gaussian_nb\"", &small_spec());
    let mut p = Pipeline::new(config).unwrap();
    p.ingest().unwrap();
    p.train().unwrap();
    let m = p.evaluate().unwrap();
    assert_eq!(m.total, 60);
    let loaded = p.load_bundle().unwrap();
    assert_eq!(loaded.manifest.classifier_kind, "gaussian_nb");
}
