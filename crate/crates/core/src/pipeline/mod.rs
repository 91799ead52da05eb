//! End-to-end commands: ingest, train, evaluate, predict and report.
//!
//! All outputs of one configuration live under its `output_dir`:
//!
//! ```text
//! corpus.jsonl  rejects.jsonl  distribution.json          (ingest)
//! bundle/  test.jsonl  topic_histogram.json  timing_train.json   (train)
//! predictions.jsonl  metrics.json  metrics.csv  confusion.csv
//! timing_evaluate.json                                     (evaluate)
//! manifest.json                                            (every command)
//! ```
//!
//! `manifest.json` lists every other file with its size and sha256 and is
//! rewritten at the end of each command.

use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{spawn_worker, BridgeError, ExternalKind, EXTERNAL_KIND};
use crate::classify::router::train_topic_routed;
use crate::classify::{predict_routed, ClassifierKind, ClassifierRegistry, ClassifyError, RoutedPredictor, Sample};
use crate::corpus::{
    chronological_split, filter_order_key_range, filter_training_eligible, parse_dataset, read_canonical_jsonl,
    write_canonical_jsonl, write_rejects_jsonl, BugReport, CorpusError, Lifecycle, Priority, Resolution, Status,
};
use crate::evaluate::{distribution_report, DistributionReport, EvalError, MetricsReport, TimingReport};
use crate::textprep::{build_vocabulary, raw_text, tokenize, vectorize, TextError};
use crate::topics::{assign_topic, fit_lda, TopicError};

pub mod bundle;
pub mod config;

pub use bundle::{load_bundle, save_bundle, sha256_hex, BundleManifest, LoadedBundle};
pub use config::PipelineConfig;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const DISTRIBUTION_FILE: &str = "distribution.json";
pub const BUNDLE_DIR: &str = "bundle";
pub const TEST_FILE: &str = "test.jsonl";
pub const HISTOGRAM_FILE: &str = "topic_histogram.json";
pub const TRAIN_TIMING_FILE: &str = "timing_train.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const EVAL_TIMING_FILE: &str = "timing_evaluate.json";
pub const RUN_MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("hash mismatch for {artifact}: expected {expected}, found {found}")]
    HashMismatch {
        artifact: String,
        expected: String,
        found: String,
    },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> PipelineError {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Bad configuration or input data, as opposed to a failure while
    /// running; the CLI maps these to exit code 2.
    pub fn is_input_error(&self) -> bool {
        match self {
            PipelineError::Config(_)
            | PipelineError::MissingArtifact(_)
            | PipelineError::Data(_)
            | PipelineError::Io { .. } => true,
            PipelineError::Corpus(e) => !matches!(e, CorpusError::Io(_)),
            PipelineError::Text(e) => matches!(e, TextError::MalformedVocabulary { .. } | TextError::NoFields),
            PipelineError::Classify(ClassifyError::UnknownKind(_)) => true,
            _ => false,
        }
    }

    /// Short machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::MissingArtifact(_) => "missing_artifact",
            PipelineError::HashMismatch { .. } => "hash_mismatch",
            PipelineError::Data(_) => "data",
            PipelineError::Corpus(_) => "corpus",
            PipelineError::Text(_) => "text",
            PipelineError::Topic(_) => "topics",
            PipelineError::Classify(_) => "classify",
            PipelineError::Eval(_) => "evaluate",
            PipelineError::Bridge(_) => "bridge",
            PipelineError::Json(_) => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub ingested: usize,
    pub rejected: usize,
    pub eligible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicHistogram {
    pub num_topics: usize,
    pub counts: Vec<usize>,
    /// Topics below the minimum size, served by the pooled classifier.
    pub fallback_topics: Vec<usize>,
    pub top_words: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_size: usize,
    pub test_size: usize,
    pub bundle_hash: String,
    pub histogram: TopicHistogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub predicted: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifacts: Vec<ManifestEntry>,
}

/// Commands bound to one configuration and a classifier registry.
pub struct Pipeline {
    config: PipelineConfig,
    registry: ClassifierRegistry,
    external: Option<Arc<ExternalKind>>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| PipelineError::io(path, e))?))
}

fn read_reports(path: &Path) -> Result<Vec<BugReport>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(read_canonical_jsonl(file)?)
}

impl Pipeline {
    /// Builtin naive Bayes kinds; `external` is attached lazily from the
    /// `[external]` section when training needs it.
    pub fn new(config: PipelineConfig) -> Result<Pipeline, PipelineError> {
        config.validate()?;
        let registry = ClassifierRegistry::builtin(config.classifier.laplace, config.classifier.var_smoothing);
        Ok(Pipeline {
            config,
            registry,
            external: None,
        })
    }

    /// Registers an extra classifier kind, replacing any of the same name.
    pub fn register_kind(&mut self, kind: Arc<dyn ClassifierKind>) {
        self.registry.register(kind);
    }

    /// Uses an already connected worker for the `external` kind.
    pub fn attach_external(&mut self, kind: Arc<ExternalKind>) {
        self.registry.register(kind.clone());
        self.external = Some(kind);
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn registry(&self) -> &ClassifierRegistry {
        &self.registry
    }

    pub fn run_dir(&self) -> &Path {
        &self.config.output_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn ensure_run_dir(&self) -> Result<(), PipelineError> {
        let dir = self.run_dir();
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
    }

    pub fn ingest(&self) -> Result<IngestSummary, PipelineError> {
        let ds = &self.config.dataset;
        let file = File::open(&ds.path).map_err(|e| PipelineError::io(&ds.path, e))?;
        let outcome = parse_dataset(file, ds.format, &ds.columns)?;
        let mut reports = outcome.reports;
        if let Some([from, to]) = ds.order_key_range {
            reports = filter_order_key_range(&reports, from, to);
        }
        self.ensure_run_dir()?;
        let mut out = create(&self.path(CORPUS_FILE))?;
        write_canonical_jsonl(&reports, &mut out)?;
        out.flush().map_err(|e| PipelineError::io(&self.path(CORPUS_FILE), e))?;
        let mut out = create(&self.path(REJECTS_FILE))?;
        write_rejects_jsonl(&outcome.rejects, &mut out)?;
        out.flush().map_err(|e| PipelineError::io(&self.path(REJECTS_FILE), e))?;
        write_json(&self.path(DISTRIBUTION_FILE), &distribution_report(&reports))?;
        let summary = IngestSummary {
            ingested: reports.len(),
            rejected: outcome.rejects.len(),
            eligible: filter_training_eligible(&reports).len(),
        };
        info!(
            "ingested {} reports ({} rejected, {} eligible for training)",
            summary.ingested, summary.rejected, summary.eligible
        );
        self.write_run_manifest()?;
        Ok(summary)
    }

    fn classifier_kind(&mut self) -> Result<Arc<dyn ClassifierKind>, PipelineError> {
        let name = self.config.classifier.kind.clone();
        if name == EXTERNAL_KIND && self.external.is_none() {
            let ext = self.config.external.as_ref().ok_or_else(|| {
                PipelineError::Config(
                    "classifier.kind = \"external\" needs an [external] section with a worker command".into(),
                )
            })?;
            let handle = spawn_worker(&ext.command, Duration::from_secs(ext.handshake_timeout_secs))?;
            self.attach_external(Arc::new(ExternalKind::new(handle, ext.epoch_policy()?)));
        }
        Ok(self.registry.get(&name)?)
    }

    /// Filters, splits, fits the topic model, trains the routed bank and
    /// writes the bundle. Returns the in-memory predictor as well.
    pub fn train_predictor(&mut self) -> Result<(TrainSummary, RoutedPredictor), PipelineError> {
        let kind = self.classifier_kind()?;
        let corpus = read_reports(&self.path(CORPUS_FILE))?;
        let eligible = filter_training_eligible(&corpus);
        let (train, test) = chronological_split(&eligible, &self.config.split)?;
        info!("split {} eligible reports into {} train / {} test", eligible.len(), train.len(), test.len());
        let mut timing = TimingReport::new();

        let topic_tokenizer = self.config.topic_tokenizer.resolve()?;
        let lda_config = self.config.lda.resolve(self.config.seed)?;
        let topic_tokens: Vec<Vec<String>> = train.iter().map(|r| tokenize(r, &topic_tokenizer)).collect();
        let topic_vocab = build_vocabulary(&topic_tokens, self.config.topic_tokenizer.min_count)?;
        let topic_docs: Vec<_> = topic_tokens.iter().map(|t| vectorize(t, &topic_vocab)).collect();
        let lda = timing.time("topic_fit", "lda", train.len() as u64, || {
            fit_lda(&topic_docs, &topic_vocab, &lda_config)
        })?;
        let topics = lda
            .training_theta()
            .iter()
            .map(|theta| assign_topic(theta))
            .collect::<Result<Vec<_>, _>>()?;

        let classifier_tokenizer = self.config.classifier_tokenizer.resolve()?;
        let class_tokens: Vec<Vec<String>> = train.iter().map(|r| tokenize(r, &classifier_tokenizer)).collect();
        let classifier_vocab = build_vocabulary(&class_tokens, self.config.classifier_tokenizer.min_count)?;
        let counts: Vec<_> = class_tokens.iter().map(|t| vectorize(t, &classifier_vocab)).collect();
        let texts: Vec<String> = train.iter().map(raw_text).collect();
        let samples: Vec<Sample<'_>> = train
            .iter()
            .enumerate()
            .map(|(i, r)| Sample {
                bug_id: r.bug_id,
                text: &texts[i],
                counts: &counts[i],
            })
            .collect();
        let labels: Vec<Priority> = train.iter().map(|r| r.priority.expect("eligible reports carry a priority")).collect();
        let router = timing.time("train", kind.name(), train.len() as u64, || {
            train_topic_routed(
                kind.as_ref(),
                classifier_vocab.len(),
                lda.num_topics(),
                &topics,
                &samples,
                &labels,
                self.config.classifier.min_topic_size,
            )
        })?;

        let k = lda.num_topics();
        let histogram = TopicHistogram {
            num_topics: k,
            counts: router.topic_sizes().to_vec(),
            fallback_topics: (0..k).filter(|&t| router.uses_fallback(t)).collect(),
            top_words: (0..k)
                .map(|t| {
                    lda.top_words(t, 10)
                        .into_iter()
                        .filter_map(|w| topic_vocab.token(w).map(str::to_string))
                        .collect()
                })
                .collect(),
        };
        let predictor = RoutedPredictor {
            topic_tokenizer,
            topic_vocab,
            lda,
            classifier_tokenizer,
            classifier_vocab,
            router,
        };

        self.ensure_run_dir()?;
        let staging = self.path(".train.partial");
        let result = (|| -> Result<String, PipelineError> {
            if staging.exists() {
                fs::remove_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
            }
            fs::create_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
            let mut out = create(&staging.join(TEST_FILE))?;
            write_canonical_jsonl(&test, &mut out)?;
            out.flush().map_err(|e| PipelineError::io(&staging, e))?;
            drop(out);
            write_json(&staging.join(HISTOGRAM_FILE), &histogram)?;
            write_json(&staging.join(TRAIN_TIMING_FILE), &timing)?;
            let hash = save_bundle(&staging.join(BUNDLE_DIR), &predictor, self.config.seed)?;
            for name in [TEST_FILE, HISTOGRAM_FILE, TRAIN_TIMING_FILE, BUNDLE_DIR] {
                let target = self.path(name);
                if target.is_dir() {
                    fs::remove_dir_all(&target).map_err(|e| PipelineError::io(&target, e))?;
                }
                fs::rename(staging.join(name), &target).map_err(|e| PipelineError::io(&target, e))?;
            }
            Ok(hash)
        })();
        let _ = fs::remove_dir_all(&staging);
        let bundle_hash = result?;
        self.write_run_manifest()?;
        Ok((
            TrainSummary {
                train_size: train.len(),
                test_size: test.len(),
                bundle_hash,
                histogram,
            },
            predictor,
        ))
    }

    pub fn train(&mut self) -> Result<TrainSummary, PipelineError> {
        let result = self.train_predictor().map(|(summary, _)| summary);
        self.shutdown_worker();
        result
    }

    /// Trains and evaluates in one session. Required for the external kind,
    /// whose models live in the worker and cannot be reloaded.
    pub fn train_and_evaluate(&mut self) -> Result<(TrainSummary, MetricsReport), PipelineError> {
        let result = self.train_predictor().and_then(|(summary, predictor)| {
            let metrics = self.evaluate_with(&predictor)?;
            Ok((summary, metrics))
        });
        self.shutdown_worker();
        result
    }

    fn shutdown_worker(&mut self) {
        if let Some(ext) = self.external.take() {
            if let Err(e) = ext.shutdown() {
                log::warn!("worker shutdown failed: {e}");
            }
        }
    }

    pub fn load_bundle(&self) -> Result<LoadedBundle, PipelineError> {
        let dir = self.path(BUNDLE_DIR);
        if !dir.exists() {
            return Err(PipelineError::MissingArtifact(dir));
        }
        load_bundle(&dir, &self.registry).map_err(|e| match e {
            PipelineError::Classify(ClassifyError::NotPersistable(kind)) => not_persistable(&kind),
            PipelineError::Classify(ClassifyError::UnknownKind(kind)) if kind == EXTERNAL_KIND => not_persistable(&kind),
            other => other,
        })
    }

    /// Loads the bundle and scores the held-out split.
    pub fn evaluate(&self) -> Result<MetricsReport, PipelineError> {
        let bundle = self.load_bundle()?;
        self.evaluate_with(&bundle.predictor)
    }

    fn evaluate_with(&self, predictor: &RoutedPredictor) -> Result<MetricsReport, PipelineError> {
        let test = read_reports(&self.path(TEST_FILE))?;
        if test.is_empty() {
            return Err(PipelineError::Data("test split is empty".into()));
        }
        let mut timing = TimingReport::new();
        let start = Instant::now();
        let predictions = predictor.predict_reports(&test)?;
        timing.record("test", predictor.router.kind(), start.elapsed(), test.len() as u64);

        let golds: Vec<Priority> = test
            .iter()
            .map(|r| r.priority.ok_or_else(|| PipelineError::Data(format!("test report {} has no priority", r.bug_id))))
            .collect::<Result<_, _>>()?;
        let preds: Vec<Priority> = predictions.iter().map(|p| p.priority).collect();
        let metrics = MetricsReport::for_priorities(&golds, &preds, self.config.classifier.zero_division)?;

        let mut out = create(&self.path(PREDICTIONS_FILE))?;
        for p in &predictions {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n").map_err(|e| PipelineError::io(&self.path(PREDICTIONS_FILE), e))?;
        }
        out.flush().map_err(|e| PipelineError::io(&self.path(PREDICTIONS_FILE), e))?;
        write_json(&self.path(METRICS_FILE), &metrics)?;
        let csv_path = self.path(METRICS_CSV_FILE);
        fs::write(&csv_path, metrics.to_csv()).map_err(|e| PipelineError::io(&csv_path, e))?;
        let cm_path = self.path(CONFUSION_FILE);
        fs::write(&cm_path, metrics.confusion_csv()).map_err(|e| PipelineError::io(&cm_path, e))?;
        write_json(&self.path(EVAL_TIMING_FILE), &timing)?;
        self.write_run_manifest()?;
        Ok(metrics)
    }

    /// Human-readable summary of whatever the run directory holds.
    pub fn report(&self) -> Result<String, PipelineError> {
        let mut out = String::new();
        let mut any = false;
        if self.path(DISTRIBUTION_FILE).exists() {
            let d: DistributionReport = read_json(&self.path(DISTRIBUTION_FILE))?;
            out += "== priority distribution ==\n";
            out += &d.to_table();
            any = true;
        }
        if self.path(HISTOGRAM_FILE).exists() {
            let h: TopicHistogram = read_json(&self.path(HISTOGRAM_FILE))?;
            out += "\n== topics ==\n";
            for t in 0..h.num_topics {
                let marker = if h.fallback_topics.contains(&t) { " (fallback)" } else { "" };
                out += &format!("{t:>3} {:>8}{marker}  {}\n", h.counts[t], h.top_words[t].join(" "));
            }
            any = true;
        }
        if self.path(METRICS_FILE).exists() {
            let m: MetricsReport = read_json(&self.path(METRICS_FILE))?;
            out += "\n== metrics ==\n";
            out += &m.to_table();
            any = true;
        }
        for name in [TRAIN_TIMING_FILE, EVAL_TIMING_FILE] {
            if self.path(name).exists() {
                let t: TimingReport = read_json(&self.path(name))?;
                out += &format!("\n== timing ({name}) ==\n");
                out += &t.to_table();
                any = true;
            }
        }
        if !any {
            return Err(PipelineError::MissingArtifact(self.run_dir().to_path_buf()));
        }
        Ok(out)
    }

    /// Rewrites `manifest.json` from the current contents of the run
    /// directory.
    pub fn write_run_manifest(&self) -> Result<RunManifest, PipelineError> {
        let root = self.run_dir();
        let mut artifacts = Vec::new();
        collect_artifacts(root, root, &mut artifacts)?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest { artifacts };
        write_json(&self.path(RUN_MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

fn collect_artifacts(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<(), PipelineError> {
    for entry in fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || name.ends_with(".partial") {
            continue;
        }
        if path.is_dir() {
            collect_artifacts(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            if rel == RUN_MANIFEST_FILE {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            out.push(ManifestEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
    }
    Ok(())
}

/// Incoming report for `predict`; only `bug_id` is required.
#[derive(Debug, Deserialize)]
struct PredictInput {
    bug_id: u64,
    #[serde(default)]
    summary: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    product: String,
    #[serde(default)]
    component: String,
}

#[derive(Serialize)]
struct PredictErrorLine {
    line: usize,
    error: String,
}

/// Reads one JSON report per line and writes one prediction (or error
/// object) per non-blank line, in input order.
pub fn predict_stream<R: BufRead, W: Write>(
    predictor: &RoutedPredictor,
    input: R,
    mut output: W,
) -> Result<PredictSummary, PipelineError> {
    let mut summary = PredictSummary { predicted: 0, errors: 0 };
    let io = |e| PipelineError::io(Path::new("<predict output>"), e);
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(Path::new("<predict input>"), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<PredictInput>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| {
                let report = BugReport {
                    bug_id: rec.bug_id,
                    summary: rec.summary,
                    description: rec.description,
                    product: rec.product,
                    component: rec.component,
                    status: Status::new(Lifecycle::New, Resolution::None).expect("valid status"),
                    priority: None,
                    order_key: rec.bug_id as i64,
                };
                predict_routed(predictor, &report).map_err(|e| e.to_string())
            });
        match outcome {
            Ok(p) => {
                serde_json::to_writer(&mut output, &p)?;
                summary.predicted += 1;
            }
            Err(error) => {
                serde_json::to_writer(&mut output, &PredictErrorLine { line: i + 1, error })?;
                summary.errors += 1;
            }
        }
        output.write_all(b"\n").map_err(io)?;
    }
    output.flush().map_err(io)?;
    Ok(summary)
}

fn not_persistable(kind: &str) -> PipelineError {
    PipelineError::Config(format!(
        "bundle uses the `{kind}` classifier, whose models live in the worker; run `train --evaluate` instead"
    ))
}
