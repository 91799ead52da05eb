//! Model bundle: vocabularies, topic model and classifier bank, linked by
//! content hashes.
//!
//! ```text
//! bundle/
//!   manifest.json          file hashes + cross-links
//!   tokenizers.json        topic and classifier tokenizer settings
//!   topic_vocab.jsonl
//!   classifier_vocab.jsonl
//!   lda.txt
//!   classifiers.json       routed bank; names the vocabulary and model it expects
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::classify::{ClassifierRegistry, RoutedPredictor, TopicRoutedClassifier};
use crate::textprep::{TokenizerConfig, Vocabulary};
use crate::topics::LdaModel;

pub const BUNDLE_FORMAT: &str = "bugprio-bundle v1";

const TOKENIZERS: &str = "tokenizers.json";
const TOPIC_VOCAB: &str = "topic_vocab.jsonl";
const CLASSIFIER_VOCAB: &str = "classifier_vocab.jsonl";
const LDA: &str = "lda.txt";
const CLASSIFIERS: &str = "classifiers.json";
const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub classifier_kind: String,
    pub num_topics: usize,
    pub seed: u64,
    /// File name to sha256.
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Tokenizers {
    topic: TokenizerConfig,
    topic_min_count: u32,
    classifier: TokenizerConfig,
    classifier_min_count: u32,
}

#[derive(Serialize, Deserialize)]
struct Classifiers {
    topic_vocab_sha256: String,
    classifier_vocab_sha256: String,
    lda_sha256: String,
    router: serde_json::Value,
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("bundle parts serialize");
    out.push(b'\n');
    out
}

/// Writes the bundle to `dir` via a sibling temporary directory, so `dir`
/// either holds a complete bundle or is left untouched. Returns the sha256
/// of the bundle manifest, which identifies the bundle.
pub fn save_bundle(dir: &Path, predictor: &RoutedPredictor, seed: u64) -> Result<String, PipelineError> {
    let mut parts: Vec<(&str, Vec<u8>)> = Vec::new();

    let tokenizers = Tokenizers {
        topic: predictor.topic_tokenizer.clone(),
        topic_min_count: predictor.topic_vocab.min_count(),
        classifier: predictor.classifier_tokenizer.clone(),
        classifier_min_count: predictor.classifier_vocab.min_count(),
    };
    parts.push((TOKENIZERS, json_bytes(&tokenizers)));

    let mut buf = Vec::new();
    predictor.topic_vocab.write_jsonl(&mut buf)?;
    parts.push((TOPIC_VOCAB, buf));
    let mut buf = Vec::new();
    predictor.classifier_vocab.write_jsonl(&mut buf)?;
    parts.push((CLASSIFIER_VOCAB, buf));
    let mut buf = Vec::new();
    predictor.lda.write_to(&mut buf)?;
    parts.push((LDA, buf));

    let classifiers = Classifiers {
        topic_vocab_sha256: predictor.topic_vocab.content_hash(),
        classifier_vocab_sha256: predictor.classifier_vocab.content_hash(),
        lda_sha256: predictor.lda.content_hash(),
        router: predictor.router.to_json()?,
    };
    parts.push((CLASSIFIERS, json_bytes(&classifiers)));

    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        classifier_kind: predictor.router.kind().to_string(),
        num_topics: predictor.lda.num_topics(),
        seed,
        files: parts
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect(),
    };
    let manifest_bytes = json_bytes(&manifest);
    parts.push((MANIFEST, manifest_bytes.clone()));

    let staging = sibling(dir, ".partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
    }
    let write_all = || -> Result<(), PipelineError> {
        fs::create_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
        for (name, bytes) in &parts {
            let path = staging.join(name);
            fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        fs::rename(&staging, dir).map_err(|e| PipelineError::io(dir, e))
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    Ok(sha256_hex(&manifest_bytes))
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

fn mismatch(artifact: &str, expected: &str, found: &str) -> PipelineError {
    PipelineError::HashMismatch {
        artifact: artifact.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

#[derive(Debug)]
pub struct LoadedBundle {
    pub manifest: BundleManifest,
    /// sha256 of `manifest.json`.
    pub hash: String,
    pub predictor: RoutedPredictor,
}

/// Reads a bundle, refusing it if any file or cross-link hash disagrees.
pub fn load_bundle(dir: &Path, registry: &ClassifierRegistry) -> Result<LoadedBundle, PipelineError> {
    let read = |name: &str| -> Result<Vec<u8>, PipelineError> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(PipelineError::MissingArtifact(path));
        }
        fs::read(&path).map_err(|e| PipelineError::io(&path, e))
    };
    let manifest_bytes = read(MANIFEST)?;
    let manifest: BundleManifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(PipelineError::Config(format!("unsupported bundle format `{}`", manifest.format)));
    }

    let mut files = BTreeMap::new();
    for name in [TOKENIZERS, TOPIC_VOCAB, CLASSIFIER_VOCAB, LDA, CLASSIFIERS] {
        let bytes = read(name)?;
        let expected = manifest
            .files
            .get(name)
            .ok_or_else(|| PipelineError::Config(format!("bundle manifest does not list {name}")))?;
        let found = sha256_hex(&bytes);
        if &found != expected {
            return Err(mismatch(name, expected, &found));
        }
        files.insert(name, bytes);
    }

    let tokenizers: Tokenizers = serde_json::from_slice(&files[TOKENIZERS])?;
    let topic_vocab = Vocabulary::read_jsonl(&files[TOPIC_VOCAB][..], tokenizers.topic_min_count)?;
    let classifier_vocab = Vocabulary::read_jsonl(&files[CLASSIFIER_VOCAB][..], tokenizers.classifier_min_count)?;
    let lda = LdaModel::read_from(&files[LDA][..])?;
    let classifiers: Classifiers = serde_json::from_slice(&files[CLASSIFIERS])?;

    let topic_hash = topic_vocab.content_hash();
    if lda.vocab_hash() != topic_hash {
        return Err(mismatch("lda.txt vocabulary link", lda.vocab_hash(), &topic_hash));
    }
    if classifiers.topic_vocab_sha256 != topic_hash {
        return Err(mismatch("classifiers.json topic vocabulary link", &classifiers.topic_vocab_sha256, &topic_hash));
    }
    let classifier_hash = classifier_vocab.content_hash();
    if classifiers.classifier_vocab_sha256 != classifier_hash {
        return Err(mismatch(
            "classifiers.json classifier vocabulary link",
            &classifiers.classifier_vocab_sha256,
            &classifier_hash,
        ));
    }
    let lda_hash = lda.content_hash();
    if classifiers.lda_sha256 != lda_hash {
        return Err(mismatch("classifiers.json topic model link", &classifiers.lda_sha256, &lda_hash));
    }

    let router = TopicRoutedClassifier::from_json(&classifiers.router, registry)?;
    if router.num_topics() != lda.num_topics() {
        return Err(PipelineError::Config(format!(
            "classifier bank has {} topics, topic model has {}",
            router.num_topics(),
            lda.num_topics()
        )));
    }
    Ok(LoadedBundle {
        hash: sha256_hex(&manifest_bytes),
        manifest,
        predictor: RoutedPredictor {
            topic_tokenizer: tokenizers.topic,
            topic_vocab,
            lda,
            classifier_tokenizer: tokenizers.classifier,
            classifier_vocab,
            router,
        },
    })
}
