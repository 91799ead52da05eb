//! Seeded generators for corpora with known structure.
//!
//! Used as oracles by the test suites: a planted-topic count corpus for the
//! topic model and synthetic tracker reports with topic-dependent priority
//! labels for the classifiers and the pipeline.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BugReport, Lifecycle, Priority, Resolution, Status};
use crate::textprep::{build_vocabulary, vectorize, CountVector, Vocabulary};

/// Token for word `j` of planted topic `k`.
pub fn topic_word(k: usize, j: usize) -> String {
    format!("t{k}w{j}")
}

/// Within-topic word weights: 1/sqrt(j+1), normalized.
pub fn lexicon_weights(words: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..words).map(|j| 1.0 / ((j + 1) as f64).sqrt()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub num_topics: usize,
    pub words_per_topic: usize,
    pub docs: usize,
    pub doc_len: usize,
    /// Probability that a token comes from the document's own topic;
    /// the rest come from a uniformly chosen other topic.
    pub purity: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            num_topics: 3,
            words_per_topic: 10,
            docs: 300,
            doc_len: 50,
            purity: 0.85,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub tokens: Vec<Vec<String>>,
    pub docs: Vec<CountVector>,
    pub vocab: Vocabulary,
    /// Planted dominant topic of each document.
    pub labels: Vec<usize>,
    /// Planted topic-word distributions over `vocab` indices.
    pub phi: Vec<Vec<f64>>,
}

pub fn planted_corpus(spec: &PlantedSpec) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = lexicon_weights(spec.words_per_topic);
    let word_dist = WeightedIndex::new(&weights).expect("positive weights");
    let k = spec.num_topics;

    let mut tokens = Vec::with_capacity(spec.docs);
    let mut labels = Vec::with_capacity(spec.docs);
    for d in 0..spec.docs {
        let own = d % k;
        let doc: Vec<String> = (0..spec.doc_len)
            .map(|_| {
                let topic = if k == 1 || rng.gen::<f64>() < spec.purity {
                    own
                } else {
                    let other = rng.gen_range(0..k - 1);
                    if other >= own {
                        other + 1
                    } else {
                        other
                    }
                };
                topic_word(topic, word_dist.sample(&mut rng))
            })
            .collect();
        tokens.push(doc);
        labels.push(own);
    }

    // every lexicon word is listed once so the vocabulary is complete even
    // if sampling missed a rare word
    let mut coverage = tokens.clone();
    coverage.push((0..k).flat_map(|t| (0..spec.words_per_topic).map(move |j| topic_word(t, j))).collect());
    let vocab = build_vocabulary(&coverage, 1).expect("non-empty corpus");
    let docs = tokens.iter().map(|t| vectorize(t, &vocab)).collect();
    let phi = (0..k)
        .map(|t| {
            let mut row = vec![0.0; vocab.len()];
            for (j, w) in weights.iter().enumerate() {
                let idx = vocab.index_of(&topic_word(t, j)).expect("lexicon word in vocabulary");
                row[idx as usize] = *w;
            }
            row
        })
        .collect();
    PlantedCorpus {
        tokens,
        docs,
        vocab,
        labels,
        phi,
    }
}

#[derive(Debug, Clone)]
pub struct TrackerSpec {
    pub reports: usize,
    pub words_per_topic: usize,
    /// Lexicon tokens per report.
    pub topic_tokens: usize,
    /// Cue tokens per report.
    pub cue_tokens: usize,
    /// Probability that a cue token points at the report's label; otherwise
    /// the cue is uniform over the five cues.
    pub cue_fidelity: f64,
    /// When set, the cue-to-label mapping is rotated by the topic index, so
    /// a cue means different things in different topics.
    pub permute_cues: bool,
    /// One label distribution per topic, `P1..P5`.
    pub label_priors: Vec<[f64; Priority::COUNT]>,
    pub first_id: u64,
    pub seed: u64,
}

impl Default for TrackerSpec {
    fn default() -> Self {
        TrackerSpec {
            reports: 600,
            words_per_topic: 10,
            topic_tokens: 20,
            cue_tokens: 3,
            cue_fidelity: 0.8,
            permute_cues: false,
            label_priors: vec![
                [0.4, 0.3, 0.2, 0.05, 0.05],
                [0.05, 0.15, 0.6, 0.15, 0.05],
                [0.05, 0.05, 0.2, 0.3, 0.4],
            ],
            first_id: 1,
            seed: 11,
        }
    }
}

impl TrackerSpec {
    pub fn num_topics(&self) -> usize {
        self.label_priors.len()
    }
}

/// Reports plus the topic each was generated from.
#[derive(Debug, Clone)]
pub struct TrackerCorpus {
    pub reports: Vec<BugReport>,
    pub topics: Vec<usize>,
}

pub fn cue_word(c: usize) -> String {
    format!("cue{c}")
}

/// Resolved-fixed reports, one component per topic, ids ascending.
pub fn tracker_corpus(spec: &TrackerSpec) -> TrackerCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.num_topics();
    let word_dist = WeightedIndex::new(lexicon_weights(spec.words_per_topic)).expect("positive weights");
    let label_dists: Vec<WeightedIndex<f64>> = spec
        .label_priors
        .iter()
        .map(|p| WeightedIndex::new(p).expect("valid label prior"))
        .collect();
    let status = Status::new(Lifecycle::Resolved, Resolution::Fixed).expect("valid status");

    let mut reports = Vec::with_capacity(spec.reports);
    let mut topics = Vec::with_capacity(spec.reports);
    for i in 0..spec.reports {
        let topic = i % k;
        let label = Priority::ALL[label_dists[topic].sample(&mut rng)];
        let summary: Vec<String> = (0..spec.topic_tokens)
            .map(|_| topic_word(topic, word_dist.sample(&mut rng)))
            .collect();
        let cue_of_label = if spec.permute_cues {
            (label.index() + topic) % Priority::COUNT
        } else {
            label.index()
        };
        let cues: Vec<String> = (0..spec.cue_tokens)
            .map(|_| {
                if rng.gen::<f64>() < spec.cue_fidelity {
                    cue_word(cue_of_label)
                } else {
                    cue_word(rng.gen_range(0..Priority::COUNT))
                }
            })
            .collect();
        let bug_id = spec.first_id + i as u64;
        reports.push(BugReport {
            bug_id,
            summary: summary.join(" "),
            description: cues.join(" "),
            product: "Synthetic".into(),
            component: format!("comp{topic}"),
            status,
            priority: Some(label),
            order_key: bug_id as i64,
        });
        topics.push(topic);
    }
    TrackerCorpus { reports, topics }
}

/// One topic, a dominant P3 share and a single weak cue per report.
pub fn imbalanced_spec(reports: usize, p3_share: f64, seed: u64) -> TrackerSpec {
    let rest = (1.0 - p3_share) / 4.0;
    TrackerSpec {
        reports,
        topic_tokens: 15,
        cue_tokens: 1,
        cue_fidelity: 0.2,
        permute_cues: false,
        label_priors: vec![[rest, rest, p3_share, rest, rest]],
        seed,
        ..TrackerSpec::default()
    }
}
