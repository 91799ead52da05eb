//! LDA topic model fitted by collapsed Gibbs sampling.
//!
//! Per-token topic assignments are resampled from
//! `p(z = k) ∝ (n_kw + β) / (n_k + Vβ) · (n_dk + α)`. Topic-word and
//! document-topic estimates come from the final sweep's counts. Held-out
//! documents are folded in with the topic-word counts frozen.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::textprep::{CountVector, Vocabulary};

pub const MODEL_FORMAT_TAG: &str = "bugprio-lda v1";

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("cannot fit a topic model on an empty corpus")]
    EmptyCorpus,
    #[error("corpus contains no in-vocabulary tokens")]
    NoTokens,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("token index {index} out of range for vocabulary of {size}")]
    IndexOutOfRange { index: u32, size: usize },
    #[error("invalid LDA configuration: {0}")]
    InvalidConfig(String),
    #[error("topic distribution sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub num_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub inference_iterations: usize,
}

impl LdaConfig {
    /// Conventional defaults with `alpha = 50 / num_topics`.
    pub fn with_topics(num_topics: usize) -> LdaConfig {
        LdaConfig {
            num_topics,
            alpha: 50.0 / num_topics.max(1) as f64,
            beta: 0.01,
            iterations: 1000,
            burn_in: 200,
            seed: 0,
            inference_iterations: 100,
        }
    }

    pub fn validate(&self) -> Result<(), TopicError> {
        let bad = |msg: String| Err(TopicError::InvalidConfig(msg));
        if self.num_topics == 0 {
            return bad("num_topics must be at least 1".into());
        }
        if self.num_topics > u16::MAX as usize {
            return bad(format!("num_topics {} is too large", self.num_topics));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.iterations <= self.burn_in {
            return bad(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            ));
        }
        Ok(())
    }
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig::with_topics(10)
    }
}

/// Sampler state exposed to sweep observers.
pub struct SweepStats<'a> {
    pub sweep: usize,
    state: &'a GibbsState,
}

impl SweepStats<'_> {
    pub fn topic_totals(&self) -> &[u64] {
        &self.state.topic_totals
    }

    /// Sum of the topic totals; equals the corpus token count when counts
    /// are conserved.
    pub fn assigned_tokens(&self) -> u64 {
        self.state.topic_totals.iter().sum()
    }

    /// Sum of all topic-word cells.
    pub fn topic_word_sum(&self) -> u64 {
        self.state.topic_word.iter().map(|&c| c as u64).sum()
    }

    /// Sum of all document-topic cells.
    pub fn doc_topic_sum(&self) -> u64 {
        self.state.doc_topic.iter().map(|&c| c as u64).sum()
    }

    /// Collapsed joint log-likelihood `log p(w, z)`.
    pub fn log_likelihood(&self) -> f64 {
        self.state.log_likelihood()
    }
}

struct GibbsState {
    num_topics: usize,
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
    doc_topic: Vec<u32>,
    words: Vec<Vec<u32>>,
    assignments: Vec<Vec<u16>>,
}

impl GibbsState {
    fn init(docs: &[CountVector], vocab_size: usize, config: &LdaConfig, rng: &mut ChaCha8Rng) -> Self {
        let k = config.num_topics;
        let mut state = GibbsState {
            num_topics: k,
            vocab_size,
            alpha: config.alpha,
            beta: config.beta,
            topic_word: vec![0; k * vocab_size],
            topic_totals: vec![0; k],
            doc_topic: vec![0; k * docs.len()],
            words: docs.iter().map(|d| d.expand().collect()).collect(),
            assignments: Vec::with_capacity(docs.len()),
        };
        for d in 0..docs.len() {
            let mut z = Vec::with_capacity(state.words[d].len());
            for &w in &state.words[d] {
                let topic = rng.gen_range(0..k);
                state.topic_word[topic * vocab_size + w as usize] += 1;
                state.topic_totals[topic] += 1;
                state.doc_topic[d * k + topic] += 1;
                z.push(topic as u16);
            }
            state.assignments.push(z);
        }
        state
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng, weights: &mut [f64]) {
        let k = self.num_topics;
        let v = self.vocab_size;
        let vbeta = v as f64 * self.beta;
        for d in 0..self.words.len() {
            for i in 0..self.words[d].len() {
                let w = self.words[d][i] as usize;
                let old = self.assignments[d][i] as usize;
                self.topic_word[old * v + w] -= 1;
                self.topic_totals[old] -= 1;
                self.doc_topic[d * k + old] -= 1;

                let mut total = 0.0;
                for (t, weight) in weights.iter_mut().enumerate() {
                    let word_term = (self.topic_word[t * v + w] as f64 + self.beta)
                        / (self.topic_totals[t] as f64 + vbeta);
                    total += word_term * (self.doc_topic[d * k + t] as f64 + self.alpha);
                    *weight = total;
                }
                let new = sample_cumulative(weights, total, rng);

                self.topic_word[new * v + w] += 1;
                self.topic_totals[new] += 1;
                self.doc_topic[d * k + new] += 1;
                self.assignments[d][i] = new as u16;
            }
        }
    }

    fn log_likelihood(&self) -> f64 {
        let k = self.num_topics;
        let v = self.vocab_size;
        let (alpha, beta) = (self.alpha, self.beta);
        let mut ll = 0.0;
        let lg_beta = ln_gamma(beta);
        for t in 0..k {
            ll += ln_gamma(v as f64 * beta) - ln_gamma(self.topic_totals[t] as f64 + v as f64 * beta);
            for w in 0..v {
                let c = self.topic_word[t * v + w];
                if c > 0 {
                    ll += ln_gamma(c as f64 + beta) - lg_beta;
                }
            }
        }
        let lg_alpha = ln_gamma(alpha);
        for (d, words) in self.words.iter().enumerate() {
            ll += ln_gamma(k as f64 * alpha) - ln_gamma(words.len() as f64 + k as f64 * alpha);
            for t in 0..k {
                let c = self.doc_topic[d * k + t];
                if c > 0 {
                    ll += ln_gamma(c as f64 + alpha) - lg_alpha;
                }
            }
        }
        ll
    }
}

/// Index of the first cumulative weight exceeding a uniform draw on `[0, total)`.
fn sample_cumulative(cumulative: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let u = rng.gen::<f64>() * total;
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// A fitted LDA model. Immutable after fitting; safe to share for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    num_topics: usize,
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    inference_iterations: usize,
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
    phi: Vec<f64>,
    doc_theta: Vec<Vec<f64>>,
    vocab_hash: String,
}

pub fn fit_lda(docs: &[CountVector], vocab: &Vocabulary, config: &LdaConfig) -> Result<LdaModel, TopicError> {
    fit_lda_observed(docs, vocab, config, |_| {})
}

/// Like [`fit_lda`], calling `observer` after every sweep.
pub fn fit_lda_observed<F>(
    docs: &[CountVector],
    vocab: &Vocabulary,
    config: &LdaConfig,
    mut observer: F,
) -> Result<LdaModel, TopicError>
where
    F: FnMut(&SweepStats<'_>),
{
    config.validate()?;
    if docs.is_empty() {
        return Err(TopicError::EmptyCorpus);
    }
    let vocab_size = vocab.len();
    if vocab_size == 0 {
        return Err(TopicError::EmptyVocabulary);
    }
    for doc in docs {
        if let Some(&(index, _)) = doc.entries().iter().find(|&&(i, _)| i as usize >= vocab_size) {
            return Err(TopicError::IndexOutOfRange { index, size: vocab_size });
        }
    }
    if docs.iter().all(CountVector::is_empty) {
        return Err(TopicError::NoTokens);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = GibbsState::init(docs, vocab_size, config, &mut rng);
    let mut weights = vec![0.0; config.num_topics];
    for sweep in 0..config.iterations {
        state.sweep(&mut rng, &mut weights);
        observer(&SweepStats { sweep, state: &state });
    }

    let k = config.num_topics;
    let doc_theta = state
        .words
        .iter()
        .enumerate()
        .map(|(d, words)| {
            let counts = &state.doc_topic[d * k..(d + 1) * k];
            theta_from_counts(counts, words.len(), config.alpha)
        })
        .collect();

    Ok(LdaModel::from_parts(
        ModelHeader {
            num_topics: k,
            vocab_size,
            alpha: config.alpha,
            beta: config.beta,
            seed: config.seed,
            inference_iterations: config.inference_iterations,
            vocab_hash: vocab.content_hash(),
        },
        state.topic_word,
        doc_theta,
    ))
}

fn theta_from_counts(counts: &[u32], len: usize, alpha: f64) -> Vec<f64> {
    let denom = len as f64 + counts.len() as f64 * alpha;
    counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
}

struct ModelHeader {
    num_topics: usize,
    vocab_size: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    inference_iterations: usize,
    vocab_hash: String,
}

impl LdaModel {
    fn from_parts(header: ModelHeader, topic_word: Vec<u32>, doc_theta: Vec<Vec<f64>>) -> LdaModel {
        let k = header.num_topics;
        let v = header.vocab_size;
        let topic_totals: Vec<u64> = topic_word
            .chunks(v)
            .map(|row| row.iter().map(|&c| c as u64).sum())
            .collect();
        let vbeta = v as f64 * header.beta;
        let mut phi = Vec::with_capacity(k * v);
        for t in 0..k {
            let denom = topic_totals[t] as f64 + vbeta;
            phi.extend(
                topic_word[t * v..(t + 1) * v]
                    .iter()
                    .map(|&c| (c as f64 + header.beta) / denom),
            );
        }
        LdaModel {
            num_topics: k,
            vocab_size: v,
            alpha: header.alpha,
            beta: header.beta,
            seed: header.seed,
            inference_iterations: header.inference_iterations,
            topic_word,
            topic_totals,
            phi,
            doc_theta,
            vocab_hash: header.vocab_hash,
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    pub fn topic_word_count(&self, topic: usize, word: u32) -> u32 {
        self.topic_word[topic * self.vocab_size + word as usize]
    }

    /// `(n_kw + β) / (n_k + Vβ)` for one topic.
    pub fn phi_row(&self, topic: usize) -> &[f64] {
        &self.phi[topic * self.vocab_size..(topic + 1) * self.vocab_size]
    }

    /// θ of each training document, in fitting order. Empty for a model
    /// read back from disk.
    pub fn training_theta(&self) -> &[Vec<f64>] {
        &self.doc_theta
    }

    /// The `n` highest-probability word indices of a topic.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<u32> {
        let row = &self.topic_word[topic * self.vocab_size..(topic + 1) * self.vocab_size];
        let mut idx: Vec<u32> = (0..self.vocab_size as u32).collect();
        idx.sort_by(|&a, &b| row[b as usize].cmp(&row[a as usize]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }

    /// Topic mixture of an unseen document, sampled with topic-word counts
    /// held fixed. The sampler seed is derived from the model seed and the
    /// document contents, so repeated calls agree. An empty document yields
    /// the uniform distribution; unknown indices are ignored.
    pub fn infer_theta(&self, doc: &CountVector) -> Vec<f64> {
        let k = self.num_topics;
        let words: Vec<u32> = doc
            .expand()
            .filter(|&w| (w as usize) < self.vocab_size)
            .collect();
        if words.is_empty() {
            return vec![1.0 / k as f64; k];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ document_fingerprint(doc));
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = words
            .iter()
            .map(|_| {
                let t = rng.gen_range(0..k);
                counts[t] += 1;
                t
            })
            .collect();
        let mut weights = vec![0.0; k];
        for _ in 0..self.inference_iterations {
            for (i, &w) in words.iter().enumerate() {
                counts[z[i]] -= 1;
                let mut total = 0.0;
                for (t, weight) in weights.iter_mut().enumerate() {
                    total += self.phi[t * self.vocab_size + w as usize] * (counts[t] as f64 + self.alpha);
                    *weight = total;
                }
                let new = sample_cumulative(&weights, total, &mut rng);
                counts[new] += 1;
                z[i] = new;
            }
        }
        theta_from_counts(&counts, words.len(), self.alpha)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), TopicError> {
        let mut header = String::new();
        let _ = writeln!(header, "{MODEL_FORMAT_TAG}");
        let _ = writeln!(header, "num_topics {}", self.num_topics);
        let _ = writeln!(header, "vocab_size {}", self.vocab_size);
        let _ = writeln!(header, "alpha {}", self.alpha);
        let _ = writeln!(header, "beta {}", self.beta);
        let _ = writeln!(header, "seed {}", self.seed);
        let _ = writeln!(header, "inference_iterations {}", self.inference_iterations);
        let _ = writeln!(header, "vocab_sha256 {}", self.vocab_hash);
        let _ = writeln!(header, "topic_word");
        out.write_all(header.as_bytes())?;
        for row in self.topic_word.chunks(self.vocab_size) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.write_all(line.join(" ").as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(source: R) -> Result<LdaModel, TopicError> {
        let mut lines = BufReader::new(source).lines();
        let mut next = |what: &str| -> Result<String, TopicError> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| TopicError::Malformed(format!("missing {what}")))
        };
        let tag = next("format tag")?;
        if tag != MODEL_FORMAT_TAG {
            return Err(TopicError::Malformed(format!("unsupported format `{tag}`")));
        }
        fn field<T: std::str::FromStr>(line: String, key: &str) -> Result<T, TopicError> {
            let value = line
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .ok_or_else(|| TopicError::Malformed(format!("expected `{key}`, found `{line}`")))?;
            value
                .parse()
                .map_err(|_| TopicError::Malformed(format!("bad value for `{key}`: `{value}`")))
        }
        let num_topics: usize = field(next("num_topics")?, "num_topics")?;
        let vocab_size: usize = field(next("vocab_size")?, "vocab_size")?;
        let alpha: f64 = field(next("alpha")?, "alpha")?;
        let beta: f64 = field(next("beta")?, "beta")?;
        let seed: u64 = field(next("seed")?, "seed")?;
        let inference_iterations: usize = field(next("inference_iterations")?, "inference_iterations")?;
        let vocab_hash: String = field(next("vocab_sha256")?, "vocab_sha256")?;
        if next("topic_word marker")? != "topic_word" {
            return Err(TopicError::Malformed("expected `topic_word`".into()));
        }
        if num_topics == 0 || vocab_size == 0 {
            return Err(TopicError::Malformed("zero topics or empty vocabulary".into()));
        }
        let mut topic_word = Vec::with_capacity(num_topics * vocab_size);
        for t in 0..num_topics {
            let row = next(&format!("row {t}"))?;
            let before = topic_word.len();
            for cell in row.split(' ') {
                topic_word.push(
                    cell.parse::<u32>()
                        .map_err(|_| TopicError::Malformed(format!("bad count `{cell}` in row {t}")))?,
                );
            }
            if topic_word.len() - before != vocab_size {
                return Err(TopicError::Malformed(format!("row {t} has wrong width")));
            }
        }
        Ok(LdaModel::from_parts(
            ModelHeader {
                num_topics,
                vocab_size,
                alpha,
                beta,
                seed,
                inference_iterations,
                vocab_hash,
            },
            topic_word,
            Vec::new(),
        ))
    }

    /// SHA-256 of the serialized model.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

fn document_fingerprint(doc: &CountVector) -> u64 {
    // FNV-1a over the sparse entries
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &(i, c) in doc.entries() {
        for byte in i.to_le_bytes().into_iter().chain(c.to_le_bytes()) {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub bug_id: u64,
    pub topic: usize,
    pub theta: Vec<f64>,
}

/// Argmax of a topic distribution, ties going to the lowest index.
pub fn assign_topic(theta: &[f64]) -> Result<usize, TopicError> {
    let sum: f64 = theta.iter().sum();
    if theta.is_empty() || !sum.is_finite() || (sum - 1.0).abs() > 1e-6 || theta.iter().any(|&p| p < 0.0) {
        return Err(TopicError::NotNormalized(sum));
    }
    let mut best = 0;
    for (i, &p) in theta.iter().enumerate().skip(1) {
        if p > theta[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn topic_histogram(assignments: &[TopicAssignment], num_topics: usize) -> Vec<usize> {
    let mut hist = vec![0; num_topics];
    for a in assignments {
        if a.topic >= hist.len() {
            hist.resize(a.topic + 1, 0);
        }
        hist[a.topic] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::build_vocabulary;

    fn vocab(n: usize) -> Vocabulary {
        let words: Vec<String> = (0..n).map(|i| format!("w{i:03}")).collect();
        build_vocabulary(&[words], 1).unwrap()
    }

    fn small_corpus() -> Vec<CountVector> {
        vec![
            CountVector::from_pairs([(0, 3), (1, 2)]),
            CountVector::from_pairs([(2, 4), (3, 1)]),
            CountVector::from_pairs([(0, 1), (3, 2), (4, 5)]),
            CountVector::default(),
        ]
    }

    fn quick(k: usize) -> LdaConfig {
        LdaConfig {
            iterations: 30,
            burn_in: 5,
            seed: 11,
            inference_iterations: 20,
            ..LdaConfig::with_topics(k)
        }
    }

    #[test]
    fn counts_conserved_every_sweep() {
        let docs = small_corpus();
        let total: u64 = docs.iter().map(CountVector::total).sum();
        let mut sweeps = 0;
        fit_lda_observed(&docs, &vocab(5), &quick(3), |s| {
            sweeps += 1;
            assert_eq!(s.assigned_tokens(), total);
            assert_eq!(s.topic_word_sum(), total);
            assert_eq!(s.doc_topic_sum(), total);
        })
        .unwrap();
        assert_eq!(sweeps, 30);
    }

    #[test]
    fn same_seed_same_model() {
        let docs = small_corpus();
        let a = fit_lda(&docs, &vocab(5), &quick(3)).unwrap();
        let b = fit_lda(&docs, &vocab(5), &quick(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn distributions_are_normalized() {
        let model = fit_lda(&small_corpus(), &vocab(5), &quick(3)).unwrap();
        for t in 0..3 {
            assert!((model.phi_row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let row_sum: u64 = (0..5).map(|w| model.topic_word_count(t, w) as u64).sum();
            assert_eq!(row_sum, model.topic_totals()[t]);
        }
        for theta in model.training_theta() {
            assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let empty_theta = &model.training_theta()[3];
        assert!(empty_theta.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn single_topic_degenerates() {
        let docs = small_corpus();
        let v = vocab(5);
        let model = fit_lda(&docs, &v, &quick(1)).unwrap();
        for theta in model.training_theta() {
            assert_eq!(theta, &vec![1.0]);
        }
        let mut tf = [0u64; 5];
        for d in &docs {
            for &(i, c) in d.entries() {
                tf[i as usize] += c as u64;
            }
        }
        let n: u64 = tf.iter().sum();
        for w in 0..5 {
            let expected = (tf[w] as f64 + 0.01) / (n as f64 + 5.0 * 0.01);
            assert!((model.phi_row(0)[w] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn fit_errors() {
        let v = vocab(5);
        assert!(matches!(fit_lda(&[], &v, &quick(2)), Err(TopicError::EmptyCorpus)));
        assert!(matches!(
            fit_lda(&[CountVector::default()], &v, &quick(2)),
            Err(TopicError::NoTokens)
        ));
        assert!(matches!(
            fit_lda(&[CountVector::from_pairs([(9, 1)])], &v, &quick(2)),
            Err(TopicError::IndexOutOfRange { index: 9, size: 5 })
        ));
        let bad = LdaConfig { burn_in: 30, ..quick(2) };
        assert!(matches!(fit_lda(&small_corpus(), &v, &bad), Err(TopicError::InvalidConfig(_))));
        let bad = LdaConfig { beta: 0.0, ..quick(2) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn inference_is_deterministic_and_uniform_when_empty() {
        let model = fit_lda(&small_corpus(), &vocab(5), &quick(4)).unwrap();
        assert_eq!(model.infer_theta(&CountVector::default()), vec![0.25; 4]);
        let doc = CountVector::from_pairs([(0, 2), (4, 1)]);
        let a = model.infer_theta(&doc);
        assert_eq!(a, model.infer_theta(&doc));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn assign_topic_rules() {
        assert_eq!(assign_topic(&[0.1, 0.7, 0.2]).unwrap(), 1);
        assert_eq!(assign_topic(&[0.5, 0.5]).unwrap(), 0);
        assert!(matches!(assign_topic(&[0.5, 0.6]), Err(TopicError::NotNormalized(_))));
        assert!(assign_topic(&[]).is_err());
    }

    #[test]
    fn histogram_counts() {
        let a = |topic| TopicAssignment { bug_id: 0, topic, theta: vec![] };
        assert_eq!(topic_histogram(&[a(0), a(0), a(1)], 2), vec![2, 1]);
        assert_eq!(topic_histogram(&[], 3), vec![0, 0, 0]);
    }

    #[test]
    fn model_file_round_trip() {
        let model = fit_lda(&small_corpus(), &vocab(5), &quick(3)).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("bugprio-lda v1\nnum_topics 3\nvocab_size 5\nalpha "));
        let back = LdaModel::read_from(&buf[..]).unwrap();
        assert_eq!(back.content_hash(), model.content_hash());
        assert_eq!(back.phi, model.phi);
        let doc = CountVector::from_pairs([(1, 3)]);
        assert_eq!(back.infer_theta(&doc), model.infer_theta(&doc));

        let truncated = &buf[..buf.len() - 4];
        assert!(LdaModel::read_from(truncated).is_err());
        assert!(LdaModel::read_from(&b"bugprio-lda v9\n"[..]).is_err());
    }
}
