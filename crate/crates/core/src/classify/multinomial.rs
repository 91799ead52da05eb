//! Multinomial naive Bayes over term counts with additive smoothing.

use serde::{Deserialize, Serialize};

use super::{check_lengths, ClassifierKind, ClassifyError, PriorityModel, Sample, TrainContext, Verdict};
use crate::corpus::Priority;
use crate::textprep::CountVector;

pub const KIND: &str = "multinomial_nb";

/// Sufficient statistics are stored as integers and the log parameters are
/// derived from them, so a persisted model reloads bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialNb {
    lambda: f64,
    vocab_size: usize,
    class_docs: [u64; Priority::COUNT],
    class_tokens: Vec<Vec<u64>>,
    log_prior: [f64; Priority::COUNT],
    log_likelihood: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Params {
    lambda: f64,
    vocab_size: usize,
    class_docs: [u64; Priority::COUNT],
    /// Sparse `[index, count]` pairs per class.
    class_tokens: Vec<Vec<(u32, u64)>>,
}

/// Estimates `prior_c = n_c / n` and
/// `p(w | c) = (count_cw + λ) / (count_c + λV)`. A class with no training
/// documents gets prior 0 (log prior −∞) and is never predicted.
pub fn train_multinomial_nb(
    vectors: &[&CountVector],
    labels: &[Priority],
    lambda: f64,
    vocab_size: usize,
) -> Result<MultinomialNb, ClassifyError> {
    check_lengths(vectors.len(), labels.len())?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ClassifyError::InvalidParameter(format!("smoothing λ must be positive, got {lambda}")));
    }
    if vocab_size == 0 {
        return Err(ClassifyError::InvalidParameter("vocabulary size is zero".into()));
    }
    let mut class_docs = [0u64; Priority::COUNT];
    let mut class_tokens = vec![vec![0u64; vocab_size]; Priority::COUNT];
    for (vector, label) in vectors.iter().zip(labels) {
        let c = label.index();
        class_docs[c] += 1;
        for &(w, n) in vector.entries() {
            let w = w as usize;
            if w >= vocab_size {
                return Err(ClassifyError::InvalidParameter(format!(
                    "token index {w} outside vocabulary of {vocab_size}"
                )));
            }
            class_tokens[c][w] += n as u64;
        }
    }
    Ok(MultinomialNb::from_counts(lambda, vocab_size, class_docs, class_tokens))
}

impl MultinomialNb {
    fn from_counts(
        lambda: f64,
        vocab_size: usize,
        class_docs: [u64; Priority::COUNT],
        class_tokens: Vec<Vec<u64>>,
    ) -> MultinomialNb {
        let n: u64 = class_docs.iter().sum();
        let mut log_prior = [f64::NEG_INFINITY; Priority::COUNT];
        for (c, &docs) in class_docs.iter().enumerate() {
            if docs > 0 {
                log_prior[c] = (docs as f64 / n as f64).ln();
            }
        }
        let log_likelihood = class_tokens
            .iter()
            .map(|counts| {
                let total: u64 = counts.iter().sum();
                let denom = total as f64 + lambda * vocab_size as f64;
                counts.iter().map(|&c| ((c as f64 + lambda) / denom).ln()).collect()
            })
            .collect();
        MultinomialNb {
            lambda,
            vocab_size,
            class_docs,
            class_tokens,
            log_prior,
            log_likelihood,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn log_prior(&self) -> &[f64; Priority::COUNT] {
        &self.log_prior
    }

    pub fn log_likelihood(&self, class: Priority, token: u32) -> f64 {
        self.log_likelihood[class.index()][token as usize]
    }

    pub fn class_is_trained(&self, class: Priority) -> bool {
        self.class_docs[class.index()] > 0
    }

    /// `log prior + Σ count · log p(w | c)`; unknown indices are skipped.
    pub fn scores(&self, doc: &CountVector) -> [f64; Priority::COUNT] {
        let mut scores = self.log_prior;
        for (c, score) in scores.iter_mut().enumerate() {
            if !score.is_finite() {
                continue;
            }
            let ll = &self.log_likelihood[c];
            for &(w, n) in doc.entries() {
                if let Some(l) = ll.get(w as usize) {
                    *score += n as f64 * l;
                }
            }
        }
        scores
    }

    pub fn predict(&self, doc: &CountVector) -> Verdict {
        Verdict::from_scores(self.scores(doc))
    }

    fn params(&self) -> Params {
        Params {
            lambda: self.lambda,
            vocab_size: self.vocab_size,
            class_docs: self.class_docs,
            class_tokens: self
                .class_tokens
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|&(_, &c)| c > 0)
                        .map(|(i, &c)| (i as u32, c))
                        .collect()
                })
                .collect(),
        }
    }

    fn from_params(params: Params) -> Result<MultinomialNb, ClassifyError> {
        if params.class_tokens.len() != Priority::COUNT {
            return Err(ClassifyError::MalformedParams("expected five classes".into()));
        }
        let mut class_tokens = vec![vec![0u64; params.vocab_size]; Priority::COUNT];
        for (c, row) in params.class_tokens.iter().enumerate() {
            for &(w, n) in row {
                *class_tokens[c]
                    .get_mut(w as usize)
                    .ok_or_else(|| ClassifyError::MalformedParams(format!("index {w} out of range")))? = n;
            }
        }
        if params.class_docs.iter().all(|&n| n == 0) {
            return Err(ClassifyError::MalformedParams("no class has training documents".into()));
        }
        Ok(MultinomialNb::from_counts(
            params.lambda,
            params.vocab_size,
            params.class_docs,
            class_tokens,
        ))
    }
}

impl PriorityModel for MultinomialNb {
    fn kind(&self) -> &str {
        KIND
    }

    fn predict_batch(&self, samples: &[Sample<'_>]) -> Result<Vec<Verdict>, ClassifyError> {
        Ok(samples.iter().map(|s| self.predict(s.counts)).collect())
    }

    fn to_params(&self) -> Result<serde_json::Value, ClassifyError> {
        serde_json::to_value(self.params()).map_err(|e| ClassifyError::MalformedParams(e.to_string()))
    }
}

pub struct MultinomialNbKind {
    pub laplace: f64,
}

impl ClassifierKind for MultinomialNbKind {
    fn name(&self) -> &str {
        KIND
    }

    fn train(
        &self,
        ctx: &TrainContext,
        samples: &[Sample<'_>],
        labels: &[Priority],
    ) -> Result<Box<dyn PriorityModel>, ClassifyError> {
        let vectors: Vec<&CountVector> = samples.iter().map(|s| s.counts).collect();
        Ok(Box::new(train_multinomial_nb(&vectors, labels, self.laplace, ctx.vocab_size)?))
    }

    fn restore(&self, params: &serde_json::Value) -> Result<Box<dyn PriorityModel>, ClassifyError> {
        let params: Params =
            serde_json::from_value(params.clone()).map_err(|e| ClassifyError::MalformedParams(e.to_string()))?;
        Ok(Box::new(MultinomialNb::from_params(params)?))
    }
}
