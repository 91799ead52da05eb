//! Priority classifiers.
//!
//! Every classifier family implements [`ClassifierKind`] and is looked up by
//! name in a [`ClassifierRegistry`]; the pipeline picks one at runtime from
//! its configuration. [`router::TopicRoutedClassifier`] holds one trained
//! model per topic plus a pooled fallback.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Priority;
use crate::textprep::CountVector;

pub mod gaussian;
pub mod multinomial;
pub mod router;

pub use gaussian::{GaussianNb, GaussianNbKind};
pub use multinomial::{MultinomialNb, MultinomialNbKind};
pub use router::{predict_routed, RoutedPredictor, TopicRoutedClassifier};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("{samples} samples but {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown classifier kind `{0}`")]
    UnknownKind(String),
    #[error("classifier kind `{0}` cannot be persisted")]
    NotPersistable(String),
    #[error("malformed classifier parameters: {0}")]
    MalformedParams(String),
    #[error("external classifier failed: {0}")]
    External(String),
}

/// One report as seen by a classifier: its sparse counts for the native
/// kinds and its raw text for external ones.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub bug_id: u64,
    pub text: &'a str,
    pub counts: &'a CountVector,
}

/// Which classifier of a routed bank is being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Topic(usize),
    Fallback,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainContext {
    pub vocab_size: usize,
    pub num_topics: usize,
    pub slot: Slot,
}

/// Per-class scores in `P1..P5` order.
pub type ClassScores = [f64; Priority::COUNT];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub priority: Priority,
    pub scores: ClassScores,
}

impl Verdict {
    pub fn from_scores(scores: ClassScores) -> Verdict {
        Verdict {
            priority: argmax_priority(&scores),
            scores,
        }
    }
}

/// Highest score wins; on ties the lower index (more urgent level) wins.
/// NaN scores never win.
pub fn argmax_priority(scores: &ClassScores) -> Priority {
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] || scores[best].is_nan() && !scores[i].is_nan() {
            best = i;
        }
    }
    Priority::ALL[best]
}

/// A trained classifier.
pub trait PriorityModel: Send + Sync + fmt::Debug {
    fn kind(&self) -> &str;

    fn predict_batch(&self, samples: &[Sample<'_>]) -> Result<Vec<Verdict>, ClassifyError>;

    fn predict(&self, sample: &Sample<'_>) -> Result<Verdict, ClassifyError> {
        let mut out = self.predict_batch(std::slice::from_ref(sample))?;
        out.pop()
            .ok_or_else(|| ClassifyError::External("empty prediction batch".into()))
    }

    /// Parameters for the model bundle.
    fn to_params(&self) -> Result<serde_json::Value, ClassifyError>;
}

/// A classifier family: trains models and restores persisted ones.
pub trait ClassifierKind: Send + Sync {
    fn name(&self) -> &str;

    fn train(
        &self,
        ctx: &TrainContext,
        samples: &[Sample<'_>],
        labels: &[Priority],
    ) -> Result<Box<dyn PriorityModel>, ClassifyError>;

    fn restore(&self, params: &serde_json::Value) -> Result<Box<dyn PriorityModel>, ClassifyError>;
}

#[derive(Clone, Default)]
pub struct ClassifierRegistry {
    kinds: BTreeMap<String, Arc<dyn ClassifierKind>>,
}

impl ClassifierRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Multinomial and Gaussian naive Bayes.
    pub fn builtin(laplace: f64, var_smoothing: f64) -> Self {
        let mut registry = Self::new();
        registry.register(Arc::new(MultinomialNbKind { laplace }));
        registry.register(Arc::new(GaussianNbKind { var_smoothing }));
        registry
    }

    pub fn register(&mut self, kind: Arc<dyn ClassifierKind>) {
        self.kinds.insert(kind.name().to_string(), kind);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ClassifierKind>, ClassifyError> {
        self.kinds
            .get(name)
            .cloned()
            .ok_or_else(|| ClassifyError::UnknownKind(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }
}

pub(crate) fn check_lengths(samples: usize, labels: usize) -> Result<(), ClassifyError> {
    if samples != labels {
        return Err(ClassifyError::LengthMismatch { samples, labels });
    }
    if samples == 0 {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    Ok(())
}

/// One routed prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub bug_id: u64,
    pub priority: Priority,
    pub topic: usize,
    #[serde(serialize_with = "finite_or_null")]
    pub scores: ClassScores,
    #[serde(skip)]
    pub used_fallback: bool,
}

fn finite_or_null<S: Serializer>(scores: &ClassScores, s: S) -> Result<S::Ok, S::Error> {
    let values: Vec<Option<f64>> = scores
        .iter()
        .map(|&v| v.is_finite().then_some(v))
        .collect();
    values.serialize(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_breaks_to_lower_index() {
        assert_eq!(argmax_priority(&[0.0, 2.0, 1.0, 2.0, 0.0]), Priority::P2);
        assert_eq!(argmax_priority(&[f64::NEG_INFINITY, -1.0, -1.0, -3.0, -1.0]), Priority::P2);
        assert_eq!(argmax_priority(&[f64::NAN, -1.0, 0.0, -3.0, -1.0]), Priority::P3);
    }

    #[test]
    fn registry_lookup() {
        let r = ClassifierRegistry::builtin(1.0, 1e-9);
        assert_eq!(r.names().collect::<Vec<_>>(), vec!["gaussian_nb", "multinomial_nb"]);
        assert!(r.get("multinomial_nb").is_ok());
        assert!(matches!(r.get("svm"), Err(ClassifyError::UnknownKind(_))));
    }

    #[test]
    fn prediction_json_nulls_non_finite_scores() {
        let p = Prediction {
            bug_id: 4,
            priority: Priority::P3,
            topic: 1,
            scores: [f64::NEG_INFINITY, -2.5, -1.0, -3.0, -4.0],
            used_fallback: false,
        };
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"bug_id":4,"priority":"P3","topic":1,"scores":[null,-2.5,-1.0,-3.0,-4.0]}"#
        );
    }
}
