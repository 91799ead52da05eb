//! Per-topic classifier bank with a pooled fallback.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{
    ClassifierKind, ClassifierRegistry, ClassifyError, Prediction, PriorityModel, Sample, Slot, TrainContext,
    Verdict,
};
use crate::corpus::{BugReport, Priority};
use crate::textprep::{raw_text, tokenize, vectorize, TokenizerConfig, Vocabulary};
use crate::topics::{assign_topic, LdaModel};

pub const DEFAULT_MIN_TOPIC_SIZE: usize = 25;

/// Every topic resolves to its own model or to the fallback, which always
/// exists and is trained on the whole training set.
#[derive(Debug)]
pub struct TopicRoutedClassifier {
    kind: String,
    min_topic_size: usize,
    topic_sizes: Vec<usize>,
    topic_models: Vec<Option<Box<dyn PriorityModel>>>,
    fallback: Box<dyn PriorityModel>,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    kind: String,
    min_topic_size: usize,
    topic_sizes: Vec<usize>,
    topics: Vec<Option<serde_json::Value>>,
    fallback: serde_json::Value,
}

/// Trains one classifier per topic holding at least `min_topic_size`
/// examples; smaller topics route to the fallback. A topic whose external
/// training fails is routed to the fallback as well.
#[allow(clippy::too_many_arguments)]
pub fn train_topic_routed(
    kind: &dyn ClassifierKind,
    vocab_size: usize,
    num_topics: usize,
    topics: &[usize],
    samples: &[Sample<'_>],
    labels: &[Priority],
    min_topic_size: usize,
) -> Result<TopicRoutedClassifier, ClassifyError> {
    if samples.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    if topics.len() != samples.len() || labels.len() != samples.len() {
        return Err(ClassifyError::LengthMismatch {
            samples: samples.len(),
            labels: labels.len().min(topics.len()),
        });
    }
    if let Some(&t) = topics.iter().find(|&&t| t >= num_topics) {
        return Err(ClassifyError::InvalidParameter(format!("topic {t} outside 0..{num_topics}")));
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_topics];
    for (i, &t) in topics.iter().enumerate() {
        members[t].push(i);
    }
    let topic_sizes: Vec<usize> = members.iter().map(Vec::len).collect();

    let mut topic_models = Vec::with_capacity(num_topics);
    for (topic, idx) in members.iter().enumerate() {
        if idx.is_empty() || idx.len() < min_topic_size {
            topic_models.push(None);
            continue;
        }
        let ctx = TrainContext {
            vocab_size,
            num_topics,
            slot: Slot::Topic(topic),
        };
        let sub_samples: Vec<Sample<'_>> = idx.iter().map(|&i| samples[i]).collect();
        let sub_labels: Vec<Priority> = idx.iter().map(|&i| labels[i]).collect();
        match kind.train(&ctx, &sub_samples, &sub_labels) {
            Ok(model) => topic_models.push(Some(model)),
            Err(ClassifyError::External(msg)) => {
                warn!("training topic {topic} failed, routing it to the fallback: {msg}");
                topic_models.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let ctx = TrainContext {
        vocab_size,
        num_topics,
        slot: Slot::Fallback,
    };
    let fallback = kind.train(&ctx, samples, labels)?;
    Ok(TopicRoutedClassifier {
        kind: kind.name().to_string(),
        min_topic_size,
        topic_sizes,
        topic_models,
        fallback,
    })
}

impl TopicRoutedClassifier {
    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn num_topics(&self) -> usize {
        self.topic_models.len()
    }

    pub fn min_topic_size(&self) -> usize {
        self.min_topic_size
    }

    /// Training examples seen per topic.
    pub fn topic_sizes(&self) -> &[usize] {
        &self.topic_sizes
    }

    pub fn uses_fallback(&self, topic: usize) -> bool {
        self.topic_models.get(topic).map_or(true, Option::is_none)
    }

    /// The model answering for `topic`; out-of-range topics get the fallback.
    pub fn model_for(&self, topic: usize) -> &dyn PriorityModel {
        match self.topic_models.get(topic) {
            Some(Some(m)) => m.as_ref(),
            _ => self.fallback.as_ref(),
        }
    }

    pub fn predict(&self, topic: usize, sample: &Sample<'_>) -> Result<Prediction, ClassifyError> {
        let mut out = self.predict_batch(&[(topic, *sample)])?;
        Ok(out.remove(0))
    }

    /// Predicts a batch, grouping samples per answering model. Results come
    /// back in input order. If a topic model fails with an external error
    /// its samples are retried on the fallback.
    pub fn predict_batch(&self, items: &[(usize, Sample<'_>)]) -> Result<Vec<Prediction>, ClassifyError> {
        let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
        for (i, &(topic, _)) in items.iter().enumerate() {
            let key = (!self.uses_fallback(topic)).then_some(topic);
            groups.entry(key).or_default().push(i);
        }
        let mut out: Vec<Option<Prediction>> = vec![None; items.len()];
        for (key, idx) in groups {
            let samples: Vec<Sample<'_>> = idx.iter().map(|&i| items[i].1).collect();
            let (verdicts, used_fallback) = match key {
                Some(topic) => match self.model_for(topic).predict_batch(&samples) {
                    Ok(v) => (v, false),
                    Err(ClassifyError::External(msg)) => {
                        warn!("topic {topic} classifier failed, using fallback: {msg}");
                        (self.fallback.predict_batch(&samples)?, true)
                    }
                    Err(e) => return Err(e),
                },
                None => (self.fallback.predict_batch(&samples)?, true),
            };
            if verdicts.len() != idx.len() {
                return Err(ClassifyError::External(format!(
                    "expected {} predictions, got {}",
                    idx.len(),
                    verdicts.len()
                )));
            }
            for (&i, Verdict { priority, scores }) in idx.iter().zip(verdicts) {
                out[i] = Some(Prediction {
                    bug_id: items[i].1.bug_id,
                    priority,
                    topic: items[i].0,
                    scores,
                    used_fallback,
                });
            }
        }
        Ok(out.into_iter().map(|p| p.expect("every index grouped once")).collect())
    }

    pub fn to_json(&self) -> Result<serde_json::Value, ClassifyError> {
        let topics = self
            .topic_models
            .iter()
            .map(|m| m.as_ref().map(|m| m.to_params()).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        let persisted = Persisted {
            kind: self.kind.clone(),
            min_topic_size: self.min_topic_size,
            topic_sizes: self.topic_sizes.clone(),
            topics,
            fallback: self.fallback.to_params()?,
        };
        serde_json::to_value(persisted).map_err(|e| ClassifyError::MalformedParams(e.to_string()))
    }

    pub fn from_json(value: &serde_json::Value, registry: &ClassifierRegistry) -> Result<Self, ClassifyError> {
        let p: Persisted =
            serde_json::from_value(value.clone()).map_err(|e| ClassifyError::MalformedParams(e.to_string()))?;
        let kind = registry.get(&p.kind)?;
        if p.topic_sizes.len() != p.topics.len() {
            return Err(ClassifyError::MalformedParams("topic table length mismatch".into()));
        }
        let topic_models = p
            .topics
            .iter()
            .map(|t| t.as_ref().map(|params| kind.restore(params)).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TopicRoutedClassifier {
            kind: p.kind,
            min_topic_size: p.min_topic_size,
            topic_sizes: p.topic_sizes,
            topic_models,
            fallback: kind.restore(&p.fallback)?,
        })
    }
}

/// Everything needed to route a raw report to a priority.
#[derive(Debug)]
pub struct RoutedPredictor {
    pub topic_tokenizer: TokenizerConfig,
    pub topic_vocab: Vocabulary,
    pub lda: LdaModel,
    pub classifier_tokenizer: TokenizerConfig,
    pub classifier_vocab: Vocabulary,
    pub router: TopicRoutedClassifier,
}

impl RoutedPredictor {
    pub fn topic_of(&self, report: &BugReport) -> usize {
        let tokens = tokenize(report, &self.topic_tokenizer);
        let theta = self.lda.infer_theta(&vectorize(&tokens, &self.topic_vocab));
        assign_topic(&theta).expect("inferred θ is normalized")
    }

    pub fn predict_reports(&self, reports: &[BugReport]) -> Result<Vec<Prediction>, ClassifyError> {
        let texts: Vec<String> = reports.iter().map(raw_text).collect();
        let counts: Vec<_> = reports
            .iter()
            .map(|r| vectorize(&tokenize(r, &self.classifier_tokenizer), &self.classifier_vocab))
            .collect();
        let items: Vec<(usize, Sample<'_>)> = reports
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    self.topic_of(r),
                    Sample {
                        bug_id: r.bug_id,
                        text: &texts[i],
                        counts: &counts[i],
                    },
                )
            })
            .collect();
        self.router.predict_batch(&items)
    }
}

/// tokenize → vectorize → infer θ → dominant topic → routed classifier.
pub fn predict_routed(predictor: &RoutedPredictor, report: &BugReport) -> Result<Prediction, ClassifyError> {
    let mut out = predictor.predict_reports(std::slice::from_ref(report))?;
    Ok(out.remove(0))
}
