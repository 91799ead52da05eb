//! Classifier kind backed by an external worker.
//!
//! Topic `t` of a routed bank is trained under `topic_id = t`; the pooled
//! fallback uses `topic_id = K`. Trained state lives in the worker, so the
//! models cannot be restored from a bundle.

use std::sync::{Arc, Mutex};

use super::{predict_remote, train_remote, BridgeError, EpochPolicy, Record, WorkerHandle};
use crate::classify::{
    check_lengths, ClassScores, ClassifierKind, ClassifyError, PriorityModel, Sample, Slot, TrainContext, Verdict,
};
use crate::corpus::Priority;

pub const EXTERNAL_KIND: &str = "external";

pub type SharedWorker = Arc<Mutex<WorkerHandle>>;

pub struct ExternalKind {
    worker: SharedWorker,
    policy: EpochPolicy,
}

impl ExternalKind {
    pub fn new(worker: WorkerHandle, policy: EpochPolicy) -> Self {
        Self::shared(Arc::new(Mutex::new(worker)), policy)
    }

    pub fn shared(worker: SharedWorker, policy: EpochPolicy) -> Self {
        ExternalKind { worker, policy }
    }

    pub fn worker(&self) -> SharedWorker {
        Arc::clone(&self.worker)
    }

    /// Sends SHUTDOWN to the worker.
    pub fn shutdown(&self) -> Result<(), BridgeError> {
        self.worker.lock().unwrap().shutdown()
    }
}

fn external(e: BridgeError) -> ClassifyError {
    ClassifyError::External(e.to_string())
}

fn records(samples: &[Sample<'_>], labels: Option<&[Priority]>) -> Vec<Record> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| Record {
            bug_id: s.bug_id,
            text: s.text.to_string(),
            label: labels.map(|l| l[i]),
        })
        .collect()
}

impl ClassifierKind for ExternalKind {
    fn name(&self) -> &str {
        EXTERNAL_KIND
    }

    fn train(
        &self,
        ctx: &TrainContext,
        samples: &[Sample<'_>],
        labels: &[Priority],
    ) -> Result<Box<dyn PriorityModel>, ClassifyError> {
        check_lengths(samples.len(), labels.len())?;
        let topic_id = match ctx.slot {
            Slot::Topic(t) => t,
            Slot::Fallback => ctx.num_topics,
        } as u32;
        let mut worker = self.worker.lock().unwrap();
        train_remote(&mut worker, topic_id, &records(samples, Some(labels)), &self.policy).map_err(external)?;
        Ok(Box::new(RemoteModel {
            worker: Arc::clone(&self.worker),
            topic_id,
        }))
    }

    fn restore(&self, _params: &serde_json::Value) -> Result<Box<dyn PriorityModel>, ClassifyError> {
        Err(ClassifyError::NotPersistable(EXTERNAL_KIND.into()))
    }
}

/// A topic model held by the worker.
pub struct RemoteModel {
    worker: SharedWorker,
    topic_id: u32,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel").field("topic_id", &self.topic_id).finish()
    }
}

impl PriorityModel for RemoteModel {
    fn kind(&self) -> &str {
        EXTERNAL_KIND
    }

    fn predict_batch(&self, samples: &[Sample<'_>]) -> Result<Vec<Verdict>, ClassifyError> {
        let mut worker = self.worker.lock().unwrap();
        let predictions = predict_remote(&mut worker, self.topic_id, &records(samples, None)).map_err(external)?;
        Ok(predictions
            .into_iter()
            .map(|p| {
                let mut scores: ClassScores = [0.0; Priority::COUNT];
                scores.copy_from_slice(&p.scores);
                Verdict {
                    priority: p.priority,
                    scores,
                }
            })
            .collect())
    }

    /// Only the worker-side topic id; enough to document the bundle.
    fn to_params(&self) -> Result<serde_json::Value, ClassifyError> {
        Ok(serde_json::json!({ "topic_id": self.topic_id }))
    }
}
