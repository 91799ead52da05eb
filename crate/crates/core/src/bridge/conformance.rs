//! Driver-side checks any protocol v1 worker must pass.
//!
//! The worker under test must behave like [`MockBehavior::Memorize`]
//! (`super::mock::MockBehavior`): recalling training labels by exact text.
//! Each case gets a fresh connection from `connect`.

use super::{predict_remote, train_remote, BridgeError, EpochPolicy, Record, WorkerHandle};
use crate::corpus::Priority;

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub result: Result<(), String>,
}

fn toy_records() -> Vec<Record> {
    (0..50u64)
        .map(|i| Record {
            bug_id: 1000 + i,
            text: format!("summary {i}\n\ndescription {i}\n\ncomponent"),
            label: Some(Priority::ALL[(i % 5) as usize]),
        })
        .collect()
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn case_handshake(h: &mut WorkerHandle) -> Result<(), String> {
    ensure(h.version() == "1", format!("version {}", h.version()))
}

fn case_train_predict(h: &mut WorkerHandle) -> Result<(), String> {
    let records = toy_records();
    train_remote(h, 4, &records, &EpochPolicy::default()).map_err(|e| e.to_string())?;
    let query: Vec<Record> = records[..3].to_vec();
    let out = predict_remote(h, 4, &query).map_err(|e| e.to_string())?;
    ensure(out.len() == 3, format!("{} predictions for 3 records", out.len()))?;
    for (p, r) in out.iter().zip(&query) {
        ensure(p.bug_id == r.bug_id, "predictions out of request order")?;
        ensure(Some(p.priority) == r.label, format!("bug {} predicted {}", p.bug_id, p.priority))?;
        ensure(
            p.scores.len() == Priority::COUNT && p.scores.iter().all(|s| s.is_finite()),
            "scores must be five finite numbers",
        )?;
    }
    Ok(())
}

fn case_untrained_topic(h: &mut WorkerHandle) -> Result<(), String> {
    let query = vec![Record {
        bug_id: 1,
        text: "never trained".into(),
        label: None,
    }];
    match predict_remote(h, 77, &query) {
        Err(BridgeError::Worker(_)) => Ok(()),
        other => Err(format!("expected a worker error, got {other:?}")),
    }
}

fn case_empty_train_rejected_locally(h: &mut WorkerHandle) -> Result<(), String> {
    match train_remote(h, 0, &[], &EpochPolicy::default()) {
        Err(BridgeError::Precondition(_)) => {}
        other => return Err(format!("expected a precondition error, got {other:?}")),
    }
    // the connection must still be usable afterwards
    case_train_predict(h)
}

fn case_sequential_requests(h: &mut WorkerHandle) -> Result<(), String> {
    let records = toy_records();
    let policy = EpochPolicy::default().with_override(2, 1);
    for topic in 0..3 {
        train_remote(h, topic, &records[topic as usize * 10..], &policy).map_err(|e| e.to_string())?;
    }
    for topic in 0..3 {
        let q = &records[topic as usize * 10..topic as usize * 10 + 5];
        let out = predict_remote(h, topic, q).map_err(|e| e.to_string())?;
        ensure(out.len() == 5, "wrong prediction count")?;
    }
    Ok(())
}

fn case_empty_predict(h: &mut WorkerHandle) -> Result<(), String> {
    let out = predict_remote(h, 0, &[]).map_err(|e| e.to_string())?;
    ensure(out.is_empty(), "empty query produced predictions")
}

/// Runs every case; shutdown is checked at the end of each.
pub fn run_driver_suite(
    connect: &mut dyn FnMut() -> Result<WorkerHandle, BridgeError>,
) -> Vec<CaseOutcome> {
    type Case = fn(&mut WorkerHandle) -> Result<(), String>;
    let cases: [(&'static str, Case); 6] = [
        ("handshake", case_handshake),
        ("train_then_predict", case_train_predict),
        ("untrained_topic_errors", case_untrained_topic),
        ("empty_train_rejected", case_empty_train_rejected_locally),
        ("sequential_requests", case_sequential_requests),
        ("empty_predict", case_empty_predict),
    ];
    cases
        .iter()
        .map(|(name, case)| {
            let result = connect().map_err(|e| e.to_string()).and_then(|mut h| {
                case(&mut h)?;
                h.shutdown().map_err(|e| format!("shutdown: {e}"))
            });
            CaseOutcome { name, result }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::mock::{MockBehavior, MockWorker};
    use std::time::Duration;

    #[test]
    fn mock_passes_suite() {
        let mut connect = || {
            let (w, _) = MockWorker::new(MockBehavior::Memorize);
            WorkerHandle::connect(Box::new(w), Duration::from_secs(1))
        };
        for case in run_driver_suite(&mut connect) {
            assert!(case.result.is_ok(), "{}: {:?}", case.name, case.result);
        }
    }

    #[test]
    fn fixed_label_worker_fails_recall() {
        let mut connect = || {
            let (w, _) = MockWorker::new(MockBehavior::Fixed(Priority::P5));
            WorkerHandle::connect(Box::new(w), Duration::from_secs(1))
        };
        let outcomes = run_driver_suite(&mut connect);
        assert!(outcomes.iter().any(|c| c.result.is_err()));
    }
}
