//! In-process worker used by tests and by `bugprio mock-worker`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::protocol::{Handshake, Op, RemotePrediction, Request, Response, PROTOCOL_VERSION};
use super::{BridgeError, Transport};
use crate::corpus::Priority;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockBehavior {
    /// Recalls the label of any text seen in training; the topic's majority
    /// label otherwise.
    Memorize,
    /// Always predicts the same level.
    Fixed(Priority),
}

/// Shared record of every request the mock received.
#[derive(Debug, Clone, Default)]
pub struct MockLog(Arc<Mutex<Vec<Request>>>);

impl MockLog {
    pub fn requests(&self) -> Vec<Request> {
        self.0.lock().unwrap().clone()
    }

    /// `(topic_id, epochs)` for each TRAIN request, in arrival order.
    pub fn train_epochs(&self) -> Vec<(u32, Option<u32>)> {
        self.requests()
            .iter()
            .filter(|r| r.op == Op::Train)
            .map(|r| (r.topic_id, r.epochs))
            .collect()
    }
}

#[derive(Debug, Default)]
struct TopicState {
    memory: HashMap<String, Priority>,
    counts: [u64; Priority::COUNT],
}

impl TopicState {
    fn majority(&self) -> Priority {
        let mut best = 0;
        for i in 1..Priority::COUNT {
            if self.counts[i] > self.counts[best] {
                best = i;
            }
        }
        Priority::ALL[best]
    }
}

#[derive(Debug)]
pub struct MockWorker {
    behavior: MockBehavior,
    version: String,
    topics: HashMap<u32, TopicState>,
    failing_topics: BTreeSet<u32>,
    outbox: VecDeque<String>,
    log: MockLog,
    finished: bool,
}

impl MockWorker {
    pub fn new(behavior: MockBehavior) -> (MockWorker, MockLog) {
        Self::with_version(behavior, &PROTOCOL_VERSION.to_string())
    }

    /// A worker announcing an arbitrary protocol version.
    pub fn with_version(behavior: MockBehavior, version: &str) -> (MockWorker, MockLog) {
        let log = MockLog::default();
        let handshake = serde_json::to_string(&Handshake {
            protocol_version: version.to_string(),
        })
        .expect("handshake serializes");
        let worker = MockWorker {
            behavior,
            version: version.to_string(),
            topics: HashMap::new(),
            failing_topics: BTreeSet::new(),
            outbox: VecDeque::from([handshake]),
            log: log.clone(),
            finished: false,
        };
        (worker, log)
    }

    /// TRAIN requests for `topic_id` will be answered with ERROR.
    pub fn fail_training_for(mut self, topic_id: u32) -> Self {
        self.failing_topics.insert(topic_id);
        self
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Handles one request line; `None` once the worker has shut down.
    pub fn handle_line(&mut self, line: &str) -> Option<String> {
        if self.finished {
            return None;
        }
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                let reply = serde_json::json!({
                    "v": PROTOCOL_VERSION,
                    "id": 0,
                    "status": "ERROR",
                    "error": format!("unparseable request: {e}"),
                });
                return Some(reply.to_string());
            }
        };
        self.log.0.lock().unwrap().push(req.clone());
        let resp = self.respond(&req);
        Some(serde_json::to_string(&resp).expect("response serializes"))
    }

    fn respond(&mut self, req: &Request) -> Response {
        if req.v != PROTOCOL_VERSION {
            return Response::error(req, format!("unsupported protocol version {}", req.v));
        }
        match req.op {
            Op::Shutdown => {
                self.finished = true;
                Response::ok(req)
            }
            Op::Train => {
                if self.failing_topics.contains(&req.topic_id) {
                    return Response::error(req, "injected training failure");
                }
                if req.records.is_empty() {
                    return Response::error(req, "no training records");
                }
                let mut state = TopicState::default();
                for r in &req.records {
                    let Some(label) = r.label else {
                        return Response::error(req, format!("record {} has no label", r.bug_id));
                    };
                    state.memory.insert(r.text.clone(), label);
                    state.counts[label.index()] += 1;
                }
                self.topics.insert(req.topic_id, state);
                Response::ok(req)
            }
            Op::Predict => {
                let Some(state) = self.topics.get(&req.topic_id) else {
                    return Response::error(req, format!("topic {} is not trained", req.topic_id));
                };
                let predictions = req
                    .records
                    .iter()
                    .map(|r| {
                        let priority = match self.behavior {
                            MockBehavior::Fixed(p) => p,
                            MockBehavior::Memorize => {
                                state.memory.get(&r.text).copied().unwrap_or_else(|| state.majority())
                            }
                        };
                        let mut scores = vec![0.05; Priority::COUNT];
                        scores[priority.index()] = 0.8;
                        RemotePrediction {
                            bug_id: r.bug_id,
                            priority,
                            scores,
                        }
                    })
                    .collect();
                Response {
                    predictions: Some(predictions),
                    ..Response::ok(req)
                }
            }
        }
    }

    /// Speaks the protocol over a reader and writer until SHUTDOWN or EOF.
    pub fn serve<R: BufRead, W: Write>(mut self, input: R, mut output: W) -> std::io::Result<()> {
        while let Some(line) = self.outbox.pop_front() {
            writeln!(output, "{line}")?;
        }
        output.flush()?;
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match self.handle_line(&line) {
                Some(reply) => {
                    writeln!(output, "{reply}")?;
                    output.flush()?;
                }
                None => break,
            }
            if self.finished {
                break;
            }
        }
        Ok(())
    }
}

impl Transport for MockWorker {
    fn send_line(&mut self, line: &str) -> Result<(), BridgeError> {
        match self.handle_line(line) {
            Some(reply) => {
                self.outbox.push_back(reply);
                Ok(())
            }
            None => Err(BridgeError::Eof),
        }
    }

    fn recv_line(&mut self, _timeout: Option<Duration>) -> Result<String, BridgeError> {
        self.outbox.pop_front().ok_or(BridgeError::Eof)
    }
}
