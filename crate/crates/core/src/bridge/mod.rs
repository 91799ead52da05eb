//! Driver for external classifier workers.
//!
//! A worker is any process that speaks protocol v1: newline-delimited JSON
//! on its standard input and output. After start-up it writes a handshake
//! line `{"protocol_version":"1"}`; it then answers every request, in
//! order, with exactly one response carrying the request's `id`. See
//! `docs/protocol-v1.md` for the full wire format.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Priority;

pub mod conformance;
pub mod external;
pub mod mock;
pub mod protocol;

pub use external::{ExternalKind, EXTERNAL_KIND};
pub use protocol::{Handshake, Op, Record, RemotePrediction, Request, Response, Status, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("failed to start worker `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("worker launch command is empty")]
    EmptyCommand,
    #[error("timed out waiting for the worker")]
    Timeout,
    #[error("worker speaks protocol version {found}, expected {expected}")]
    VersionMismatch { expected: String, found: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("worker reported an error: {0}")]
    Worker(String),
    #[error("worker closed its output stream")]
    Eof,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("i/o error talking to the worker: {0}")]
    Io(#[from] std::io::Error),
}

/// A line-oriented, bidirectional channel to a worker.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), BridgeError>;

    /// Next line from the worker; `None` timeout blocks.
    fn recv_line(&mut self, timeout: Option<Duration>) -> Result<String, BridgeError>;

    /// Releases the worker; a child process is killed if still running.
    fn close(&mut self) {}
}

/// Child process whose stdout is drained by a reader thread.
pub struct ChildTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ChildTransport {
    pub fn spawn(command: &[String]) -> Result<ChildTransport, BridgeError> {
        let (program, args) = command.split_first().ok_or(BridgeError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| BridgeError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ChildTransport {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Transport for ChildTransport {
    fn send_line(&mut self, line: &str) -> Result<(), BridgeError> {
        let stdin = self.stdin.as_mut().ok_or(BridgeError::Eof)?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;
        Ok(())
    }

    fn recv_line(&mut self, timeout: Option<Duration>) -> Result<String, BridgeError> {
        let next = match timeout {
            Some(t) => self.lines.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => BridgeError::Timeout,
                RecvTimeoutError::Disconnected => BridgeError::Eof,
            })?,
            None => self.lines.recv().map_err(|_| BridgeError::Eof)?,
        };
        Ok(next?)
    }

    fn close(&mut self) {
        self.stdin.take();
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        self.close();
    }
}

/// Connected worker. Requests are strictly sequential.
pub struct WorkerHandle {
    transport: Box<dyn Transport>,
    version: String,
    next_id: u64,
    request_timeout: Option<Duration>,
    closed: bool,
}

impl std::fmt::Debug for WorkerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerHandle")
            .field("version", &self.version)
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl WorkerHandle {
    /// Reads and validates the handshake; the transport is closed on failure.
    pub fn connect(mut transport: Box<dyn Transport>, handshake_timeout: Duration) -> Result<Self, BridgeError> {
        let result = transport.recv_line(Some(handshake_timeout)).and_then(|line| {
            let hs: Handshake = serde_json::from_str(&line)
                .map_err(|e| BridgeError::Protocol(format!("bad handshake `{line}`: {e}")))?;
            if hs.protocol_version != PROTOCOL_VERSION.to_string() {
                return Err(BridgeError::VersionMismatch {
                    expected: PROTOCOL_VERSION.to_string(),
                    found: hs.protocol_version,
                });
            }
            Ok(hs.protocol_version)
        });
        match result {
            Ok(version) => Ok(WorkerHandle {
                transport,
                version,
                next_id: 1,
                request_timeout: None,
                closed: false,
            }),
            Err(e) => {
                transport.close();
                Err(e)
            }
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Bounds the wait for each response; unbounded by default since
    /// training can take hours.
    pub fn set_request_timeout(&mut self, timeout: Option<Duration>) {
        self.request_timeout = timeout;
    }

    pub fn request(
        &mut self,
        op: Op,
        topic_id: u32,
        epochs: Option<u32>,
        records: Vec<Record>,
    ) -> Result<Response, BridgeError> {
        if self.closed {
            return Err(BridgeError::Eof);
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = Request {
            v: PROTOCOL_VERSION,
            id,
            op,
            topic_id,
            epochs,
            records,
        };
        let line = serde_json::to_string(&req).map_err(|e| BridgeError::Protocol(e.to_string()))?;
        self.transport.send_line(&line)?;
        let reply = self.transport.recv_line(self.request_timeout)?;
        let resp: Response = serde_json::from_str(&reply)
            .map_err(|e| BridgeError::Protocol(format!("unparseable response `{reply}`: {e}")))?;
        if resp.v != PROTOCOL_VERSION {
            return Err(BridgeError::Protocol(format!("response has protocol version {}", resp.v)));
        }
        if resp.id != id {
            return Err(BridgeError::Protocol(format!(
                "response id {} does not answer request {id}",
                resp.id
            )));
        }
        Ok(resp)
    }

    /// Sends SHUTDOWN and releases the worker.
    pub fn shutdown(&mut self) -> Result<(), BridgeError> {
        if self.closed {
            return Ok(());
        }
        let result = self.request(Op::Shutdown, 0, None, Vec::new()).and_then(expect_ok);
        self.transport.close();
        self.closed = true;
        result.map(|_| ())
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        if !self.closed {
            self.transport.close();
        }
    }
}

/// Starts a worker process and completes the handshake.
pub fn spawn_worker(command: &[String], handshake_timeout: Duration) -> Result<WorkerHandle, BridgeError> {
    let transport = ChildTransport::spawn(command)?;
    WorkerHandle::connect(Box::new(transport), handshake_timeout)
}

/// Epochs per topic: a default plus per-topic overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPolicy {
    pub default_epochs: u32,
    #[serde(default)]
    pub overrides: BTreeMap<u32, u32>,
}

impl Default for EpochPolicy {
    fn default() -> Self {
        EpochPolicy {
            default_epochs: 15,
            overrides: BTreeMap::new(),
        }
    }
}

impl EpochPolicy {
    pub fn with_override(mut self, topic_id: u32, epochs: u32) -> Self {
        self.overrides.insert(topic_id, epochs);
        self
    }

    pub fn epochs_for(&self, topic_id: u32) -> u32 {
        self.overrides.get(&topic_id).copied().unwrap_or(self.default_epochs)
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.default_epochs == 0 || self.overrides.values().any(|&e| e == 0) {
            return Err(BridgeError::Precondition("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

fn expect_ok(resp: Response) -> Result<Response, BridgeError> {
    match resp.status {
        Status::Ok => Ok(resp),
        Status::Error => Err(BridgeError::Worker(
            resp.error.unwrap_or_else(|| "unspecified error".into()),
        )),
    }
}

/// Sends TRAIN for one topic with the policy's epoch count and waits for OK.
pub fn train_remote(
    handle: &mut WorkerHandle,
    topic_id: u32,
    records: &[Record],
    policy: &EpochPolicy,
) -> Result<(), BridgeError> {
    policy.validate()?;
    if records.is_empty() {
        return Err(BridgeError::Precondition("TRAIN needs at least one record".into()));
    }
    if let Some(r) = records.iter().find(|r| r.label.is_none()) {
        return Err(BridgeError::Precondition(format!("record {} has no label", r.bug_id)));
    }
    let resp = handle.request(Op::Train, topic_id, Some(policy.epochs_for(topic_id)), records.to_vec())?;
    expect_ok(resp).map(|_| ())
}

/// Sends PREDICT and returns one prediction per record, in request order.
/// Labels are stripped before sending.
pub fn predict_remote(
    handle: &mut WorkerHandle,
    topic_id: u32,
    records: &[Record],
) -> Result<Vec<RemotePrediction>, BridgeError> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let mut order = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if order.insert(r.bug_id, i).is_some() {
            return Err(BridgeError::Precondition(format!("bug_id {} requested twice", r.bug_id)));
        }
    }
    let unlabeled = records
        .iter()
        .map(|r| Record {
            label: None,
            ..r.clone()
        })
        .collect();
    let resp = expect_ok(handle.request(Op::Predict, topic_id, None, unlabeled)?)?;
    let predictions = resp
        .predictions
        .ok_or_else(|| BridgeError::Protocol("OK PREDICT response without predictions".into()))?;
    let mut aligned: Vec<Option<RemotePrediction>> = vec![None; records.len()];
    for p in predictions {
        let slot = order
            .get(&p.bug_id)
            .ok_or_else(|| BridgeError::Protocol(format!("unrequested bug_id {} in response", p.bug_id)))?;
        if p.scores.len() != Priority::COUNT {
            return Err(BridgeError::Protocol(format!(
                "bug_id {} has {} scores, expected {}",
                p.bug_id,
                p.scores.len(),
                Priority::COUNT
            )));
        }
        if aligned[*slot].replace(p).is_some() {
            return Err(BridgeError::Protocol("duplicate bug_id in response".into()));
        }
    }
    aligned
        .into_iter()
        .zip(records)
        .map(|(p, r)| p.ok_or_else(|| BridgeError::Protocol(format!("no prediction for bug_id {}", r.bug_id))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::mock::{MockBehavior, MockWorker};
    use super::*;
    use std::collections::VecDeque;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn spawn_valid_worker() {
        let mut h = spawn_worker(
            &sh(r#"echo '{"protocol_version":"1"}'; read line; echo '{"v":1,"id":1,"status":"OK"}'"#),
            Duration::from_secs(5),
        )
        .unwrap();
        assert_eq!(h.version(), "1");
        h.shutdown().unwrap();
    }

    #[test]
    fn spawn_missing_command() {
        let err = spawn_worker(&["/nonexistent/worker-binary".into()], Duration::from_secs(1)).unwrap_err();
        assert!(matches!(err, BridgeError::Spawn { .. }));
        assert!(matches!(spawn_worker(&[], Duration::from_secs(1)), Err(BridgeError::EmptyCommand)));
    }

    #[test]
    fn spawn_wrong_version_rejected() {
        let err = spawn_worker(&sh(r#"echo '{"protocol_version":"2"}'; sleep 30"#), Duration::from_secs(5)).unwrap_err();
        assert!(matches!(err, BridgeError::VersionMismatch { ref found, .. } if found == "2"));
    }

    #[test]
    fn spawn_handshake_timeout() {
        let start = std::time::Instant::now();
        let err = spawn_worker(&sh("sleep 30"), Duration::from_millis(200)).unwrap_err();
        assert!(matches!(err, BridgeError::Timeout));
        assert!(start.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn worker_exit_is_eof() {
        let mut h = spawn_worker(&sh(r#"echo '{"protocol_version":"1"}'"#), Duration::from_secs(5)).unwrap();
        let rec = Record { bug_id: 1, text: "x".into(), label: Some(Priority::P1) };
        let err = train_remote(&mut h, 0, &[rec], &EpochPolicy::default()).unwrap_err();
        assert!(matches!(err, BridgeError::Eof | BridgeError::Io(_)), "{err:?}");
    }

    /// Replays canned lines regardless of what is sent.
    struct Scripted(VecDeque<String>);

    impl Transport for Scripted {
        fn send_line(&mut self, _line: &str) -> Result<(), BridgeError> {
            Ok(())
        }
        fn recv_line(&mut self, _t: Option<Duration>) -> Result<String, BridgeError> {
            self.0.pop_front().ok_or(BridgeError::Eof)
        }
    }

    fn scripted(lines: &[&str]) -> WorkerHandle {
        let mut all = vec![r#"{"protocol_version":"1"}"#.to_string()];
        all.extend(lines.iter().map(|s| s.to_string()));
        WorkerHandle::connect(Box::new(Scripted(all.into())), Duration::from_secs(1)).unwrap()
    }

    fn unlabeled(ids: &[u64]) -> Vec<Record> {
        ids.iter().map(|&bug_id| Record { bug_id, text: format!("bug {bug_id}"), label: None }).collect()
    }

    #[test]
    fn predictions_realigned_to_request_order() {
        let mut h = scripted(&[
            r#"{"v":1,"id":1,"status":"OK","predictions":[{"bug_id":2,"priority":"P1","scores":[1,0,0,0,0]},{"bug_id":1,"priority":"P3","scores":[0,0,1,0,0]}]}"#,
        ]);
        let out = predict_remote(&mut h, 0, &unlabeled(&[1, 2])).unwrap();
        assert_eq!(out.iter().map(|p| p.bug_id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(out[0].priority, Priority::P3);
    }

    #[test]
    fn missing_bug_id_is_protocol_error() {
        let mut h = scripted(&[
            r#"{"v":1,"id":1,"status":"OK","predictions":[{"bug_id":1,"priority":"P3","scores":[0,0,1,0,0]}]}"#,
        ]);
        assert!(matches!(predict_remote(&mut h, 0, &unlabeled(&[1, 2])), Err(BridgeError::Protocol(_))));
    }

    #[test]
    fn mismatched_id_is_protocol_error() {
        let mut h = scripted(&[r#"{"v":1,"id":9,"status":"OK"}"#]);
        let rec = Record { bug_id: 1, text: "x".into(), label: Some(Priority::P1) };
        assert!(matches!(
            train_remote(&mut h, 0, &[rec], &EpochPolicy::default()),
            Err(BridgeError::Protocol(_))
        ));
    }

    #[test]
    fn train_preconditions_send_nothing() {
        let (worker, log) = MockWorker::new(MockBehavior::Memorize);
        let mut h = WorkerHandle::connect(Box::new(worker), Duration::from_secs(1)).unwrap();
        assert!(matches!(
            train_remote(&mut h, 0, &[], &EpochPolicy::default()),
            Err(BridgeError::Precondition(_))
        ));
        assert!(matches!(
            train_remote(&mut h, 0, &unlabeled(&[1]), &EpochPolicy::default()),
            Err(BridgeError::Precondition(_))
        ));
        assert!(log.requests().is_empty());
    }

    #[test]
    fn epoch_policy_lookup() {
        let p = EpochPolicy::default().with_override(9, 1);
        assert_eq!(p.epochs_for(4), 15);
        assert_eq!(p.epochs_for(9), 1);
        assert!(EpochPolicy { default_epochs: 0, ..EpochPolicy::default() }.validate().is_err());
    }
}
