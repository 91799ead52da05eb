//! Protocol v1 messages. One JSON object per line, UTF-8.

use serde::{Deserialize, Serialize};

use crate::corpus::Priority;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Op {
    Train,
    Predict,
    Shutdown,
}

/// First line a worker writes after starting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub bug_id: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Priority>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub id: u64,
    pub op: Op,
    pub topic_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    #[serde(default)]
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemotePrediction {
    pub bug_id: u64,
    pub priority: Priority,
    /// One score per level, `P1..P5`.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub v: u32,
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<Op>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_id: Option<u32>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<RemotePrediction>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok(req: &Request) -> Response {
        Response {
            v: PROTOCOL_VERSION,
            id: req.id,
            op: Some(req.op),
            topic_id: Some(req.topic_id),
            status: Status::Ok,
            predictions: None,
            error: None,
        }
    }

    pub fn error(req: &Request, message: impl Into<String>) -> Response {
        Response {
            status: Status::Error,
            error: Some(message.into()),
            ..Response::ok(req)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let req = Request {
            v: 1,
            id: 7,
            op: Op::Train,
            topic_id: 3,
            epochs: Some(15),
            records: vec![Record {
                bug_id: 12,
                text: "Crash\n\nUI".into(),
                label: Some(Priority::P2),
            }],
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"v":1,"id":7,"op":"TRAIN","topic_id":3,"epochs":15,"records":[{"bug_id":12,"text":"Crash\n\nUI","label":"P2"}]}"#
        );
        let predict = Request { op: Op::Predict, epochs: None, records: vec![Record { label: None, ..req.records[0].clone() }], ..req };
        assert_eq!(
            serde_json::to_string(&predict).unwrap(),
            r#"{"v":1,"id":7,"op":"PREDICT","topic_id":3,"records":[{"bug_id":12,"text":"Crash\n\nUI"}]}"#
        );
    }

    #[test]
    fn response_wire_format() {
        let line = r#"{"v":1,"id":2,"status":"OK","predictions":[{"bug_id":5,"priority":"P3","scores":[0.1,0.1,0.6,0.1,0.1]}]}"#;
        let resp: Response = serde_json::from_str(line).unwrap();
        assert_eq!(resp.status, Status::Ok);
        assert_eq!(resp.predictions.as_ref().unwrap()[0].priority, Priority::P3);
        let err: Response = serde_json::from_str(r#"{"v":1,"id":3,"status":"ERROR","error":"untrained topic"}"#).unwrap();
        assert_eq!(err.error.as_deref(), Some("untrained topic"));
    }
}
