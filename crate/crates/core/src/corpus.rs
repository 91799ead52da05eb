//! Bug-report ingestion, training-eligibility filtering and chronological splits.
//!
//! Datasets arrive as CSV (RFC 4180) or JSONL. A [`ColumnMap`] names the
//! source column for each canonical field, so any tracker export can be
//! read without reshaping it first. Rows that cannot be turned into a
//! [`BugReport`] are collected as [`Reject`]s and parsing carries on.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("input stream is empty")]
    EmptyInput,
    #[error("required column `{0}` not found in header")]
    MissingColumn(String),
    #[error("cannot split {0} report(s); at least 2 are required")]
    TooFewToSplit(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("unknown dataset format `{0}`")]
    UnknownFormat(String),
}

/// Priority level, `P1` being the most urgent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl Priority {
    pub const ALL: [Priority; 5] = [
        Priority::P1,
        Priority::P2,
        Priority::P3,
        Priority::P4,
        Priority::P5,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Priority> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Priority::P1 => "P1",
            Priority::P2 => "P2",
            Priority::P3 => "P3",
            Priority::P4 => "P4",
            Priority::P5 => "P5",
        }
    }

    /// Parses `P1`..`P5` (case-insensitive, surrounding whitespace ignored).
    pub fn parse(raw: &str) -> Option<Priority> {
        match raw.trim().to_ascii_uppercase().as_str() {
            "P1" => Some(Priority::P1),
            "P2" => Some(Priority::P2),
            "P3" => Some(Priority::P3),
            "P4" => Some(Priority::P4),
            "P5" => Some(Priority::P5),
            _ => None,
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bugzilla lifecycle state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Lifecycle {
    Unconfirmed,
    New,
    Assigned,
    Resolved,
    Verified,
    Reopen,
    Closed,
}

impl Lifecycle {
    fn parse(raw: &str) -> Option<Lifecycle> {
        match raw.trim().to_ascii_uppercase().as_str() {
            "UNCONFIRMED" => Some(Lifecycle::Unconfirmed),
            "NEW" => Some(Lifecycle::New),
            "ASSIGNED" => Some(Lifecycle::Assigned),
            "RESOLVED" => Some(Lifecycle::Resolved),
            "VERIFIED" => Some(Lifecycle::Verified),
            "REOPEN" | "REOPENED" => Some(Lifecycle::Reopen),
            "CLOSED" => Some(Lifecycle::Closed),
            _ => None,
        }
    }

    fn is_terminal(self) -> bool {
        matches!(
            self,
            Lifecycle::Resolved | Lifecycle::Verified | Lifecycle::Closed
        )
    }
}

/// Resolution qualifier. Every resolution other than FIXED collapses to `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Resolution {
    Fixed,
    Other,
    None,
}

impl Resolution {
    fn parse(raw: &str) -> Resolution {
        match raw.trim().to_ascii_uppercase().as_str() {
            "" | "NONE" | "---" => Resolution::None,
            "FIXED" => Resolution::Fixed,
            _ => Resolution::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Status {
    state: Lifecycle,
    resolution: Resolution,
}

impl Status {
    /// FIXED is only accepted for RESOLVED, VERIFIED or CLOSED reports.
    pub fn new(state: Lifecycle, resolution: Resolution) -> Option<Status> {
        if resolution == Resolution::Fixed && !state.is_terminal() {
            return None;
        }
        Some(Status { state, resolution })
    }

    pub fn state(&self) -> Lifecycle {
        self.state
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn is_resolved_fixed(&self) -> bool {
        self.state == Lifecycle::Resolved && self.resolution == Resolution::Fixed
    }

    /// Parses a status column plus an optional resolution column. A combined
    /// value such as `RESOLVED_FIXED` or `RESOLVED FIXED` is also accepted
    /// when the resolution column is absent or empty.
    pub fn parse(status: &str, resolution: Option<&str>) -> Result<Status, String> {
        let status = status.trim();
        let resolution = resolution.map(str::trim).filter(|r| !r.is_empty());
        let (state_raw, res_raw) = match (Lifecycle::parse(status), resolution) {
            (Some(_), _) => (status, resolution),
            (None, None) => match status.split_once(|c: char| c == '_' || c.is_whitespace()) {
                Some((s, r)) => (s, Some(r)),
                None => (status, None),
            },
            (None, Some(_)) => (status, resolution),
        };
        let state = Lifecycle::parse(state_raw)
            .ok_or_else(|| format!("unrecognised status `{status}`"))?;
        let res = res_raw.map(Resolution::parse).unwrap_or(Resolution::None);
        Status::new(state, res)
            .ok_or_else(|| format!("resolution FIXED is not valid for status `{status}`"))
    }
}

/// One issue from a tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub bug_id: u64,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub product: String,
    #[serde(default)]
    pub component: String,
    #[serde(flatten, with = "status_serde")]
    pub status: Status,
    #[serde(with = "priority_label")]
    pub priority: Option<Priority>,
    pub order_key: i64,
}

mod status_serde {
    use super::{Lifecycle, Resolution, Status};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        status: Lifecycle,
        resolution: Resolution,
    }

    pub fn serialize<S: Serializer>(status: &Status, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            status: status.state,
            resolution: status.resolution,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Status, D::Error> {
        let repr = Repr::deserialize(d)?;
        Status::new(repr.status, repr.resolution)
            .ok_or_else(|| serde::de::Error::custom("resolution FIXED on a non-terminal status"))
    }
}

/// `P1`..`P5`, or `Unknown` for `None`.
pub mod priority_label {
    use super::Priority;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Option<Priority>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(p.map(Priority::as_str).unwrap_or("Unknown"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Priority>, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(Priority::parse(&raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Jsonl,
}

impl FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DatasetFormat::Csv),
            "jsonl" | "ndjson" => Ok(DatasetFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Source column (CSV header or JSON key) for each canonical field.
///
/// `bug_id`, `status` and `priority` must be present. Missing text columns
/// read as empty strings. When `timestamp` is set, its value replaces
/// `bug_id` as the ordering key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub bug_id: String,
    pub summary: String,
    pub description: String,
    pub product: String,
    pub component: String,
    pub status: String,
    pub resolution: Option<String>,
    pub priority: String,
    pub timestamp: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            bug_id: "bug_id".into(),
            summary: "summary".into(),
            description: "description".into(),
            product: "product".into(),
            component: "component".into(),
            status: "status".into(),
            resolution: Some("resolution".into()),
            priority: "priority".into(),
            timestamp: None,
        }
    }
}

/// A row that could not be turned into a [`BugReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub reports: Vec<BugReport>,
    pub rejects: Vec<Reject>,
}

#[derive(Default)]
struct RawFields {
    bug_id: Option<String>,
    summary: Option<String>,
    description: Option<String>,
    product: Option<String>,
    component: Option<String>,
    status: Option<String>,
    resolution: Option<String>,
    priority: Option<String>,
    timestamp: Option<String>,
}

/// Reads a whole dataset. Only I/O failures and a missing required CSV
/// header are fatal; bad rows end up in [`ParseOutcome::rejects`].
pub fn parse_dataset<R: Read>(
    source: R,
    format: DatasetFormat,
    columns: &ColumnMap,
) -> Result<ParseOutcome, CorpusError> {
    let mut reader = BufReader::new(source);
    if reader.fill_buf()?.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut outcome = ParseOutcome::default();
    let mut seen = HashSet::new();
    let mut accept = |raw: RawFields, line: u64, outcome: &mut ParseOutcome| {
        match build_report(raw) {
            Ok(report) if !seen.insert(report.bug_id) => outcome.rejects.push(Reject {
                line,
                reason: format!("duplicate bug_id {}", report.bug_id),
            }),
            Ok(report) => outcome.reports.push(report),
            Err(reason) => outcome.rejects.push(Reject { line, reason }),
        }
    };

    match format {
        DatasetFormat::Csv => {
            let mut csv = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(false)
                .from_reader(reader);
            let headers = csv.headers()?.clone();
            let find = |name: &str| headers.iter().position(|h| h.trim() == name);
            let require = |name: &str| find(name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()));
            let bug_id = require(&columns.bug_id)?;
            let status = require(&columns.status)?;
            let priority = require(&columns.priority)?;
            let summary = find(&columns.summary);
            let description = find(&columns.description);
            let product = find(&columns.product);
            let component = find(&columns.component);
            let resolution = columns.resolution.as_deref().and_then(find);
            let timestamp = match &columns.timestamp {
                Some(name) => Some(require(name)?),
                None => None,
            };

            let mut record = csv::StringRecord::new();
            loop {
                let line = csv.position().line();
                match csv.read_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {
                        let get = |idx: Option<usize>| idx.and_then(|i| record.get(i)).map(str::to_string);
                        let raw = RawFields {
                            bug_id: get(Some(bug_id)),
                            summary: get(summary),
                            description: get(description),
                            product: get(product),
                            component: get(component),
                            status: get(Some(status)),
                            resolution: get(resolution),
                            priority: get(Some(priority)),
                            timestamp: get(timestamp),
                        };
                        let line = record.position().map(|p| p.line()).unwrap_or(line);
                        accept(raw, line, &mut outcome);
                    }
                    Err(err) if err.is_io_error() => return Err(err.into()),
                    Err(err) => {
                        let line = err.position().map(|p| p.line()).unwrap_or(line);
                        outcome.rejects.push(Reject {
                            line,
                            reason: err.to_string(),
                        });
                    }
                }
            }
        }
        DatasetFormat::Jsonl => {
            for (idx, line) in reader.lines().enumerate() {
                let line_no = idx as u64 + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = match serde_json::from_str(&line) {
                    Ok(v) => v,
                    Err(err) => {
                        outcome.rejects.push(Reject {
                            line: line_no,
                            reason: format!("invalid json: {err}"),
                        });
                        continue;
                    }
                };
                let Some(obj) = value.as_object() else {
                    outcome.rejects.push(Reject {
                        line: line_no,
                        reason: "record is not a json object".into(),
                    });
                    continue;
                };
                let get = |key: &str| obj.get(key).and_then(json_scalar);
                let raw = RawFields {
                    bug_id: get(&columns.bug_id),
                    summary: get(&columns.summary),
                    description: get(&columns.description),
                    product: get(&columns.product),
                    component: get(&columns.component),
                    status: get(&columns.status),
                    resolution: columns.resolution.as_deref().and_then(get),
                    priority: get(&columns.priority),
                    timestamp: columns.timestamp.as_deref().and_then(get),
                };
                accept(raw, line_no, &mut outcome);
            }
        }
    }
    Ok(outcome)
}

fn json_scalar(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn build_report(raw: RawFields) -> Result<BugReport, String> {
    let id_raw = raw.bug_id.ok_or("missing bug_id")?;
    let bug_id: u64 = id_raw
        .trim()
        .parse()
        .map_err(|_| format!("invalid bug_id `{id_raw}`"))?;
    let status_raw = raw.status.ok_or("missing status")?;
    let status = Status::parse(&status_raw, raw.resolution.as_deref())?;
    let priority = raw.priority.as_deref().and_then(Priority::parse);
    let order_key = match raw.timestamp {
        Some(ts) => parse_timestamp(&ts).ok_or_else(|| format!("invalid timestamp `{ts}`"))?,
        None => i64::try_from(bug_id).map_err(|_| format!("bug_id {bug_id} out of range"))?,
    };
    Ok(BugReport {
        bug_id,
        summary: raw.summary.unwrap_or_default(),
        description: raw.description.unwrap_or_default(),
        product: raw.product.unwrap_or_default(),
        component: raw.component.unwrap_or_default(),
        status,
        priority,
        order_key,
    })
}

/// Integer keys pass through; dates become Unix seconds.
fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S %z", "%Y-%m-%d %H:%M %z"] {
        if let Ok(dt) = DateTime::parse_from_str(raw, fmt) {
            return Some(dt.timestamp());
        }
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// RESOLVED/FIXED reports with a known priority, in input order.
pub fn filter_training_eligible(reports: &[BugReport]) -> Vec<BugReport> {
    reports
        .iter()
        .filter(|r| r.status.is_resolved_fixed() && r.priority.is_some())
        .cloned()
        .collect()
}

/// Keeps reports whose ordering key falls in `[from, to]`.
pub fn filter_order_key_range(reports: &[BugReport], from: i64, to: i64) -> Vec<BugReport> {
    reports
        .iter()
        .filter(|r| (from..=to).contains(&r.order_key))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    #[default]
    ByOrderKey,
    AsGiven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Train partition gets `ceil(fraction * n)` reports.
    #[default]
    Ceil,
    /// Train partition gets `floor(fraction * n)` reports.
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub ordering: Ordering,
    pub rounding: Rounding,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            ordering: Ordering::ByOrderKey,
            rounding: Rounding::Ceil,
        }
    }
}

impl SplitSpec {
    pub fn train_size(&self, n: usize) -> usize {
        let exact = self.train_fraction * n as f64;
        let size = match self.rounding {
            Rounding::Ceil => exact.ceil(),
            Rounding::Floor => exact.floor(),
        };
        size as usize
    }
}

/// Splits without shuffling. Under [`Ordering::ByOrderKey`] reports are
/// stably sorted by `order_key` first, so every test key is at least every
/// train key.
pub fn chronological_split(
    reports: &[BugReport],
    spec: &SplitSpec,
) -> Result<(Vec<BugReport>, Vec<BugReport>), CorpusError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(spec.train_fraction));
    }
    if reports.len() < 2 {
        return Err(CorpusError::TooFewToSplit(reports.len()));
    }
    let mut ordered = reports.to_vec();
    if spec.ordering == Ordering::ByOrderKey {
        ordered.sort_by_key(|r| r.order_key);
    }
    let cut = spec.train_size(ordered.len()).min(ordered.len());
    let test = ordered.split_off(cut);
    Ok((ordered, test))
}

pub fn write_canonical_jsonl<W: Write>(reports: &[BugReport], mut out: W) -> Result<(), CorpusError> {
    for report in reports {
        serde_json::to_writer(&mut out, report)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_canonical_jsonl<R: Read>(source: R) -> Result<Vec<BugReport>, CorpusError> {
    let mut reports = Vec::new();
    for line in BufReader::new(source).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        reports.push(serde_json::from_str(&line)?);
    }
    Ok(reports)
}

pub fn write_rejects_jsonl<W: Write>(rejects: &[Reject], mut out: W) -> Result<(), CorpusError> {
    for reject in rejects {
        serde_json::to_writer(&mut out, reject)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes reports as CSV under `columns`, with `order_key` going to the
/// timestamp column when one is mapped.
pub fn write_csv<W: Write>(
    reports: &[BugReport],
    columns: &ColumnMap,
    out: W,
) -> Result<(), CorpusError> {
    let mut csv = csv::Writer::from_writer(out);
    let mut header = vec![
        columns.bug_id.as_str(),
        columns.summary.as_str(),
        columns.description.as_str(),
        columns.product.as_str(),
        columns.component.as_str(),
        columns.status.as_str(),
    ];
    if let Some(r) = &columns.resolution {
        header.push(r);
    }
    header.push(&columns.priority);
    if let Some(t) = &columns.timestamp {
        header.push(t);
    }
    csv.write_record(&header)?;
    for r in reports {
        let status = serde_json::to_value(r.status.state)?;
        let resolution = serde_json::to_value(r.status.resolution)?;
        let mut row = vec![
            r.bug_id.to_string(),
            r.summary.clone(),
            r.description.clone(),
            r.product.clone(),
            r.component.clone(),
        ];
        match &columns.resolution {
            Some(_) => {
                row.push(status.as_str().unwrap_or_default().to_string());
                row.push(resolution.as_str().unwrap_or_default().to_string());
            }
            None => row.push(format!(
                "{}_{}",
                status.as_str().unwrap_or_default(),
                resolution.as_str().unwrap_or_default()
            )),
        }
        row.push(r.priority.map(Priority::as_str).unwrap_or("Unknown").to_string());
        if columns.timestamp.is_some() {
            row.push(r.order_key.to_string());
        }
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}
