//! Topic-routed priority prediction for bug reports.
//!
//! Reports are parsed and filtered ([`corpus`]), tokenized ([`textprep`]),
//! grouped by an LDA topic model ([`topics`]) and classified by one model per
//! topic ([`classify`]). [`evaluate`] computes the metrics, [`bridge`] talks
//! to external classifier workers and [`pipeline`] wires the stages together
//! behind a configuration file.

pub mod bridge;
pub mod classify;
pub mod corpus;
pub mod evaluate;
pub mod pipeline;
pub mod synthetic;
pub mod textprep;
pub mod topics;
