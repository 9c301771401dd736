// SPDX-License-Identifier: Apache-2.0

//! Demonstration logging: per-topic NDJSON stream logs, nearest-timestamp
//! alignment, and compiled demonstrations in a versioned binary file.

mod align;
mod demo;
mod log;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::topics;
use crate::wire::WireError;

pub use align::{align, align_timestamps, default_tolerance, nearest, AlignedStep, Alignment};
pub use demo::{
    action_features, compile, observation_features, DemoMeta, DemoStep, Demonstration, DEMO_MAGIC, DEMO_SCHEMA_VERSION,
};
pub use log::{log_file_name, LogRecord, MemoryTap, RecordSummary, Recorder, StreamLog, TopicSummary, LOG_VERSION};

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("primary stream `{0}` is missing or empty")]
    EmptyPrimary(String),
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("{path}:{line}: {reason}")]
    BadLog { path: String, line: usize, reason: String },
    #[error("timestamps of `{topic}` decrease at sample {index}")]
    NonMonotonic { topic: String, index: usize },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("malformed demonstration file: {0}")]
    BadFormat(String),
    #[error("step {step} has {got} values, expected {expected}")]
    DimensionMismatch { step: usize, expected: usize, got: usize },
    #[error("recorder thread for `{0}` panicked")]
    WriterPanicked(String),
}

/// The `recorder` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecorderConfig {
    pub topics: Vec<String>,
    /// Tap queue bound per topic; overflow drops the oldest entry and is
    /// counted, never blocking the publisher.
    pub queue_bound: usize,
    /// Stream whose samples become demonstration steps.
    pub primary: String,
    /// Stream the actions come from.
    pub action_topic: String,
    /// Matching tolerance in seconds; defaults to half the period of the
    /// slowest participating stream.
    pub tolerance_s: Option<f64>,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        Self {
            topics: vec![
                topics::STATE.into(),
                topics::COMMAND.into(),
                topics::HAND.into(),
                topics::CONTROL.into(),
            ],
            queue_bound: 4096,
            primary: topics::STATE.into(),
            action_topic: topics::COMMAND.into(),
            tolerance_s: None,
        }
    }
}

impl RecorderConfig {
    pub fn validate(&self) -> Result<(), RecorderError> {
        if self.queue_bound == 0 {
            return Err(RecorderError::BadFormat("queue_bound must be at least 1".into()));
        }
        if let Some(t) = self.tolerance_s {
            if !(t > 0.0 && t.is_finite()) {
                return Err(RecorderError::BadTolerance(t));
            }
        }
        Ok(())
    }
}
