//! Append-only JSON-lines event log with per-record checksums.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{DynamicsConfig, OceanVector};
use crate::memory::Emotion;
use crate::profiles::Group;
use crate::scenario::Scenario;

pub const LOG_FORMAT: &str = "anchorsim-events";
pub const LOG_VERSION: u32 = 1;

pub const POLICY_ENGINE: &str = "policy_engine";
pub const OPERATOR: &str = "operator";
pub const ENGINE_NODE: &str = "engine";

pub fn topic_node(topic: &str) -> String {
    format!("topic:{topic}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceClass {
    InnerBeliefUpdate,
    ExposureEffect,
    TopicExpansion,
    PolicyShock,
    CalibrationPatch,
}

impl EvidenceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceClass::InnerBeliefUpdate => "inner_belief_update",
            EvidenceClass::ExposureEffect => "exposure_effect",
            EvidenceClass::TopicExpansion => "topic_expansion",
            EvidenceClass::PolicyShock => "policy_shock",
            EvidenceClass::CalibrationPatch => "calibration_patch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Causal,
    State,
}

/// One log line after the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub tick: u32,
    #[serde(rename = "type")]
    pub kind: RecordKind,
    pub source: String,
    pub target: String,
    pub topic: Option<String>,
    pub delta: f64,
    pub evidence: Option<EvidenceClass>,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub checksum: String,
}

/// Per-agent state carried by `state` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatePayload {
    pub beliefs: BTreeMap<String, f64>,
    pub anchors: BTreeMap<String, f64>,
    pub rho: f64,
    pub lambda: f64,
    pub emotion: Emotion,
    pub new_tags: Vec<String>,
    pub reflections: usize,
}

impl LogRecord {
    pub fn causal(
        tick: u32,
        evidence: EvidenceClass,
        source: impl Into<String>,
        target: impl Into<String>,
        topic: Option<&str>,
        delta: f64,
        payload: Value,
    ) -> Self {
        LogRecord {
            tick,
            kind: RecordKind::Causal,
            source: source.into(),
            target: target.into(),
            topic: topic.map(str::to_string),
            delta,
            evidence: Some(evidence),
            payload,
            checksum: String::new(),
        }
        .sealed()
    }

    pub fn state(tick: u32, agent: &str, state: &StatePayload) -> Self {
        LogRecord {
            tick,
            kind: RecordKind::State,
            source: agent.to_string(),
            target: agent.to_string(),
            topic: None,
            delta: 0.0,
            evidence: None,
            payload: serde_json::to_value(state).expect("state payload serializes"),
            checksum: String::new(),
        }
        .sealed()
    }

    pub fn expected_checksum(&self) -> String {
        let mut bare = self.clone();
        bare.checksum.clear();
        checksum_of(&serde_json::to_string(&bare).expect("record serializes"))
    }

    fn sealed(mut self) -> Self {
        self.checksum = self.expected_checksum();
        self
    }

    pub fn state_payload(&self) -> Option<StatePayload> {
        (self.kind == RecordKind::State)
            .then(|| serde_json::from_value(self.payload.clone()).ok())
            .flatten()
    }
}

/// First 16 hex digits of SHA-256.
pub fn checksum_of(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut s = String::with_capacity(16);
    for b in &digest[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentHeader {
    pub id: String,
    pub group: Group,
    pub ocean: OceanVector,
    pub rho: f64,
    pub lambda: f64,
    pub beliefs: BTreeMap<String, f64>,
    pub anchors: BTreeMap<String, f64>,
}

/// First log line: format tag, version and the full initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub provider: String,
    pub scenario: Scenario,
    pub dynamics: DynamicsConfig,
    pub agents: Vec<AgentHeader>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub checksum: String,
}

impl LogHeader {
    pub fn expected_checksum(&self) -> String {
        let mut bare = self.clone();
        bare.checksum.clear();
        checksum_of(&serde_json::to_string(&bare).expect("header serializes"))
    }

    pub fn seal(&mut self) {
        self.checksum = self.expected_checksum();
    }

    pub fn groups(&self) -> BTreeMap<String, Group> {
        self.agents.iter().map(|a| (a.id.clone(), a.group)).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogError {
    #[error("log is empty or has no header")]
    MissingHeader,
    #[error("unsupported log version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("not an event log: format `{0}`")]
    Format(String),
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("record {index} (line {line}): checksum mismatch")]
    Checksum { index: usize, line: usize },
    #[error("header checksum mismatch")]
    HeaderChecksum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub fn header_line(&self) -> String {
        serde_json::to_string(&self.header).expect("header serializes")
    }

    pub fn record_line(record: &LogRecord) -> String {
        serde_json::to_string(record).expect("record serializes")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for r in &self.records {
            out.push_str(&Self::record_line(r));
            out.push('\n');
        }
        out
    }

    /// Parses and verifies a log. Line numbers in errors are 1-based;
    /// record indices are 0-based and exclude the header.
    pub fn parse_jsonl(text: &str) -> Result<EventLog, LogError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(LogError::MissingHeader)?;
        let raw: Value = serde_json::from_str(first).map_err(|e| LogError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?;
        let format = raw.get("format").and_then(Value::as_str).unwrap_or_default();
        if format != LOG_FORMAT {
            return Err(LogError::Format(format.to_string()));
        }
        let version = raw.get("version").and_then(Value::as_u64).unwrap_or(0) as u32;
        if version != LOG_VERSION {
            return Err(LogError::Version {
                found: version,
                expected: LOG_VERSION,
            });
        }
        let header: LogHeader = serde_json::from_value(raw).map_err(|e| LogError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?;
        if header.checksum != header.expected_checksum() {
            return Err(LogError::HeaderChecksum);
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let index = records.len();
            let lineno = idx + 1;
            let r: LogRecord = serde_json::from_str(line).map_err(|e| LogError::Malformed {
                line: lineno,
                reason: format!("record {index}: {e}"),
            })?;
            if r.checksum != r.expected_checksum() {
                return Err(LogError::Checksum { index, line: lineno });
            }
            records.push(r);
        }
        Ok(EventLog { header, records })
    }

    pub fn causal(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Causal)
    }

    pub fn last_tick(&self) -> u32 {
        self.records.iter().map(|r| r.tick).max().unwrap_or(0)
    }
}
