//! On-disk formats: versioned JSON documents for pools, graphs and
//! snapshots, and the append-only JSON-lines event log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anchorsim_core::engine::log::{EventLog, LogError, LogHeader, LogRecord};
use anchorsim_core::engine::EngineSnapshot;
use anchorsim_core::metrics::TickMetrics;
use anchorsim_core::profiles::AgentProfile;
use anchorsim_core::socialnet::TrustGraph;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DOC_VERSION: u32 = 1;
pub const POOL_FORMAT: &str = "anchorsim-pool";
pub const GRAPH_FORMAT: &str = "anchorsim-graph";
pub const SNAPSHOT_FORMAT: &str = "anchorsim-snapshot";
pub const METRICS_FORMAT: &str = "anchorsim-metrics";

pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const POOL_FILE: &str = "pool.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("expected a `{expected}` document, found `{found}`")]
    Format { expected: String, found: String },
    #[error("document version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    data: T,
}

pub fn to_document<T: Serialize>(format: &str, data: &T) -> String {
    let env = Envelope {
        format: format.to_string(),
        version: DOC_VERSION,
        data,
    };
    let mut s = serde_json::to_string_pretty(&env).expect("document serializes");
    s.push('\n');
    s
}

pub fn from_document<T: DeserializeOwned>(format: &str, text: &str) -> Result<T, PersistError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| PersistError::Malformed(e.to_string()))?;
    let found = raw.get("format").and_then(Value::as_str).unwrap_or_default();
    if found != format {
        return Err(PersistError::Format {
            expected: format.into(),
            found: found.into(),
        });
    }
    let version = raw.get("version").and_then(Value::as_u64).unwrap_or(0);
    if version != DOC_VERSION as u64 {
        return Err(PersistError::Version {
            found: version,
            expected: DOC_VERSION,
        });
    }
    let env: Envelope<T> = serde_json::from_value(raw).map_err(|e| PersistError::Malformed(e.to_string()))?;
    Ok(env.data)
}

fn write_doc<T: Serialize>(path: &Path, format: &str, data: &T) -> Result<(), PersistError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    // write to a sibling then rename so readers never see half a document
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_document(format, data)).map_err(io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io(path))
}

fn read_doc<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T, PersistError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    from_document(format, &text)
}

pub fn save_pool(path: &Path, pool: &[AgentProfile]) -> Result<(), PersistError> {
    write_doc(path, POOL_FORMAT, &pool)
}

pub fn load_pool(path: &Path) -> Result<Vec<AgentProfile>, PersistError> {
    read_doc(path, POOL_FORMAT)
}

pub fn save_graph(path: &Path, graph: &TrustGraph) -> Result<(), PersistError> {
    write_doc(path, GRAPH_FORMAT, graph)
}

pub fn load_graph(path: &Path) -> Result<TrustGraph, PersistError> {
    read_doc(path, GRAPH_FORMAT)
}

pub fn save_snapshot(path: &Path, snap: &EngineSnapshot) -> Result<(), PersistError> {
    write_doc(path, SNAPSHOT_FORMAT, snap)
}

pub fn load_snapshot(path: &Path) -> Result<EngineSnapshot, PersistError> {
    read_doc(path, SNAPSHOT_FORMAT)
}

pub fn save_metrics(path: &Path, metrics: &[TickMetrics]) -> Result<(), PersistError> {
    write_doc(path, METRICS_FORMAT, &metrics)
}

pub fn load_metrics(path: &Path) -> Result<Vec<TickMetrics>, PersistError> {
    read_doc(path, METRICS_FORMAT)
}

pub fn snapshot_path(dir: &Path, tick: u32) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("tick-{tick:05}.json"))
}

pub fn load_event_log(path: &Path) -> Result<EventLog, PersistError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    Ok(EventLog::parse_jsonl(&text)?)
}

/// Appends one line per record with a single write, so a crash leaves at
/// most one torn trailing line, which the loader rejects by checksum.
pub struct EventLogWriter {
    path: PathBuf,
    file: File,
}

impl EventLogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, PersistError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io(dir))?;
        }
        File::create(path).map_err(io(path))?;
        let mut w = EventLogWriter {
            path: path.to_path_buf(),
            file: OpenOptions::new().append(true).open(path).map_err(io(path))?,
        };
        let line = serde_json::to_string(header).expect("header serializes");
        w.write_line(line)?;
        Ok(w)
    }

    fn write_line(&mut self, mut line: String) -> Result<(), PersistError> {
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io(&self.path))
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<(), PersistError> {
        self.write_line(EventLog::record_line(record))
    }

    pub fn append_all<'a>(&mut self, records: impl IntoIterator<Item = &'a LogRecord>) -> Result<(), PersistError> {
        for r in records {
            self.append(r)?;
        }
        Ok(())
    }

    pub fn sync(&mut self) -> Result<(), PersistError> {
        self.file.sync_data().map_err(io(&self.path))
    }
}
