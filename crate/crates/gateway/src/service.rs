//! HTTP control surface and per-tick metric stream.
//!
//! Each run owns one engine thread. Handlers never touch the engine: writes
//! go through the run's command queue (served in arrival order) and reads
//! come from a shared view the engine thread updates after every tick.

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, RwLock};

use anchorsim_core::engine::causal::{build_causal_graph, GraphLevel};
use anchorsim_core::engine::log::{EvidenceClass, LogRecord};
use anchorsim_core::engine::{BeliefFrame, Engine, ParamPatch};
use anchorsim_core::metrics::{histogram, TickMetrics, BIN_EDGES};
use anchorsim_core::profiles::Group;
use anchorsim_core::socialnet::{export, NetworkExport};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

use crate::config::{ConfigError, RunConfig};
use crate::persist::{self, EventLogWriter};
use crate::pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Created,
    Running,
    Paused,
    Finished,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Finished | RunStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub status: RunStatus,
    pub tick: u32,
    pub total_ticks: u32,
    pub theta_bc: f64,
    pub patches: Vec<ParamPatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Read model shared between the engine thread and the handlers.
struct RunView {
    handle: RunHandle,
    metrics: Vec<TickMetrics>,
    frames: Vec<BeliefFrame>,
    records: Vec<LogRecord>,
    groups: BTreeMap<String, Group>,
    network: NetworkExport,
}

#[derive(Debug, Clone)]
enum StreamMsg {
    Tick(TickMetrics),
    End(RunStatus),
}

type Reply<T> = oneshot::Sender<Result<T, ApiError>>;

enum Command {
    Step { n: u32, reply: Reply<()> },
    Pause { reply: Reply<()> },
    Resume { reply: Reply<()> },
    Patch { patch: ParamPatch, reply: Reply<ParamPatch> },
}

struct RunSlot {
    view: Arc<RwLock<RunView>>,
    commands: mpsc::Sender<Command>,
    stream: broadcast::Sender<StreamMsg>,
}

#[derive(Clone, Default)]
pub struct AppState {
    runs: Arc<RwLock<BTreeMap<String, Arc<RunSlot>>>>,
    next_id: Arc<AtomicU64>,
    /// Relative `output_dir`s in submitted configs resolve against this.
    base_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(base_dir: Option<PathBuf>) -> Self {
        AppState {
            base_dir,
            ..AppState::default()
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<RunSlot>, ApiError> {
        self.runs
            .read()
            .expect("run table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_run", format!("no run `{id}`")).run(id, None))
    }
}

#[derive(Debug, Clone)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    run_id: Option<String>,
    tick: Option<u32>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            run_id: None,
            tick: None,
        }
    }

    fn run(mut self, id: &str, tick: Option<u32>) -> Self {
        self.run_id = Some(id.to_string());
        self.tick = tick;
        self
    }

    fn conflict(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "run_id": self.run_id,
            "tick": self.tick,
            "error": {"code": self.code, "message": self.message},
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn envelope(id: &str, tick: u32, data: impl Serialize) -> Response {
    Json(json!({"run_id": id, "tick": tick, "data": data})).into_response()
}

impl RunSlot {
    fn handle(&self) -> RunHandle {
        self.view.read().expect("view lock").handle.clone()
    }

    async fn send<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        let gone = || ApiError::new(StatusCode::GONE, "engine_stopped", "the run's engine thread has stopped");
        self.commands.send(make(tx)).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }
}

struct Worker {
    engine: Engine,
    view: Arc<RwLock<RunView>>,
    stream: broadcast::Sender<StreamMsg>,
    writer: Option<(EventLogWriter, PathBuf)>,
    running: bool,
}

impl Worker {
    fn set_status(&self, status: RunStatus) {
        let mut v = self.view.write().expect("view lock");
        if !v.handle.status.is_terminal() {
            v.handle.status = status;
        }
    }

    fn fail(&mut self, message: String) {
        tracing::error!(error = %message, "run failed");
        self.running = false;
        let mut v = self.view.write().expect("view lock");
        v.handle.status = RunStatus::Failed;
        v.handle.error = Some(message);
        let _ = self.stream.send(StreamMsg::End(RunStatus::Failed));
    }

    fn advance(&mut self) -> Result<(), String> {
        let report = self.engine.step().map_err(|e| e.to_string())?;
        if let Some((w, dir)) = &mut self.writer {
            w.append_all(&report.records).map_err(|e| e.to_string())?;
            if let Some(snap) = &report.snapshot {
                persist::save_snapshot(&persist::snapshot_path(dir, snap.tick), snap).map_err(|e| e.to_string())?;
            }
            if self.engine.is_finished() {
                w.sync().map_err(|e| e.to_string())?;
                persist::save_metrics(&dir.join(persist::METRICS_FILE), self.engine.metrics()).map_err(|e| e.to_string())?;
            }
        }
        let finished = self.engine.is_finished();
        let mut v = self.view.write().expect("view lock");
        v.handle.tick = self.engine.tick();
        v.handle.theta_bc = self.engine.theta_bc();
        v.metrics.push(report.metrics.clone());
        v.frames.push(self.engine.trajectory().last().cloned().unwrap_or_default());
        v.records.extend(report.records);
        if finished {
            v.handle.status = RunStatus::Finished;
            self.running = false;
        }
        // sent under the write lock so a subscriber that copied the history
        // under the read lock neither misses nor repeats a tick
        let _ = self.stream.send(StreamMsg::Tick(report.metrics));
        if finished {
            let _ = self.stream.send(StreamMsg::End(RunStatus::Finished));
        }
        Ok(())
    }

    fn finished_error(&self) -> ApiError {
        ApiError::conflict(format!("run finished at tick {}", self.engine.tick()))
    }

    fn handle_command(&mut self, cmd: Command) {
        match cmd {
            Command::Step { n, reply } => {
                let out = if self.running {
                    Err(ApiError::conflict("run is running; pause it before stepping"))
                } else if self.engine.is_finished() && n > 0 {
                    Err(self.finished_error())
                } else {
                    let mut out = Ok(());
                    for _ in 0..n {
                        if self.engine.is_finished() {
                            break;
                        }
                        if let Err(e) = self.advance() {
                            self.fail(e.clone());
                            out = Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "run_failed", e));
                            break;
                        }
                    }
                    if n > 0 {
                        self.set_status(RunStatus::Paused);
                    }
                    out
                };
                let _ = reply.send(out);
            }
            Command::Pause { reply } => {
                let out = if self.engine.is_finished() {
                    Err(self.finished_error())
                } else {
                    self.running = false;
                    self.engine.set_paused(true);
                    self.set_status(RunStatus::Paused);
                    Ok(())
                };
                let _ = reply.send(out);
            }
            Command::Resume { reply } => {
                let out = if self.engine.is_finished() {
                    Err(self.finished_error())
                } else {
                    self.running = true;
                    self.engine.set_paused(false);
                    self.set_status(RunStatus::Running);
                    Ok(())
                };
                let _ = reply.send(out);
            }
            Command::Patch { patch, reply } => {
                let out = match self.engine.submit_patch(patch) {
                    Ok(ack) => {
                        match ack.paused {
                            Some(true) => {
                                self.running = false;
                                self.set_status(RunStatus::Paused);
                            }
                            Some(false) => {
                                self.running = true;
                                self.set_status(RunStatus::Running);
                            }
                            None => {}
                        }
                        self.view.write().expect("view lock").handle.patches.push(ack.clone());
                        Ok(ack)
                    }
                    Err(e) => Err(ApiError::invalid("invalid_patch", e.to_string())),
                };
                let _ = reply.send(out);
            }
        }
    }

    fn run(mut self, commands: mpsc::Receiver<Command>) {
        loop {
            let cmd = if self.running {
                match commands.try_recv() {
                    Ok(c) => Some(c),
                    Err(mpsc::TryRecvError::Empty) => None,
                    Err(mpsc::TryRecvError::Disconnected) => return,
                }
            } else {
                match commands.recv() {
                    Ok(c) => Some(c),
                    Err(_) => return,
                }
            };
            match cmd {
                Some(c) => self.handle_command(c),
                None => {
                    if let Err(e) = self.advance() {
                        self.fail(e);
                    }
                }
            }
        }
    }
}

fn spawn_run(id: String, cfg: RunConfig, base: Option<&Path>) -> anyhow::Result<RunSlot> {
    let mut cfg = cfg;
    if let Some(b) = base {
        cfg.resolve_paths(b);
    }
    let (engine, prep) = pipeline::build_engine(&cfg)?;
    let writer = match &cfg.output_dir {
        Some(root) => {
            let dir = root.join(&id);
            pipeline::persist_inputs(&dir, &cfg, &prep)?;
            Some((EventLogWriter::create(&dir.join(persist::EVENTS_FILE), engine.header())?, dir))
        }
        None => None,
    };
    let view = RunView {
        handle: RunHandle {
            run_id: id.clone(),
            status: RunStatus::Created,
            tick: engine.tick(),
            total_ticks: engine.total_ticks(),
            theta_bc: engine.theta_bc(),
            patches: Vec::new(),
            error: None,
        },
        metrics: engine.metrics().to_vec(),
        frames: engine.trajectory().to_vec(),
        records: engine.records().to_vec(),
        groups: prep.cohort.iter().map(|p| (p.id.clone(), p.group)).collect(),
        network: export(&prep.graph, &prep.cohort, &prep.kols),
    };
    let view = Arc::new(RwLock::new(view));
    let (stream, _) = broadcast::channel(256);
    let (tx, rx) = mpsc::channel();
    let worker = Worker {
        engine,
        view: view.clone(),
        stream: stream.clone(),
        writer,
        running: false,
    };
    std::thread::Builder::new().name(format!("engine-{id}")).spawn(move || worker.run(rx))?;
    Ok(RunSlot {
        view,
        commands: tx,
        stream,
    })
}

async fn create_run(State(state): State<AppState>, Json(body): Json<Value>) -> ApiResult {
    let cfg = RunConfig::from_json_value(body).map_err(|e| match e {
        ConfigError::Version { .. } | ConfigError::MissingVersion => ApiError::invalid("version_mismatch", e.to_string()),
        _ => ApiError::invalid("invalid_config", e.to_string()),
    })?;
    let id = format!("run-{:04}", state.next_id.fetch_add(1, Ordering::SeqCst) + 1);
    let base = state.base_dir.clone();
    let slot_id = id.clone();
    let slot = tokio::task::spawn_blocking(move || spawn_run(slot_id, cfg, base.as_deref()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::invalid("setup_failed", format!("{e:#}")))?;
    let handle = slot.handle();
    state.runs.write().expect("run table lock").insert(id.clone(), Arc::new(slot));
    tracing::info!(run = %id, ticks = handle.total_ticks, "run created");
    let mut resp = envelope(&id, handle.tick, &handle);
    *resp.status_mut() = StatusCode::CREATED;
    Ok(resp)
}

async fn list_runs(State(state): State<AppState>) -> Response {
    let handles: Vec<RunHandle> = state.runs.read().expect("run table lock").values().map(|s| s.handle()).collect();
    Json(json!({"run_id": null, "tick": null, "data": handles})).into_response()
}

async fn get_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let h = state.slot(&id)?.handle();
    Ok(envelope(&id, h.tick, &h))
}

#[derive(Debug, Deserialize)]
struct StepQuery {
    #[serde(default = "one")]
    n: u32,
}

fn one() -> u32 {
    1
}

async fn command_response(slot: &RunSlot, id: &str, out: Result<(), ApiError>) -> ApiResult {
    let h = slot.handle();
    out.map_err(|e| e.run(id, Some(h.tick)))?;
    Ok(envelope(id, h.tick, &h))
}

async fn step_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<StepQuery>) -> ApiResult {
    let slot = state.slot(&id)?;
    let out = slot.send(|reply| Command::Step { n: q.n, reply }).await;
    command_response(&slot, &id, out).await
}

async fn pause_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let slot = state.slot(&id)?;
    let out = slot.send(|reply| Command::Pause { reply }).await;
    command_response(&slot, &id, out).await
}

async fn resume_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let slot = state.slot(&id)?;
    let out = slot.send(|reply| Command::Resume { reply }).await;
    command_response(&slot, &id, out).await
}

async fn patch_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Json(body): Json<Value>) -> ApiResult {
    let slot = state.slot(&id)?;
    let tick = slot.handle().tick;
    let patch: ParamPatch =
        serde_json::from_value(body).map_err(|e| ApiError::invalid("invalid_patch", e.to_string()).run(&id, Some(tick)))?;
    let ack = slot
        .send(|reply| Command::Patch { patch, reply })
        .await
        .map_err(|e| e.run(&id, Some(tick)))?;
    Ok(envelope(&id, slot.handle().tick, &ack))
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    #[serde(default)]
    from: u32,
    limit: Option<usize>,
}

async fn get_metrics(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<MetricsQuery>) -> ApiResult {
    let slot = state.slot(&id)?;
    let v = slot.view.read().expect("view lock");
    let page: Vec<&TickMetrics> = v
        .metrics
        .iter()
        .filter(|m| m.tick >= q.from)
        .take(q.limit.unwrap_or(usize::MAX))
        .collect();
    Ok(envelope(&id, v.handle.tick, &page))
}

#[derive(Debug, Deserialize)]
struct HistogramQuery {
    tick: Option<u32>,
    topic: Option<String>,
}

#[derive(Debug, Serialize)]
struct HistogramBody {
    tick: u32,
    topic: String,
    bin_edges: [f64; 6],
    counts: [usize; 5],
}

async fn get_histogram(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<HistogramQuery>) -> ApiResult {
    let slot = state.slot(&id)?;
    let v = slot.view.read().expect("view lock");
    let now = v.handle.tick;
    let tick = q.tick.unwrap_or(now);
    let (Some(frame), Some(m)) = (v.frames.get(tick as usize), v.metrics.get(tick as usize)) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_tick", format!("tick {tick} has not run")).run(&id, Some(now)));
    };
    let topic = q.topic.unwrap_or_else(|| m.dominant_topic.clone());
    let values: Vec<f64> = frame.values().filter_map(|b| b.get(&topic).copied()).collect();
    if values.is_empty() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_topic", format!("no beliefs on `{topic}`")).run(&id, Some(now)));
    }
    let body = HistogramBody {
        tick,
        topic,
        bin_edges: BIN_EDGES,
        counts: histogram(&values),
    };
    Ok(envelope(&id, now, &body))
}

async fn get_network(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let slot = state.slot(&id)?;
    let v = slot.view.read().expect("view lock");
    Ok(envelope(&id, v.handle.tick, &v.network))
}

#[derive(Debug, Deserialize)]
struct CausalQuery {
    level: Option<String>,
}

async fn get_causal(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<CausalQuery>) -> ApiResult {
    let slot = state.slot(&id)?;
    let v = slot.view.read().expect("view lock");
    let raw = q.level.as_deref().unwrap_or("agent");
    let level = GraphLevel::parse(raw).ok_or_else(|| {
        ApiError::invalid("invalid_level", format!("level `{raw}` is not agent or group")).run(&id, Some(v.handle.tick))
    })?;
    Ok(envelope(&id, v.handle.tick, build_causal_graph(&v.records, level, &v.groups)))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u32,
    evidence: Option<EvidenceClass>,
}

async fn get_events(State(state): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<EventsQuery>) -> ApiResult {
    let slot = state.slot(&id)?;
    let v = slot.view.read().expect("view lock");
    let recs: Vec<&LogRecord> = v
        .records
        .iter()
        .filter(|r| r.tick >= q.from && q.evidence.is_none_or(|c| r.evidence == Some(c)))
        .collect();
    Ok(envelope(&id, v.handle.tick, &recs))
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    #[serde(default)]
    from: u32,
}

struct StreamState {
    id: String,
    view: Arc<RwLock<RunView>>,
    backlog: VecDeque<TickMetrics>,
    live: broadcast::Receiver<StreamMsg>,
    next_tick: u32,
    ended: Option<RunStatus>,
    done: bool,
}

fn metrics_event(id: &str, m: &TickMetrics) -> Event {
    Event::default()
        .event("metrics")
        .id(m.tick.to_string())
        .json_data(json!({"run_id": id, "tick": m.tick, "data": m}))
        .expect("metrics serialize")
}

fn end_event(id: &str, tick: u32, status: RunStatus) -> Event {
    Event::default()
        .event("end")
        .json_data(json!({"run_id": id, "tick": tick, "data": {"status": status}}))
        .expect("status serializes")
}

impl StreamState {
    fn refill(&mut self) {
        let v = self.view.read().expect("view lock");
        self.backlog.extend(v.metrics.iter().filter(|m| m.tick >= self.next_tick).cloned());
        if v.handle.status.is_terminal() {
            self.ended = Some(v.handle.status);
        }
    }

    async fn next_event(&mut self) -> Option<Event> {
        loop {
            if let Some(m) = self.backlog.pop_front() {
                if m.tick < self.next_tick {
                    continue;
                }
                self.next_tick = m.tick + 1;
                return Some(metrics_event(&self.id, &m));
            }
            if self.done {
                return None;
            }
            if let Some(status) = self.ended {
                self.done = true;
                return Some(end_event(&self.id, self.next_tick.saturating_sub(1), status));
            }
            match self.live.recv().await {
                Ok(StreamMsg::Tick(m)) => self.backlog.push_back(m),
                Ok(StreamMsg::End(status)) => self.ended = Some(status),
                // a slow client fell behind the channel; catch up from the history
                Err(broadcast::error::RecvError::Lagged(_)) => self.refill(),
                Err(broadcast::error::RecvError::Closed) => {
                    self.refill();
                    self.done = self.ended.is_none();
                }
            }
        }
    }
}

/// Server-sent events, one metric record per message: the history from
/// `from` first, then live ticks, then a closing `end` event.
async fn stream_run(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<StreamQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let slot = state.slot(&id)?;
    let st = {
        let v = slot.view.read().expect("view lock");
        StreamState {
            id: id.clone(),
            view: slot.view.clone(),
            backlog: v.metrics.iter().filter(|m| m.tick >= q.from).cloned().collect(),
            live: slot.stream.subscribe(),
            next_tick: q.from,
            ended: v.handle.status.is_terminal().then_some(v.handle.status),
            done: false,
        }
    };
    let events = stream::unfold(st, |mut st| async move { st.next_event().await.map(|e| (Ok(e), st)) });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/step", post(step_run))
        .route("/runs/{id}/pause", post(pause_run))
        .route("/runs/{id}/resume", post(resume_run))
        .route("/runs/{id}/patch", post(patch_run))
        .route("/runs/{id}/metrics", get(get_metrics))
        .route("/runs/{id}/histogram", get(get_histogram))
        .route("/runs/{id}/network", get(get_network))
        .route("/runs/{id}/causal", get(get_causal))
        .route("/runs/{id}/events", get(get_events))
        .route("/runs/{id}/stream", get(stream_run))
        .with_state(state)
}

pub async fn serve(addr: &str, base_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(AppState::new(base_dir)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
