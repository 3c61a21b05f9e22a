//! Synchronous tick loop: cognition, anchored belief update, reflection and
//! metrics, with every belief movement written to an event log.

pub mod causal;
pub mod log;
pub mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::cognition::{
    assemble_prompt, reason_with_retry, AgentResponse, EventContext, PromptInput, ReasoningOutcome, ReasoningProvider,
    ReasoningRequest, DEFAULT_PROMPT_BUDGET,
};
use crate::dynamics::{
    anchored_update, homophily, lambda_from_ocean, social_term_with, AgentDynamicsState, Belief, DynamicsConfig,
};
use crate::memory::{
    compute_anchor, reflect, Emotion, EpisodicEntry, HashedEmbedder, MemoryStore, ReceivedMessage, DEFAULT_EMBEDDING_DIM,
    DEFAULT_EPISODIC_CAPACITY, DEFAULT_RETRIEVAL_K, EMPTY_REFLECTION,
};

use crate::metrics::{compute_tick_metrics, AgentSnapshot, MetricsError, TickMetrics};
use crate::profiles::AgentProfile;
use crate::scenario::Scenario;
use crate::socialnet::TrustGraph;

use self::log::{
    topic_node, AgentHeader, EventLog, EvidenceClass, LogError, LogHeader, LogRecord, StatePayload, ENGINE_NODE,
    LOG_FORMAT, LOG_VERSION, OPERATOR, POLICY_ENGINE,
};

/// Below this magnitude a residual is treated as rounding noise and not logged.
const RESIDUAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub seed: u64,
    pub dynamics: DynamicsConfig,
    pub retrieval_k: usize,
    pub episodic_capacity: usize,
    pub embedding_dim: usize,
    pub prompt_budget: usize,
    /// Agents that must name the same emergent subtopic in one tick before it
    /// becomes a topic.
    pub topic_quorum: usize,
    /// Exposure contributions below this are folded into the residual record.
    pub delta_floor: f64,
    /// Full-state snapshot every `n` ticks; 0 disables.
    pub snapshot_stride: u32,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            seed: 0,
            dynamics: DynamicsConfig::default(),
            retrieval_k: DEFAULT_RETRIEVAL_K,
            episodic_capacity: DEFAULT_EPISODIC_CAPACITY,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            topic_quorum: 3,
            delta_floor: 1e-4,
            snapshot_stride: 0,
        }
    }
}

/// Operator calibration. `apply_at_tick` is assigned on submission.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPatch {
    #[serde(default)]
    pub apply_at_tick: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paused: Option<bool>,
    #[serde(default)]
    pub author: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("patch sets no parameter")]
    Empty,
    #[error("theta_bc {0} outside [0, 2]")]
    Theta(f64),
    #[error("rho_scale {0} must be a positive finite number")]
    RhoScale(f64),
    #[error("run already finished")]
    Finished,
}

impl ParamPatch {
    pub fn validate(&self) -> Result<(), PatchError> {
        if self.theta_bc.is_none() && self.rho_scale.is_none() && self.paused.is_none() {
            return Err(PatchError::Empty);
        }
        if let Some(t) = self.theta_bc {
            if !(t.is_finite() && (0.0..=2.0).contains(&t)) {
                return Err(PatchError::Theta(t));
            }
        }
        if let Some(s) = self.rho_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(PatchError::RhoScale(s));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine setup: {0}")]
    Setup(String),
    #[error("run finished at tick {0}")]
    Finished(u32),
    #[error("invariant breach at tick {tick} for {agent}: {detail}")]
    Invariant {
        tick: u32,
        agent: String,
        detail: String,
        snapshot: Box<EngineSnapshot>,
    },
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRuntime {
    pub profile: AgentProfile,
    pub state: AgentDynamicsState,
    pub memory: MemoryStore,
    pub emotion: Emotion,
    pub tags: BTreeSet<String>,
    pub subtopic_priors: BTreeMap<String, BTreeMap<String, f64>>,
    pub outbox: Option<String>,
}

impl AgentRuntime {
    fn snapshot(&self) -> AgentSnapshot {
        AgentSnapshot {
            beliefs: self.state.scores(),
            anchors: self.state.anchors.clone(),
            ocean: self.profile.ocean,
            rho: self.state.rho,
            distinct_rationale_tags: self.tags.len(),
            reflections: self.memory.reflections.len(),
        }
    }
}

/// Full engine state at a tick boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub tick: u32,
    pub theta_bc: f64,
    pub topics: Vec<String>,
    pub pending_patches: Vec<ParamPatch>,
    pub agents: Vec<AgentRuntime>,
}

/// Beliefs of every agent at one tick, keyed by agent id.
pub type BeliefFrame = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone)]
pub struct TickReport {
    pub metrics: TickMetrics,
    pub records: Vec<LogRecord>,
    pub snapshot: Option<EngineSnapshot>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trajectory: Vec<BeliefFrame>,
    pub metrics: Vec<TickMetrics>,
    pub log: EventLog,
}

struct TopicUpdate {
    topic: String,
    old: f64,
    cognitive: f64,
    new: f64,
    anchor: f64,
    /// `(neighbor index, contribution, gate, share)`
    exposures: Vec<(usize, f64, f64, f64)>,
    anchor_pull: f64,
}

pub struct Engine {
    settings: EngineSettings,
    dynamics: DynamicsConfig,
    scenario: Scenario,
    graph: TrustGraph,
    /// Row-normalized trust per agent index, sorted by neighbor id.
    rows: Vec<Vec<(usize, f64)>>,
    agents: Vec<AgentRuntime>,
    topics: Vec<String>,
    provider: Arc<dyn ReasoningProvider>,
    embedder: HashedEmbedder,
    tick: u32,
    paused: bool,
    pending: Vec<ParamPatch>,
    header: LogHeader,
    records: Vec<LogRecord>,
    metrics: Vec<TickMetrics>,
    trajectory: Vec<BeliefFrame>,
}

fn initial_beliefs(profile: &AgentProfile, topics: &[String]) -> BTreeMap<String, f64> {
    let fallback = profile.mean_belief().unwrap_or(0.0);
    topics
        .iter()
        .map(|t| (t.clone(), profile.initial_beliefs.get(t).copied().unwrap_or(fallback)))
        .collect()
}

impl Engine {
    pub fn new(
        mut profiles: Vec<AgentProfile>,
        graph: TrustGraph,
        scenario: Scenario,
        settings: EngineSettings,
        provider: Arc<dyn ReasoningProvider>,
    ) -> Result<Engine, EngineError> {
        let setup = |m: String| EngineError::Setup(m);
        scenario.validate().map_err(|e| setup(e.to_string()))?;
        let mut dynamics = settings.dynamics.clone();
        if let Some(theta) = scenario.theta_bc {
            dynamics.theta_bc = theta;
        }
        dynamics.validate().map_err(|e| setup(e.to_string()))?;
        if profiles.is_empty() {
            return Err(setup("no agents".into()));
        }
        if settings.embedding_dim == 0 || settings.episodic_capacity == 0 {
            return Err(setup("embedding_dim and episodic_capacity must be positive".into()));
        }
        if !(settings.delta_floor >= 0.0 && settings.delta_floor.is_finite()) {
            return Err(setup(format!("delta_floor {}", settings.delta_floor)));
        }
        profiles.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = profiles.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(setup(format!("duplicate agent id {}", w[0].id)));
        }
        for p in &profiles {
            p.validate().map_err(setup)?;
        }
        graph.validate().map_err(setup)?;

        let index: BTreeMap<&str, usize> = profiles.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); profiles.len()];
        for e in &graph.edges {
            let (Some(&s), Some(&t)) = (index.get(e.source.as_str()), index.get(e.target.as_str())) else {
                return Err(setup(format!("edge {} -> {} references an unknown agent", e.source, e.target)));
            };
            rows[s].push((t, e.weight));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            if total > 0.0 {
                row.iter_mut().for_each(|(_, w)| *w /= total);
            }
        }

        let topics = scenario.key_topics.clone();
        let embedder = HashedEmbedder {
            dim: settings.embedding_dim,
            ..HashedEmbedder::default()
        };
        let mut agents = Vec::with_capacity(profiles.len());
        for p in profiles {
            let rho = dynamics.rho_for(&p.ocean).map_err(|e| setup(e.to_string()))?;
            let lambda = lambda_from_ocean(&p.ocean, &dynamics.lambda_policy);
            let beliefs = initial_beliefs(&p, &topics);
            let mut memory = MemoryStore::new(settings.episodic_capacity, settings.embedding_dim);
            memory.semantic.insert(&embedder, p.bio.clone(), "profile", 0.0, &p.rationale_cluster, "profile", 1.0);
            for (t, b) in &beliefs {
                memory.semantic.insert(
                    &embedder,
                    format!("my initial view on {t}"),
                    t.clone(),
                    *b,
                    &p.rationale_cluster,
                    "profile",
                    1.0,
                );
            }
            agents.push(AgentRuntime {
                state: AgentDynamicsState::new(&beliefs, rho, lambda),
                profile: p,
                memory,
                emotion: Emotion::Neutral,
                tags: BTreeSet::new(),
                subtopic_priors: BTreeMap::new(),
                outbox: None,
            });
        }

        let mut header = LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            seed: settings.seed,
            provider: provider.name().to_string(),
            scenario: scenario.clone(),
            dynamics: dynamics.clone(),
            agents: agents
                .iter()
                .map(|a| AgentHeader {
                    id: a.profile.id.clone(),
                    group: a.profile.group,
                    ocean: a.profile.ocean,
                    rho: a.state.rho,
                    lambda: a.state.lambda,
                    beliefs: a.state.scores(),
                    anchors: a.state.anchors.clone(),
                })
                .collect(),
            checksum: String::new(),
        };
        header.seal();

        let mut engine = Engine {
            settings,
            dynamics,
            scenario,
            graph,
            rows,
            agents,
            topics,
            provider,
            embedder,
            tick: 0,
            paused: false,
            pending: Vec::new(),
            header,
            records: Vec::new(),
            metrics: Vec::new(),
            trajectory: Vec::new(),
        };
        let m0 = engine.compute_metrics(0)?;
        engine.metrics.push(m0);
        engine.trajectory.push(engine.frame());
        Ok(engine)
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn total_ticks(&self) -> u32 {
        self.scenario.ticks
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.scenario.ticks
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn set_paused(&mut self, paused: bool) {
        self.paused = paused;
    }

    pub fn theta_bc(&self) -> f64 {
        self.dynamics.theta_bc
    }

    pub fn dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn graph(&self) -> &TrustGraph {
        &self.graph
    }

    pub fn agents(&self) -> &[AgentRuntime] {
        &self.agents
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn metrics(&self) -> &[TickMetrics] {
        &self.metrics
    }

    pub fn trajectory(&self) -> &[BeliefFrame] {
        &self.trajectory
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn pending_patches(&self) -> &[ParamPatch] {
        &self.pending
    }

    pub fn event_log(&self) -> EventLog {
        EventLog {
            header: self.header.clone(),
            records: self.records.clone(),
        }
    }

    fn frame(&self) -> BeliefFrame {
        self.agents.iter().map(|a| (a.profile.id.clone(), a.state.scores())).collect()
    }

    fn compute_metrics(&self, tick: u32) -> Result<TickMetrics, MetricsError> {
        let snaps: Vec<AgentSnapshot> = self.agents.iter().map(AgentRuntime::snapshot).collect();
        compute_tick_metrics(tick, &snaps)
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            tick: self.tick,
            theta_bc: self.dynamics.theta_bc,
            topics: self.topics.clone(),
            pending_patches: self.pending.clone(),
            agents: self.agents.clone(),
        }
    }

    /// Queues a patch for the next tick boundary and returns it with its
    /// apply tick filled in. A `paused` flag also takes effect immediately.
    pub fn submit_patch(&mut self, mut patch: ParamPatch) -> Result<ParamPatch, PatchError> {
        patch.validate()?;
        if self.is_finished() {
            return Err(PatchError::Finished);
        }
        patch.apply_at_tick = self.tick + 1;
        if let Some(p) = patch.paused {
            self.paused = p;
        }
        self.pending.push(patch.clone());
        Ok(patch)
    }

    fn apply_patches(&mut self, t: u32) {
        let (due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|p| p.apply_at_tick <= t);
        self.pending = rest;
        for p in due {
            let mut changes = serde_json::Map::new();
            if let Some(theta) = p.theta_bc {
                changes.insert("theta_bc".into(), json!({"from": self.dynamics.theta_bc, "to": theta}));
                self.dynamics.theta_bc = theta;
            }
            if let Some(scale) = p.rho_scale {
                let (lo, hi) = self.dynamics.rho_domain();
                for a in &mut self.agents {
                    a.state.rho = (a.state.rho * scale).clamp(lo, hi);
                }
                changes.insert("rho_scale".into(), json!(scale));
            }
            if let Some(paused) = p.paused {
                changes.insert("paused".into(), json!(paused));
            }
            tracing::info!(tick = t, author = %p.author, "applying calibration patch");
            self.records.push(LogRecord::causal(
                t,
                EvidenceClass::CalibrationPatch,
                OPERATOR,
                ENGINE_NODE,
                None,
                0.0,
                json!({"author": p.author, "submitted_for": p.apply_at_tick, "changes": changes}),
            ));
        }
    }

    /// Runs until the scenario ends or the engine is paused.
    pub fn run_to_end(&mut self) -> Result<(), EngineError> {
        while !self.is_finished() && !self.paused {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_result(self) -> RunResult {
        RunResult {
            log: EventLog {
                header: self.header,
                records: self.records,
            },
            trajectory: self.trajectory,
            metrics: self.metrics,
        }
    }

    /// Advances one tick regardless of the pause flag.
    pub fn step(&mut self) -> Result<TickReport, EngineError> {
        if self.is_finished() {
            return Err(EngineError::Finished(self.tick));
        }
        let t = self.tick + 1;
        let first_record = self.records.len();

        self.apply_patches(t);

        let snapshot: Vec<BTreeMap<String, f64>> = self.agents.iter().map(|a| a.state.scores()).collect();

        let events: Vec<EventContext> = self
            .scenario
            .events_at(t)
            .enumerate()
            .map(|(i, e)| EventContext {
                id: format!("evt-{t}-{i}"),
                topic: Some(e.topic.clone()),
                description: e.description.clone(),
                shock: e.shock_magnitude,
            })
            .collect();
        for e in &events {
            let topic = e.topic.as_deref().unwrap_or_default();
            self.records.push(LogRecord::causal(
                t,
                EvidenceClass::PolicyShock,
                POLICY_ENGINE,
                topic_node(topic),
                Some(topic),
                e.shock,
                json!({"event": e.id, "description": e.description}),
            ));
        }

        // Messages posted last tick by the agents each agent trusts.
        let inboxes: Vec<Vec<ReceivedMessage>> = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .filter_map(|&(j, _)| {
                        let a = &self.agents[j];
                        a.outbox.as_ref().map(|text| ReceivedMessage {
                            sender: a.profile.id.clone(),
                            sender_group: a.profile.group.as_str().to_string(),
                            text: text.clone(),
                        })
                    })
                    .collect()
            })
            .collect();
        for (agent, inbox) in self.agents.iter_mut().zip(&inboxes) {
            for e in &events {
                agent.memory.episodic.append(EpisodicEntry {
                    tick: t,
                    sender: POLICY_ENGINE.into(),
                    text: e.description.clone(),
                });
            }
            for m in inbox {
                agent.memory.episodic.append(EpisodicEntry {
                    tick: t,
                    sender: m.sender.clone(),
                    text: m.text.clone(),
                });
            }
        }

        let outcomes: Vec<ReasoningOutcome> = self
            .agents
            .par_iter()
            .zip(inboxes.par_iter())
            .zip(snapshot.par_iter())
            .map(|((agent, inbox), beliefs)| self.reason(agent, inbox, beliefs, &events, t))
            .collect();

        let cognitive: Vec<BTreeMap<String, f64>> = snapshot
            .iter()
            .zip(&outcomes)
            .map(|(beliefs, o)| {
                beliefs
                    .iter()
                    .map(|(k, &b)| (k.clone(), o.response.belief_state.get(k).map_or(b, |r| r.score)))
                    .collect()
            })
            .collect();

        let updates: Vec<Vec<TopicUpdate>> = (0..self.agents.len())
            .into_par_iter()
            .map(|i| self.update_agent(i, &snapshot, &cognitive[i]))
            .collect();

        self.log_belief_movement(t, &updates);
        for (agent, ups) in self.agents.iter_mut().zip(&updates) {
            for u in ups {
                if let Some(b) = agent.state.beliefs.get_mut(&u.topic) {
                    b.set_score(u.new);
                }
                agent.state.anchors.insert(u.topic.clone(), u.anchor);
            }
        }

        self.expand_topics(t, &outcomes);

        let floor = self.settings.delta_floor;
        let mut new_tags: Vec<Vec<String>> = Vec::with_capacity(self.agents.len());
        for ((agent, ups), (outcome, inbox)) in self.agents.iter_mut().zip(&updates).zip(outcomes.into_iter().zip(&inboxes)) {
            let deltas: BTreeMap<String, f64> = ups
                .iter()
                .map(|u| (u.topic.clone(), u.new - u.old))
                .filter(|(_, d)| d.abs() >= floor.max(f64::MIN_POSITIVE))
                .collect();
            let entry = reflect(t, inbox, &deltas);
            if entry.summary != EMPTY_REFLECTION {
                let beliefs = agent.state.scores();
                agent.memory.consolidate(&self.embedder, entry, &beliefs);
            }
            let AgentResponse {
                message,
                active_subtopics,
                belief_composition,
                emotion,
                ..
            } = outcome.response;
            if let Some(e) = emotion {
                agent.emotion = e;
            }
            let mut fresh = Vec::new();
            for tag in active_subtopics {
                if agent.tags.insert(tag.clone()) {
                    fresh.push(tag);
                }
            }
            new_tags.push(fresh);
            agent.subtopic_priors.extend(belief_composition);
            agent.outbox = (!message.trim().is_empty()).then_some(message);
        }

        let (lo, hi) = self.dynamics.rho_domain();
        for (agent, tags) in self.agents.iter().zip(new_tags) {
            if !agent.state.in_domain(lo, hi) {
                return Err(EngineError::Invariant {
                    tick: t,
                    agent: agent.profile.id.clone(),
                    detail: format!("state left its domain (rho {}, lambda {})", agent.state.rho, agent.state.lambda),
                    snapshot: Box::new(self.snapshot()),
                });
            }
            self.records.push(LogRecord::state(
                t,
                &agent.profile.id,
                &StatePayload {
                    beliefs: agent.state.scores(),
                    anchors: agent.state.anchors.clone(),
                    rho: agent.state.rho,
                    lambda: agent.state.lambda,
                    emotion: agent.emotion,
                    new_tags: tags,
                    reflections: agent.memory.reflections.len(),
                },
            ));
        }

        self.tick = t;
        let metrics = self.compute_metrics(t)?;
        self.metrics.push(metrics.clone());
        self.trajectory.push(self.frame());
        let stride = self.settings.snapshot_stride;
        let snapshot = (stride > 0 && t.is_multiple_of(stride)).then(|| self.snapshot());
        Ok(TickReport {
            metrics,
            records: self.records[first_record..].to_vec(),
            snapshot,
        })
    }

    fn reason(
        &self,
        agent: &AgentRuntime,
        inbox: &[ReceivedMessage],
        beliefs: &BTreeMap<String, f64>,
        events: &[EventContext],
        t: u32,
    ) -> ReasoningOutcome {
        let mut query: Vec<&str> = events.iter().map(|e| e.description.as_str()).collect();
        query.extend(inbox.iter().map(|m| m.text.as_str()));
        let query = if query.is_empty() {
            self.topics.join(" ")
        } else {
            query.join(" ")
        };
        let mut hits = agent.memory.semantic.retrieve(&self.embedder, &query, self.settings.retrieval_k);
        hits.sort_by_key(|h| h.index);
        let memories: Vec<String> = hits.iter().map(|h| h.entry.content.clone()).collect();
        let prompt = assemble_prompt(
            &PromptInput {
                profile: &agent.profile,
                tick: t,
                beliefs,
                subtopic_priors: &agent.subtopic_priors,
                memories: &memories,
                events,
                emotion: agent.emotion,
            },
            self.settings.prompt_budget,
        );
        reason_with_retry(
            self.provider.as_ref(),
            &ReasoningRequest {
                prompt: &prompt,
                profile: &agent.profile,
                tick: t,
                beliefs,
                events,
                memories: &memories,
                emotion: agent.emotion,
                seed: self.settings.seed,
            },
        )
    }

    /// Social term from the tick-start snapshot, gated against the agent's own
    /// snapshot belief, then the anchored update from the post-cognition belief.
    fn update_agent(&self, i: usize, snapshot: &[BTreeMap<String, f64>], cognitive: &BTreeMap<String, f64>) -> Vec<TopicUpdate> {
        let agent = &self.agents[i];
        let cfg = &self.dynamics;
        let (rho, lambda) = (agent.state.rho, agent.state.lambda);
        let row = &self.rows[i];
        cognitive
            .iter()
            .map(|(topic, &b_cog)| {
                let old = snapshot[i][topic];
                let pairs: Vec<(f64, f64)> = row
                    .iter()
                    .map(|&(j, w)| (w, snapshot[j].get(topic).copied().unwrap_or(old)))
                    .collect();
                let term = social_term_with(b_cog, &pairs, cfg.epsilon, |_, b| {
                    if cfg.homophily_bypass {
                        1.0
                    } else {
                        homophily(old, b, cfg.theta_bc)
                    }
                });
                let m_prev = agent.state.anchors.get(topic).copied().unwrap_or(old);
                let anchor = compute_anchor(
                    m_prev,
                    b_cog,
                    topic,
                    &agent.memory.semantic,
                    &self.embedder,
                    cfg,
                    self.settings.retrieval_k,
                );
                let new = anchored_update(b_cog, term.value, anchor, lambda, rho);
                let exposures = term
                    .contributions
                    .iter()
                    .map(|c| {
                        let delta = (1.0 - rho) * lambda * c.share * (pairs[c.index].1 - b_cog);
                        (row[c.index].0, delta, c.gate, c.share)
                    })
                    .collect();
                TopicUpdate {
                    topic: topic.clone(),
                    old,
                    cognitive: b_cog,
                    new,
                    anchor,
                    exposures,
                    anchor_pull: rho * (anchor - b_cog),
                }
            })
            .collect()
    }

    fn log_belief_movement(&mut self, t: u32, updates: &[Vec<TopicUpdate>]) {
        let floor = self.settings.delta_floor;
        for (agent, ups) in self.agents.iter().zip(updates) {
            let id = agent.profile.id.as_str();
            for u in ups {
                let topic = Some(u.topic.as_str());
                let mut logged = 0.0;
                let inner = u.cognitive - u.old;
                if inner != 0.0 {
                    logged += inner;
                    self.records.push(LogRecord::causal(
                        t,
                        EvidenceClass::InnerBeliefUpdate,
                        topic_node(&u.topic),
                        id,
                        topic,
                        inner,
                        json!({"channel": "cognition", "from": u.old, "to": u.cognitive}),
                    ));
                }
                for &(j, delta, gate, share) in &u.exposures {
                    if delta.abs() > floor {
                        logged += delta;
                        self.records.push(LogRecord::causal(
                            t,
                            EvidenceClass::ExposureEffect,
                            self.agents[j].profile.id.as_str(),
                            id,
                            topic,
                            delta,
                            json!({"gate": gate, "share": share}),
                        ));
                    }
                }
                if u.anchor_pull.abs() > floor {
                    logged += u.anchor_pull;
                    self.records.push(LogRecord::causal(
                        t,
                        EvidenceClass::InnerBeliefUpdate,
                        id,
                        id,
                        topic,
                        u.anchor_pull,
                        json!({"channel": "anchor", "anchor": u.anchor, "rho": agent.state.rho}),
                    ));
                }
                let residual = (u.new - u.old) - logged;
                if residual.abs() > RESIDUAL_EPS {
                    self.records.push(LogRecord::causal(
                        t,
                        EvidenceClass::ExposureEffect,
                        id,
                        id,
                        topic,
                        residual,
                        json!({"channel": "residual"}),
                    ));
                }
            }
        }
    }

    fn parent_topic<'a>(&'a self, sub: &'a str) -> &'a str {
        match sub.rsplit_once("::") {
            Some((parent, _)) if self.topics.iter().any(|t| t == parent) => parent,
            _ => self.topics.first().map(String::as_str).unwrap_or(sub),
        }
    }

    fn expand_topics(&mut self, t: u32, outcomes: &[ReasoningOutcome]) {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for o in outcomes {
            let distinct: BTreeSet<&str> = o.response.emergent_subtopics.iter().map(String::as_str).collect();
            for s in distinct {
                *counts.entry(s).or_default() += 1;
            }
        }
        let quorum = self.settings.topic_quorum.max(1);
        let promoted: BTreeSet<String> = counts
            .iter()
            .filter(|(s, &n)| n >= quorum && !self.topics.iter().any(|t| t == *s))
            .map(|(s, _)| s.to_string())
            .collect();
        let mut records = Vec::new();
        for (agent, o) in self.agents.iter().zip(outcomes) {
            let distinct: BTreeSet<&str> = o.response.emergent_subtopics.iter().map(String::as_str).collect();
            for sub in distinct {
                let parent = self.parent_topic(sub);
                records.push(LogRecord::causal(
                    t,
                    EvidenceClass::TopicExpansion,
                    agent.profile.id.as_str(),
                    topic_node(sub),
                    Some(parent),
                    0.0,
                    json!({"subtopic": sub, "parent": parent, "promoted": promoted.contains(sub)}),
                ));
            }
        }
        self.records.extend(records);
        for sub in promoted {
            let parent = self.parent_topic(&sub).to_string();
            for agent in &mut self.agents {
                let b = agent.state.score(&parent).unwrap_or(0.0);
                let m = agent.state.anchors.get(&parent).copied().unwrap_or(b);
                agent.state.beliefs.insert(sub.clone(), Belief::new(sub.clone(), b));
                agent.state.anchors.insert(sub.clone(), m);
            }
            tracing::debug!(tick = t, subtopic = %sub, parent = %parent, "promoted emergent subtopic");
            self.topics.push(sub);
        }
    }
}

/// Builds an engine and runs it to completion.
pub fn run(
    profiles: Vec<AgentProfile>,
    graph: TrustGraph,
    scenario: Scenario,
    settings: EngineSettings,
    provider: Arc<dyn ReasoningProvider>,
) -> Result<RunResult, EngineError> {
    let mut engine = Engine::new(profiles, graph, scenario, settings, provider)?;
    while !engine.is_finished() {
        engine.step()?;
    }
    Ok(engine.into_result())
}
