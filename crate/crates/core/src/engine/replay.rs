//! Rebuilds trajectories and metrics from a log without any provider.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::log::{EventLog, EvidenceClass, LogRecord, RecordKind};
use super::BeliefFrame;
use crate::metrics::{compute_tick_metrics, AgentSnapshot, MetricsError, TickMetrics};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("state record for unknown agent {agent} at tick {tick}")]
    UnknownAgent { tick: u32, agent: String },
    #[error("state record {index} has a malformed payload")]
    Payload { index: usize },
    #[error("tick {tick} is missing state for {missing} agent(s)")]
    Incomplete { tick: u32, missing: usize },
    #[error("records out of tick order at record {index}")]
    Order { index: usize },
    #[error("tick {tick}, {agent}/{topic}: logged deltas sum to {logged}, state moved {actual}")]
    Causal {
        tick: u32,
        agent: String,
        topic: String,
        logged: f64,
        actual: f64,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub trajectory: Vec<BeliefFrame>,
    pub metrics: Vec<TickMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    /// Check that causal deltas per (tick, agent, topic) sum to the logged
    /// belief change within `tolerance`.
    pub verify_causal: bool,
    pub tolerance: f64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            verify_causal: true,
            tolerance: 1e-9,
        }
    }
}

struct Replayed {
    snap: AgentSnapshot,
    tags: BTreeSet<String>,
}

fn belief_sums<'a>(records: &[&'a LogRecord]) -> BTreeMap<(&'a str, &'a str), f64> {
    let mut sums = BTreeMap::new();
    for r in records {
        if !matches!(
            r.evidence,
            Some(EvidenceClass::InnerBeliefUpdate) | Some(EvidenceClass::ExposureEffect)
        ) {
            continue;
        }
        if let Some(topic) = r.topic.as_deref() {
            *sums.entry((r.target.as_str(), topic)).or_insert(0.0) += r.delta;
        }
    }
    sums
}

pub fn replay(log: &EventLog, opts: ReplayOptions) -> Result<Replay, ReplayError> {
    let mut agents: BTreeMap<String, Replayed> = log
        .header
        .agents
        .iter()
        .map(|a| {
            (
                a.id.clone(),
                Replayed {
                    snap: AgentSnapshot {
                        beliefs: a.beliefs.clone(),
                        anchors: a.anchors.clone(),
                        ocean: a.ocean,
                        rho: a.rho,
                        distinct_rationale_tags: 0,
                        reflections: 0,
                    },
                    tags: BTreeSet::new(),
                },
            )
        })
        .collect();
    let frame = |agents: &BTreeMap<String, Replayed>| -> BeliefFrame {
        agents.iter().map(|(k, a)| (k.clone(), a.snap.beliefs.clone())).collect()
    };
    let metrics_of = |tick: u32, agents: &BTreeMap<String, Replayed>| {
        let snaps: Vec<AgentSnapshot> = agents.values().map(|a| a.snap.clone()).collect();
        compute_tick_metrics(tick, &snaps)
    };

    let mut out = Replay {
        trajectory: vec![frame(&agents)],
        metrics: vec![metrics_of(0, &agents)?],
    };

    let mut by_tick: BTreeMap<u32, Vec<(usize, &LogRecord)>> = BTreeMap::new();
    let mut last = 0;
    for (index, r) in log.records.iter().enumerate() {
        if r.tick < last {
            return Err(ReplayError::Order { index });
        }
        last = r.tick;
        by_tick.entry(r.tick).or_default().push((index, r));
    }

    for (&tick, records) in &by_tick {
        let causal: Vec<&LogRecord> = records.iter().map(|(_, r)| *r).filter(|r| r.kind == RecordKind::Causal).collect();
        let sums = opts.verify_causal.then(|| belief_sums(&causal));
        let mut seen = 0;
        for &(index, r) in records.iter().filter(|(_, r)| r.kind == RecordKind::State) {
            let state = r.state_payload().ok_or(ReplayError::Payload { index })?;
            let agent = agents.get_mut(&r.source).ok_or_else(|| ReplayError::UnknownAgent {
                tick,
                agent: r.source.clone(),
            })?;
            if let Some(sums) = &sums {
                for (topic, before) in &agent.snap.beliefs {
                    let Some(after) = state.beliefs.get(topic) else { continue };
                    let actual = after - before;
                    let logged = sums.get(&(r.source.as_str(), topic.as_str())).copied().unwrap_or(0.0);
                    if (actual - logged).abs() > opts.tolerance {
                        return Err(ReplayError::Causal {
                            tick,
                            agent: r.source.clone(),
                            topic: topic.clone(),
                            logged,
                            actual,
                        });
                    }
                }
            }
            agent.tags.extend(state.new_tags);
            agent.snap.beliefs = state.beliefs;
            agent.snap.anchors = state.anchors;
            agent.snap.rho = state.rho;
            agent.snap.distinct_rationale_tags = agent.tags.len();
            agent.snap.reflections = state.reflections;
            seen += 1;
        }
        if seen == 0 {
            // Trailing records (a patch logged for a tick that never ran).
            continue;
        }
        if seen != agents.len() {
            return Err(ReplayError::Incomplete {
                tick,
                missing: agents.len() - seen,
            });
        }
        out.trajectory.push(frame(&agents));
        out.metrics.push(metrics_of(tick, &agents)?);
    }
    Ok(out)
}
