//! Provenance graph aggregated from causal log records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::log::{EvidenceClass, LogRecord, RecordKind, POLICY_ENGINE};
use crate::profiles::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphLevel {
    Agent,
    Group,
}

impl GraphLevel {
    pub fn parse(s: &str) -> Option<GraphLevel> {
        match s {
            "agent" => Some(GraphLevel::Agent),
            "group" => Some(GraphLevel::Group),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Agent,
    Group,
    Topic,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalNode {
    pub id: String,
    pub kind: NodeKind,
    /// Summed |delta| over edges leaving this node.
    pub out_magnitude: f64,
    pub in_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEdge {
    pub source: String,
    pub target: String,
    pub signed_delta: f64,
    pub magnitude: f64,
    pub count: usize,
    pub classes: BTreeMap<EvidenceClass, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub level: GraphLevel,
    pub nodes: Vec<CausalNode>,
    pub edges: Vec<CausalEdge>,
}

fn node_kind(id: &str, level: GraphLevel) -> NodeKind {
    if id == POLICY_ENGINE {
        NodeKind::Policy
    } else if id.starts_with("topic:") {
        NodeKind::Topic
    } else if level == GraphLevel::Group {
        NodeKind::Group
    } else {
        NodeKind::Agent
    }
}

fn collapse(id: &str, level: GraphLevel, groups: &BTreeMap<String, Group>) -> String {
    match (level, groups.get(id)) {
        (GraphLevel::Group, Some(g)) => format!("group:{}", g.as_str()),
        _ => id.to_string(),
    }
}

/// Aggregates causal records by `(source, target)`. Calibration patches and
/// state records are not belief provenance and are skipped. At group level
/// agent ids found in `groups` collapse into `group:<name>` nodes.
pub fn build_causal_graph<'a, I>(records: I, level: GraphLevel, groups: &BTreeMap<String, Group>) -> CausalGraph
where
    I: IntoIterator<Item = &'a LogRecord>,
{
    let mut edges: BTreeMap<(String, String), CausalEdge> = BTreeMap::new();
    for r in records {
        if r.kind != RecordKind::Causal || r.evidence == Some(EvidenceClass::CalibrationPatch) {
            continue;
        }
        let source = collapse(&r.source, level, groups);
        let target = collapse(&r.target, level, groups);
        let e = edges.entry((source.clone(), target.clone())).or_insert_with(|| CausalEdge {
            source,
            target,
            signed_delta: 0.0,
            magnitude: 0.0,
            count: 0,
            classes: BTreeMap::new(),
        });
        e.signed_delta += r.delta;
        e.magnitude += r.delta.abs();
        e.count += 1;
        if let Some(c) = r.evidence {
            *e.classes.entry(c).or_default() += 1;
        }
    }
    let mut nodes: BTreeMap<String, CausalNode> = BTreeMap::new();
    for e in edges.values() {
        for id in [&e.source, &e.target] {
            nodes.entry(id.clone()).or_insert_with(|| CausalNode {
                id: id.clone(),
                kind: node_kind(id, level),
                out_magnitude: 0.0,
                in_magnitude: 0.0,
            });
        }
        nodes.get_mut(&e.source).expect("inserted").out_magnitude += e.magnitude;
        nodes.get_mut(&e.target).expect("inserted").in_magnitude += e.magnitude;
    }
    CausalGraph {
        level,
        nodes: nodes.into_values().collect(),
        edges: edges.into_values().collect(),
    }
}

impl CausalGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge(&self, source: &str, target: &str) -> Option<&CausalEdge> {
        self.edges.iter().find(|e| e.source == source && e.target == target)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &CausalNode> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// Nodes ranked by outgoing cumulative |delta|, largest first.
    pub fn dominant_sources(&self, n: usize) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self
            .nodes
            .iter()
            .filter(|x| x.out_magnitude > 0.0)
            .map(|x| (x.id.as_str(), x.out_magnitude))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        v.truncate(n);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(source: &str, target: &str, delta: f64, class: EvidenceClass) -> LogRecord {
        LogRecord::causal(1, class, source, target, Some("t"), delta, json!({}))
    }

    #[test]
    fn empty_log_gives_empty_graph() {
        let g = build_causal_graph(&[], GraphLevel::Agent, &BTreeMap::new());
        assert!(g.is_empty());
        assert!(g.nodes.is_empty());
    }

    #[test]
    fn parallel_events_merge() {
        let recs = [
            rec("a", "b", 0.2, EvidenceClass::ExposureEffect),
            rec("a", "b", -0.5, EvidenceClass::ExposureEffect),
        ];
        let g = build_causal_graph(&recs, GraphLevel::Agent, &BTreeMap::new());
        assert_eq!(g.edges.len(), 1);
        let e = g.edge("a", "b").unwrap();
        assert!((e.signed_delta + 0.3).abs() < 1e-12);
        assert!((e.magnitude - 0.7).abs() < 1e-12);
        assert_eq!(e.count, 2);
    }

    #[test]
    fn group_level_collapses_agents() {
        let groups: BTreeMap<String, Group> = [
            ("a1", Group::Citizen),
            ("a2", Group::Government),
            ("a3", Group::Business),
            ("a4", Group::Education),
            ("a5", Group::Citizen),
        ]
        .into_iter()
        .map(|(k, g)| (k.to_string(), g))
        .collect();
        let recs = [
            rec(POLICY_ENGINE, "topic:t", -0.8, EvidenceClass::PolicyShock),
            rec("topic:t", "a1", -0.1, EvidenceClass::InnerBeliefUpdate),
            rec("a1", "a2", 0.05, EvidenceClass::ExposureEffect),
            rec("a3", "a4", 0.02, EvidenceClass::ExposureEffect),
            rec("a5", "a2", 0.01, EvidenceClass::ExposureEffect),
            rec("operator", "engine", 0.0, EvidenceClass::CalibrationPatch),
        ];
        let g = build_causal_graph(&recs, GraphLevel::Group, &groups);
        assert_eq!(g.nodes_of(NodeKind::Group).count(), 4);
        assert_eq!(g.nodes_of(NodeKind::Policy).count(), 1);
        assert!(g.nodes.iter().all(|n| n.id != "operator"));
        let e = g.edge("group:Citizen", "group:Government").unwrap();
        assert_eq!(e.count, 2);
        assert!((e.signed_delta - 0.06).abs() < 1e-12);
        assert_eq!(g.dominant_sources(1)[0].0, POLICY_ENGINE);
    }
}
