#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use anchorsim_core::cognition::{MockReasoner, ReasoningProvider};
use anchorsim_core::dynamics::OceanVector;
use anchorsim_core::profiles::{AgentProfile, Group};
use anchorsim_core::scenario::{PolicyEvent, Scenario};
use anchorsim_core::socialnet::{Relation, TrustEdge, TrustGraph};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mock() -> Arc<dyn ReasoningProvider> {
    Arc::new(MockReasoner)
}

pub fn agent(id: &str, group: Group, ocean: OceanVector, beliefs: &[(&str, f64)]) -> AgentProfile {
    AgentProfile {
        id: id.into(),
        name: id.into(),
        bio: format!("{id} follows local news"),
        group,
        role: "resident".into(),
        demographics: BTreeMap::new(),
        interests: ["housing".to_string()].into_iter().collect(),
        ocean,
        initial_beliefs: beliefs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        rationale_cluster: "cost_of_living".into(),
        rhetorical_style: "plain".into(),
        metadata: BTreeMap::new(),
    }
}

pub fn random_ocean(r: &mut ChaCha8Rng) -> OceanVector {
    OceanVector::from_array(std::array::from_fn(|_| r.random_range(0.1..0.9)))
}

pub fn edge(s: &str, t: &str, w: f64) -> TrustEdge {
    TrustEdge {
        source: s.into(),
        target: t.into(),
        relation: Relation::Friend,
        weight: w,
    }
}

pub fn one_topic(ticks: u32, theta: Option<f64>) -> Scenario {
    Scenario {
        title: "single issue".into(),
        key_topics: vec!["issue".into()],
        ticks,
        policy_events: Vec::new(),
        theta_bc: theta,
        metadata: BTreeMap::new(),
    }
}

pub fn shock(tick: u32, topic: &str, magnitude: f64) -> PolicyEvent {
    PolicyEvent {
        tick,
        topic: topic.into(),
        description: format!("announcement on {topic}"),
        shock_magnitude: magnitude,
    }
}

/// Ring plus random chords, so the graph is strongly connected.
pub fn random_connected(n: usize, extra: f64, r: &mut ChaCha8Rng) -> (Vec<String>, TrustGraph) {
    let ids: Vec<String> = (0..n).map(|i| format!("n{i:03}")).collect();
    let mut g = TrustGraph::new(ids.clone());
    for i in 0..n {
        g.edges.push(edge(&ids[i], &ids[(i + 1) % n], r.random_range(0.1..0.95)));
        for j in 0..n {
            if j != i && j != (i + 1) % n && r.random::<f64>() < extra {
                g.edges.push(edge(&ids[i], &ids[j], r.random_range(0.1..0.95)));
            }
        }
    }
    (ids, g)
}

pub struct EchoChamber {
    pub profiles: Vec<AgentProfile>,
    pub graph: TrustGraph,
    pub cluster: BTreeMap<String, usize>,
}

/// Two clusters at +-0.8 (sd 0.05), dense inside, `cross` out-edges per
/// agent into the other cluster.
pub fn echo_chamber(per_cluster: usize, cross: usize, seed: u64) -> EchoChamber {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut profiles = Vec::new();
    let mut cluster = BTreeMap::new();
    for c in 0..2 {
        let centre: f64 = if c == 0 { 0.8 } else { -0.8 };
        for k in 0..per_cluster {
            let id = format!("c{c}-{k:02}");
            let b: f64 = (centre + noise.sample(&mut r)).clamp(-1.0, 1.0);
            let g = Group::ALL[k % 4];
            profiles.push(agent(&id, g, random_ocean(&mut r), &[("issue", b)]));
            cluster.insert(id, c);
        }
    }
    let ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
    let mut graph = TrustGraph::new(ids.clone());
    for (i, id) in ids.iter().enumerate() {
        let c = i / per_cluster;
        let mut same: Vec<usize> = (c * per_cluster..(c + 1) * per_cluster).filter(|&j| j != i).collect();
        same.shuffle(&mut r);
        for &j in same.iter().take(4) {
            graph.edges.push(edge(id, &ids[j], r.random_range(0.3..0.9)));
        }
        let mut other: Vec<usize> = ((1 - c) * per_cluster..(2 - c) * per_cluster).collect();
        other.shuffle(&mut r);
        for &j in other.iter().take(cross) {
            graph.edges.push(edge(id, &ids[j], r.random_range(0.3..0.9)));
        }
    }
    EchoChamber {
        profiles,
        graph,
        cluster,
    }
}

pub fn ids(profiles: &[AgentProfile]) -> BTreeSet<String> {
    profiles.iter().map(|p| p.id.clone()).collect()
}
