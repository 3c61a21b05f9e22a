//! Directed trust-graph construction.
//!
//! Edge `i -> j` means agent `i` listens to (trusts) agent `j`: `j`'s belief
//! enters `i`'s social term and `j`'s messages are delivered to `i`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{derive_stance, Stance};
use crate::profiles::{default_priors, AgentProfile, Group};
use crate::text::{jaccard, tokenize};

pub const BLOCK_BONUS: f64 = 0.16;
pub const TRUST_FLOOR: f64 = 0.10;
pub const TRUST_CEIL: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("profile {0} has no initial beliefs")]
    EmptyBeliefs(String),
    #[error("no base trust configured for relation `{0}`")]
    UnknownRelation(String),
    #[error("invalid network config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Friend,
    Colleague,
    Follower,
    Influencer,
    Teacher,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Friend,
        Relation::Colleague,
        Relation::Follower,
        Relation::Influencer,
        Relation::Teacher,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Friend => "friend",
            Relation::Colleague => "colleague",
            Relation::Follower => "follower",
            Relation::Influencer => "influencer",
            Relation::Teacher => "teacher",
        }
    }

    pub fn parse(s: &str) -> Result<Relation, NetworkError> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| NetworkError::UnknownRelation(s.to_string()))
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustEdge {
    pub source: String,
    pub target: String,
    pub relation: Relation,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<TrustEdge>,
}

impl TrustGraph {
    pub fn new(nodes: Vec<String>) -> Self {
        TrustGraph {
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn has_edge(&self, source: &str, target: &str) -> bool {
        self.edges.iter().any(|e| e.source == source && e.target == target)
    }

    pub fn out_edges<'a>(&'a self, source: &'a str) -> impl Iterator<Item = &'a TrustEdge> + 'a {
        self.edges.iter().filter(move |e| e.source == source)
    }

    pub fn in_edges<'a>(&'a self, target: &'a str) -> impl Iterator<Item = &'a TrustEdge> + 'a {
        self.edges.iter().filter(move |e| e.target == target)
    }

    pub fn out_degree(&self, source: &str) -> usize {
        self.out_edges(source).count()
    }

    pub fn in_degree(&self, target: &str) -> usize {
        self.in_edges(target).count()
    }

    /// Undirected neighbor ids in first-seen order.
    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in &self.edges {
            let other = if e.source == id {
                &e.target
            } else if e.target == id {
                &e.source
            } else {
                continue;
            };
            if seen.insert(other.as_str()) {
                out.push(other.as_str());
            }
        }
        out
    }

    /// Per-source normalized weights. Sources with no out-edges map to an
    /// empty row.
    pub fn row_normalize(&self) -> BTreeMap<String, Vec<(String, f64)>> {
        let mut rows: BTreeMap<String, Vec<(String, f64)>> =
            self.nodes.iter().map(|n| (n.clone(), Vec::new())).collect();
        for e in &self.edges {
            rows.entry(e.source.clone()).or_default().push((e.target.clone(), e.weight));
        }
        for row in rows.values_mut() {
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            if total > 0.0 {
                row.iter_mut().for_each(|(_, w)| *w /= total);
            }
        }
        rows
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut pairs = BTreeSet::new();
        for e in &self.edges {
            if e.source == e.target {
                return Err(format!("self edge on {}", e.source));
            }
            if !pairs.insert((e.source.as_str(), e.target.as_str())) {
                return Err(format!("duplicate edge {} -> {}", e.source, e.target));
            }
            if !(TRUST_FLOOR..=TRUST_CEIL).contains(&e.weight) {
                return Err(format!("weight {} on {} -> {}", e.weight, e.source, e.target));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub group_affinity: BTreeMap<Group, BTreeMap<Group, f64>>,
    pub lambda_c: f64,
    pub lambda_t: f64,
    pub block_bonus: f64,
    pub reciprocity_bonus: f64,
    pub kol_bonus: f64,
    pub degree_penalty_rate: f64,
    pub target_out_degree: BTreeMap<Group, usize>,
    pub base_trust: BTreeMap<Relation, f64>,
    pub num_blocks: usize,
    /// Bridge edges to add; `None` means `ceil(2% of pool)`.
    pub bridge_count: Option<usize>,
    pub kol_fraction: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            group_affinity: default_affinity(),
            lambda_c: 0.25,
            lambda_t: 0.20,
            block_bonus: BLOCK_BONUS,
            reciprocity_bonus: 0.08,
            kol_bonus: 0.12,
            degree_penalty_rate: 0.01,
            target_out_degree: Group::ALL.into_iter().map(|g| (g, 5)).collect(),
            base_trust: [
                (Relation::Friend, 0.60),
                (Relation::Colleague, 0.50),
                (Relation::Follower, 0.35),
                (Relation::Influencer, 0.70),
                (Relation::Teacher, 0.65),
            ]
            .into_iter()
            .collect(),
            num_blocks: 4,
            bridge_count: None,
            kol_fraction: 0.05,
            seed: 11,
        }
    }
}

/// Within-group affinity 0.30; cross-group is half the archetype trust
/// priority, floored at 0.10.
pub fn default_affinity() -> BTreeMap<Group, BTreeMap<Group, f64>> {
    let priors = default_priors();
    Group::ALL
        .into_iter()
        .map(|from| {
            let prior = priors.iter().find(|p| p.group == from);
            let row = Group::ALL
                .into_iter()
                .map(|to| {
                    let a = if from == to {
                        0.30
                    } else {
                        let t = prior.and_then(|p| p.trust_priorities.get(&to)).copied().unwrap_or(0.0);
                        (0.5 * t).max(0.10)
                    };
                    (to, a)
                })
                .collect();
            (from, row)
        })
        .collect()
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.block_bonus != BLOCK_BONUS {
            return Err(NetworkError::Config(format!("block_bonus is fixed at {BLOCK_BONUS}")));
        }
        if self.reciprocity_bonus < 0.0 || self.kol_bonus < 0.0 || self.degree_penalty_rate < 0.0 {
            return Err(NetworkError::Config("bonuses and penalty rate must be non-negative".into()));
        }
        if self.num_blocks == 0 {
            return Err(NetworkError::Config("num_blocks must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.kol_fraction) {
            return Err(NetworkError::Config("kol_fraction outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn affinity(&self, a: Group, b: Group) -> f64 {
        self.group_affinity.get(&a).and_then(|r| r.get(&b)).copied().unwrap_or(0.0)
    }

    pub fn out_degree_for(&self, g: Group) -> usize {
        self.target_out_degree.get(&g).copied().unwrap_or(0)
    }
}

/// Stance from the mean initial belief.
pub fn mean_belief_stance(profile: &AgentProfile) -> Result<Stance, NetworkError> {
    profile
        .mean_belief()
        .map(derive_stance)
        .ok_or_else(|| NetworkError::EmptyBeliefs(profile.id.clone()))
}

fn dominant_topic(profile: &AgentProfile) -> Option<&str> {
    let mut best: Option<(&str, f64)> = None;
    for (t, v) in &profile.initial_beliefs {
        if best.is_none_or(|(_, bv)| v.abs() > bv) {
            best = Some((t, v.abs()));
        }
    }
    best.map(|(t, _)| t)
}

fn slug(s: &str) -> String {
    tokenize(s).collect::<Vec<_>>().join("_")
}

/// Namespaced feature tags.
pub fn feature_tags(profile: &AgentProfile, case: &str) -> BTreeSet<String> {
    let mut tags = BTreeSet::new();
    tags.insert(format!("group:{}", profile.group.as_str().to_lowercase()));
    tags.insert(format!("role:{}", slug(&profile.role)));
    tags.insert(format!("case:{}", slug(case)));
    let stance = profile
        .explicit_stance()
        .or_else(|| mean_belief_stance(profile).ok())
        .unwrap_or(Stance::Neutral);
    tags.insert(format!("stance:{}", stance.as_str().to_lowercase()));
    for t in profile.initial_beliefs.keys() {
        tags.insert(format!("topic:{t}"));
    }
    for (field, value) in &profile.demographics {
        tags.insert(format!("demo:{field}={}", slug(value)));
    }
    for i in &profile.interests {
        tags.insert(format!("interest:{i}"));
    }
    tags.insert(format!("rationale:{}", profile.rationale_cluster));
    tags
}

pub const LOCAL_HUB: &str = "local-hub";
pub const CROSS_HUB: &str = "cross-network-hub";

/// Community, issue-stance and role circles plus one `circle:` per tag.
pub fn circles(profile: &AgentProfile, tags: &BTreeSet<String>, hub: Option<&[&str]>) -> BTreeSet<String> {
    let mut c = BTreeSet::new();
    c.insert(format!("community:{}", profile.group.as_str().to_lowercase()));
    let stance = profile
        .explicit_stance()
        .or_else(|| mean_belief_stance(profile).ok())
        .unwrap_or(Stance::Neutral);
    let topic = dominant_topic(profile).unwrap_or("none");
    c.insert(format!("issue:{topic}:{}", stance.as_str().to_lowercase()));
    c.insert(format!("role_circle:{}", slug(&profile.role)));
    for t in tags {
        c.insert(format!("circle:{t}"));
    }
    for h in hub.unwrap_or(&[]) {
        c.insert(h.to_string());
    }
    c
}

/// Explicit `kol` metadata wins; otherwise the top `ceil(fraction * size)` of
/// each community by interest-set size (id order breaks ties).
pub fn identify_kols(pool: &[AgentProfile], fraction: f64) -> BTreeSet<String> {
    let flagged: BTreeSet<String> = pool.iter().filter(|p| p.is_kol()).map(|p| p.id.clone()).collect();
    if !flagged.is_empty() {
        return flagged;
    }
    let mut out = BTreeSet::new();
    for g in Group::ALL {
        let mut members: Vec<&AgentProfile> = pool.iter().filter(|p| p.group == g).collect();
        if members.is_empty() {
            continue;
        }
        members.sort_by(|a, b| b.interests.len().cmp(&a.interests.len()).then(a.id.cmp(&b.id)));
        let k = ((fraction * members.len() as f64).ceil() as usize).min(members.len());
        out.extend(members.into_iter().take(k).map(|p| p.id.clone()));
    }
    out
}

/// Individual terms of a relationship score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTerms {
    pub affinity: f64,
    pub circle_jaccard: f64,
    pub tag_jaccard: f64,
    pub same_block: bool,
    pub reverse_edge: bool,
    pub target_is_kol: bool,
    pub target_in_degree: usize,
}

pub fn score_from_terms(t: &ScoreTerms, cfg: &NetworkConfig) -> f64 {
    t.affinity + cfg.lambda_c * t.circle_jaccard + cfg.lambda_t * t.tag_jaccard
        + if t.same_block { cfg.block_bonus } else { 0.0 }
        + if t.reverse_edge { cfg.reciprocity_bonus } else { 0.0 }
        + if t.target_is_kol { cfg.kol_bonus } else { 0.0 }
        - cfg.degree_penalty_rate * t.target_in_degree as f64
}

/// `clip(w0(relation) + 0.15 J_C + 0.10 J_T, 0.10, 0.95)`.
pub fn trust_weight(relation: Relation, circle_j: f64, tag_j: f64, base: &BTreeMap<Relation, f64>) -> Result<f64, NetworkError> {
    let w0 = base
        .get(&relation)
        .ok_or_else(|| NetworkError::UnknownRelation(relation.to_string()))?;
    Ok((w0 + 0.15 * circle_j + 0.10 * tag_j).clamp(TRUST_FLOOR, TRUST_CEIL))
}

/// Derived per-agent features used during construction.
#[derive(Debug, Clone)]
pub struct NetworkFeatures {
    pub ids: Vec<String>,
    pub groups: Vec<Group>,
    pub tags: Vec<BTreeSet<String>>,
    pub circles: Vec<BTreeSet<String>>,
    pub blocks: Vec<usize>,
    pub kol: Vec<bool>,
}

impl NetworkFeatures {
    pub fn new(pool: &[AgentProfile], case: &str, cfg: &NetworkConfig) -> Self {
        let kols = identify_kols(pool, cfg.kol_fraction);
        let kol_groups: BTreeSet<Group> = pool.iter().filter(|p| kols.contains(&p.id)).map(|p| p.group).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let blocks = pool.iter().map(|_| rng.random_range(0..cfg.num_blocks.max(1))).collect();
        let tags: Vec<_> = pool.iter().map(|p| feature_tags(p, case)).collect();
        let circles = pool
            .iter()
            .zip(&tags)
            .map(|(p, t)| {
                let hubs: Vec<&str> = if !kols.contains(&p.id) {
                    Vec::new()
                } else if kol_groups.len() > 1 {
                    vec![LOCAL_HUB, CROSS_HUB]
                } else {
                    vec![LOCAL_HUB]
                };
                circles(p, t, Some(&hubs))
            })
            .collect();
        NetworkFeatures {
            ids: pool.iter().map(|p| p.id.clone()).collect(),
            groups: pool.iter().map(|p| p.group).collect(),
            tags,
            circles,
            blocks,
            kol: pool.iter().map(|p| kols.contains(&p.id)).collect(),
        }
    }

    pub fn terms(&self, i: usize, j: usize, cfg: &NetworkConfig, graph: &TrustGraph) -> ScoreTerms {
        ScoreTerms {
            affinity: cfg.affinity(self.groups[i], self.groups[j]),
            circle_jaccard: jaccard(&self.circles[i], &self.circles[j]),
            tag_jaccard: jaccard(&self.tags[i], &self.tags[j]),
            same_block: self.blocks[i] == self.blocks[j],
            reverse_edge: graph.has_edge(&self.ids[j], &self.ids[i]),
            target_is_kol: self.kol[j],
            target_in_degree: graph.in_degree(&self.ids[j]),
        }
    }

    pub fn relationship_score(&self, i: usize, j: usize, cfg: &NetworkConfig, graph: &TrustGraph) -> f64 {
        score_from_terms(&self.terms(i, j, cfg, graph), cfg)
    }

    pub fn relation(&self, i: usize, j: usize) -> Relation {
        if self.groups[i] == self.groups[j] {
            Relation::Friend
        } else if self.groups[i] == Group::Education {
            Relation::Teacher
        } else if self.kol[j] {
            Relation::Follower
        } else if self.kol[i] {
            Relation::Influencer
        } else {
            Relation::Colleague
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    LocalKol,
    KolMesh,
    Bridge,
    GreedyFill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub phase: Phase,
    pub source: String,
    pub target: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltNetwork {
    pub graph: TrustGraph,
    pub log: Vec<LogEntry>,
}

struct Builder<'a> {
    f: &'a NetworkFeatures,
    cfg: &'a NetworkConfig,
    graph: TrustGraph,
    log: Vec<LogEntry>,
}

impl Builder<'_> {
    fn room(&self, i: usize) -> bool {
        self.graph.out_degree(&self.f.ids[i]) < self.cfg.out_degree_for(self.f.groups[i])
    }

    fn admissible(&self, i: usize, j: usize) -> bool {
        i != j && !self.graph.has_edge(&self.f.ids[i], &self.f.ids[j])
    }

    fn add(&mut self, i: usize, j: usize, phase: Phase) -> Result<bool, NetworkError> {
        if !self.admissible(i, j) || !self.room(i) {
            return Ok(false);
        }
        let score = self.f.relationship_score(i, j, self.cfg, &self.graph);
        let relation = self.f.relation(i, j);
        let weight = trust_weight(
            relation,
            jaccard(&self.f.circles[i], &self.f.circles[j]),
            jaccard(&self.f.tags[i], &self.f.tags[j]),
            &self.cfg.base_trust,
        )?;
        self.graph.edges.push(TrustEdge {
            source: self.f.ids[i].clone(),
            target: self.f.ids[j].clone(),
            relation,
            weight,
        });
        self.log.push(LogEntry {
            phase,
            source: self.f.ids[i].clone(),
            target: self.f.ids[j].clone(),
            score,
        });
        Ok(true)
    }
}

/// Four-phase construction: local KOL links, cross-group KOL mesh, bridges,
/// then greedy fill by relationship score up to each group's out-degree.
pub fn build_network(pool: &[AgentProfile], case: &str, cfg: &NetworkConfig) -> Result<BuiltNetwork, NetworkError> {
    cfg.validate()?;
    let f = NetworkFeatures::new(pool, case, cfg);
    let n = f.ids.len();
    let mut b = Builder {
        f: &f,
        cfg,
        graph: TrustGraph::new(f.ids.clone()),
        log: Vec::new(),
    };

    // phase 1: each non-KOL follows its community's first KOL
    for i in 0..n {
        if f.kol[i] {
            continue;
        }
        if let Some(j) = (0..n).find(|&j| f.kol[j] && f.groups[j] == f.groups[i]) {
            b.add(i, j, Phase::LocalKol)?;
        }
    }
    // phase 2: mesh between KOLs of different groups
    for i in 0..n {
        for j in 0..n {
            if f.kol[i] && f.kol[j] && f.groups[i] != f.groups[j] {
                b.add(i, j, Phase::KolMesh)?;
            }
        }
    }
    // phase 3: bridges between the most tag-similar cross-community pairs
    let bridges = cfg.bridge_count.unwrap_or(((n as f64) * 0.02).ceil() as usize);
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if f.groups[i] != f.groups[j] {
                pairs.push((i, j, jaccard(&f.tags[i], &f.tags[j])));
            }
        }
    }
    pairs.sort_by(|a, c| c.2.total_cmp(&a.2).then(a.0.cmp(&c.0)).then(a.1.cmp(&c.1)));
    let mut added = 0;
    for (i, j, _) in pairs {
        if added >= bridges {
            break;
        }
        if b.add(i, j, Phase::Bridge)? {
            added += 1;
        }
    }
    // phase 4: greedy fill
    for i in 0..n {
        while b.room(i) {
            let best = (0..n)
                .filter(|&j| b.admissible(i, j))
                .map(|j| (j, f.relationship_score(i, j, cfg, &b.graph)))
                .fold(None::<(usize, f64)>, |acc, (j, s)| match acc {
                    Some((_, bs)) if bs >= s => acc,
                    _ => Some((j, s)),
                });
            match best {
                Some((j, _)) => {
                    b.add(i, j, Phase::GreedyFill)?;
                }
                None => break,
            }
        }
    }
    Ok(BuiltNetwork {
        graph: b.graph,
        log: b.log,
    })
}

/// Replays a construction log and checks that every greedy-fill edge had the
/// highest score among the admissible candidates at the time it was chosen.
/// Returns the first violating log index.
pub fn audit_greedy_fill(
    pool: &[AgentProfile],
    case: &str,
    cfg: &NetworkConfig,
    log: &[LogEntry],
) -> Result<(), usize> {
    let f = NetworkFeatures::new(pool, case, cfg);
    let index: BTreeMap<&str, usize> = f.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut g = TrustGraph::new(f.ids.clone());
    for (k, entry) in log.iter().enumerate() {
        let (Some(&i), Some(&j)) = (index.get(entry.source.as_str()), index.get(entry.target.as_str())) else {
            return Err(k);
        };
        if entry.phase == Phase::GreedyFill {
            let chosen = f.relationship_score(i, j, cfg, &g);
            if (chosen - entry.score).abs() > 1e-12 {
                return Err(k);
            }
            for c in 0..f.ids.len() {
                if c != i && c != j && !g.has_edge(&f.ids[i], &f.ids[c]) && f.relationship_score(i, c, cfg, &g) > chosen {
                    return Err(k);
                }
            }
        }
        g.edges.push(TrustEdge {
            source: entry.source.clone(),
            target: entry.target.clone(),
            relation: Relation::Colleague,
            weight: 0.5,
        });
    }
    Ok(())
}

/// Node/edge list for graph views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkExport {
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<TrustEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportNode {
    pub id: String,
    pub group: Group,
    pub kol: bool,
    pub in_degree: usize,
    pub out_degree: usize,
}

pub fn export(graph: &TrustGraph, pool: &[AgentProfile], kols: &BTreeSet<String>) -> NetworkExport {
    let groups: BTreeMap<&str, Group> = pool.iter().map(|p| (p.id.as_str(), p.group)).collect();
    NetworkExport {
        nodes: graph
            .nodes
            .iter()
            .map(|id| ExportNode {
                id: id.clone(),
                group: groups.get(id.as_str()).copied().unwrap_or(Group::Citizen),
                kol: kols.contains(id),
                in_degree: graph.in_degree(id),
                out_degree: graph.out_degree(id),
            })
            .collect(),
        edges: graph.edges.clone(),
    }
}
