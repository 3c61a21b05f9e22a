//! Scenario-aligned cohort selection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Stance;
use crate::profiles::{allocate_counts, AgentProfile, Group, ProfileError};
use crate::scenario::Scenario;
use crate::socialnet::{circles, feature_tags, identify_kols, mean_belief_stance, TrustGraph};
use crate::text::{token_set, tokenize};

pub const RELEVANCE_BASE: f64 = 0.15;
pub const NOVELTY_WEIGHT: f64 = 0.5;

pub const PRIVILEGED_ROLES: &[&str] = &[
    "broker",
    "expert",
    "organizer",
    "organiser",
    "institutional",
    "official",
    "kol",
    "influencer",
];

pub const SUPPORTIVE_CUES: &[&str] = &["support", "supports", "supportive", "favor", "favour", "endorse", "advocate", "champion", "welcome"];
pub const OPPOSING_CUES: &[&str] = &["oppose", "opposes", "opposed", "against", "reject", "rejects", "critic", "critical", "skeptic", "sceptic"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("cannot sample from an empty pool")]
    EmptyPool,
    #[error("requested {requested} agents from a pool of {pool}")]
    TooMany { requested: usize, pool: usize },
    #[error("balanced cohort needs every stance; `{0}` is absent")]
    MissingStance(Stance),
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error(transparent)]
    Allocation(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Stratified,
    Quota,
    Cluster,
    Multistage,
    Purposive,
    Snowball,
    Theoretical,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Stratified,
        Strategy::Quota,
        Strategy::Cluster,
        Strategy::Multistage,
        Strategy::Purposive,
        Strategy::Snowball,
        Strategy::Theoretical,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub n: usize,
    pub quota_targets: Option<BTreeMap<Stance, f64>>,
    pub role_bonus: f64,
    pub seeds: Vec<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            strategy: Strategy::Stratified,
            n: 43,
            quota_targets: None,
            role_bonus: 0.15,
            seeds: Vec::new(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.n < 1 {
            return Err(SamplingError::Config("n must be >= 1".into()));
        }
        if self.role_bonus < 0.0 {
            return Err(SamplingError::Config("role_bonus must be non-negative".into()));
        }
        if let Some(q) = &self.quota_targets {
            let sum: f64 = q.values().sum();
            if (sum - 1.0).abs() > 1e-9 || q.values().any(|v| *v < 0.0) {
                return Err(SamplingError::Config(format!("quota targets sum to {sum}")));
            }
        }
        if self.strategy == Strategy::Quota && self.quota_targets.is_none() {
            return Err(SamplingError::Config("quota strategy needs quota_targets".into()));
        }
        Ok(())
    }
}

pub fn has_privileged_role(profile: &AgentProfile) -> bool {
    profile.is_kol() || tokenize(&profile.role).any(|t| PRIVILEGED_ROLES.contains(&t.as_str()))
}

pub fn scenario_vocabulary(scenario: &Scenario) -> BTreeSet<String> {
    let mut v = token_set(&scenario.title);
    for t in &scenario.key_topics {
        v.extend(tokenize(t));
    }
    v
}

pub fn profile_vocabulary(profile: &AgentProfile) -> BTreeSet<String> {
    let mut v = token_set(&profile.bio);
    v.extend(tokenize(&profile.role));
    for i in &profile.interests {
        v.extend(tokenize(i));
    }
    v
}

/// `min(1, 0.15 + overlap + eta * privileged)`.
pub fn relevance(profile: &AgentProfile, scenario: &Scenario, role_bonus: f64) -> f64 {
    let q = scenario_vocabulary(scenario);
    relevance_with(&q, profile, role_bonus)
}

fn relevance_with(q: &BTreeSet<String>, profile: &AgentProfile, role_bonus: f64) -> f64 {
    let overlap = if q.is_empty() {
        0.0
    } else {
        q.intersection(&profile_vocabulary(profile)).count() as f64 / q.len() as f64
    };
    let bonus = if has_privileged_role(profile) { role_bonus } else { 0.0 };
    (RELEVANCE_BASE + overlap + bonus).min(1.0)
}

/// Bio keyword cue; `None` when absent or balanced.
pub fn cue_stance(bio: &str) -> Option<Stance> {
    let mut s = 0i32;
    for t in tokenize(bio) {
        if SUPPORTIVE_CUES.contains(&t.as_str()) {
            s += 1;
        } else if OPPOSING_CUES.contains(&t.as_str()) {
            s -= 1;
        }
    }
    match s.cmp(&0) {
        Ordering::Greater => Some(Stance::Supportive),
        Ordering::Less => Some(Stance::Opposing),
        Ordering::Equal => None,
    }
}

/// Label, then mean belief, then textual cues.
pub fn infer_stance(profile: &AgentProfile) -> Option<Stance> {
    profile
        .explicit_stance()
        .or_else(|| mean_belief_stance(profile).ok())
        .or_else(|| cue_stance(&profile.bio))
}

/// Stances for a whole pool. Profiles with no inferable stance go to the most
/// under-filled quota target, or round-robin when there are no targets.
pub fn infer_stances(pool: &[AgentProfile], quota_targets: Option<&BTreeMap<Stance, f64>>) -> Vec<Stance> {
    let inferred: Vec<Option<Stance>> = pool.iter().map(infer_stance).collect();
    let mut counts: BTreeMap<Stance, usize> = BTreeMap::new();
    for s in inferred.iter().flatten() {
        *counts.entry(*s).or_default() += 1;
    }
    let total = pool.len() as f64;
    let mut rr = 0usize;
    inferred
        .into_iter()
        .map(|s| {
            if let Some(s) = s {
                return s;
            }
            let pick = match quota_targets {
                Some(t) => Stance::ALL
                    .into_iter()
                    .map(|s| (s, t.get(&s).copied().unwrap_or(0.0) * total - counts.get(&s).copied().unwrap_or(0) as f64))
                    .fold(None::<(Stance, f64)>, |acc, (s, d)| match acc {
                        Some((_, bd)) if bd >= d => acc,
                        _ => Some((s, d)),
                    })
                    .map(|(s, _)| s)
                    .unwrap_or(Stance::Neutral),
                None => {
                    let s = Stance::ALL[rr % 3];
                    rr += 1;
                    s
                }
            };
            *counts.entry(pick).or_default() += 1;
            pick
        })
        .collect()
}

/// Proportional group sizes via largest remainder.
pub fn allocate_group_sizes(pool: &[AgentProfile], n: usize) -> Result<BTreeMap<Group, usize>, SamplingError> {
    if n > pool.len() {
        return Err(SamplingError::TooMany {
            requested: n,
            pool: pool.len(),
        });
    }
    if pool.is_empty() {
        return Ok(BTreeMap::new());
    }
    let props: Vec<(Group, f64)> = Group::ALL
        .into_iter()
        .map(|g| (g, pool.iter().filter(|p| p.group == g).count()))
        .filter(|(_, c)| *c > 0)
        .map(|(g, c)| (g, c as f64 / pool.len() as f64))
        .collect();
    let counts = allocate_counts(n, &renormalize(props))?;
    Ok(counts.into_iter().collect())
}

fn renormalize<K>(props: Vec<(K, f64)>) -> Vec<(K, f64)> {
    let s: f64 = props.iter().map(|(_, p)| p).sum();
    if s > 0.0 {
        props.into_iter().map(|(k, p)| (k, p / s)).collect()
    } else {
        props
    }
}

/// Precomputed per-agent attributes used by every strategy.
struct Ctx<'a> {
    pool: &'a [AgentProfile],
    relevance: Vec<f64>,
    stance: Vec<Stance>,
    circles: Vec<BTreeSet<String>>,
}

impl<'a> Ctx<'a> {
    fn new(pool: &'a [AgentProfile], scenario: &Scenario, cfg: &SamplingConfig) -> Self {
        let q = scenario_vocabulary(scenario);
        let stance = infer_stances(pool, cfg.quota_targets.as_ref());
        Ctx {
            pool,
            relevance: pool.iter().map(|p| relevance_with(&q, p, cfg.role_bonus)).collect(),
            circles: pool
                .iter()
                .map(|p| circles(p, &feature_tags(p, &scenario.title), None))
                .collect(),
            stance,
        }
    }

    /// Descending relevance, ties by pool order.
    fn by_relevance(&self, mut idx: Vec<usize>) -> Vec<usize> {
        idx.sort_by(|&a, &b| self.relevance[b].total_cmp(&self.relevance[a]).then(a.cmp(&b)));
        idx
    }

    fn issue_circle(&self, i: usize) -> &str {
        self.circles[i]
            .iter()
            .find(|c| c.starts_with("issue:"))
            .map(String::as_str)
            .unwrap_or("")
    }

    /// Strata filled top-down by relevance; any shortfall is topped up from
    /// the remaining pool by relevance.
    fn stratified(&self, members: &[usize], n: usize, targets: &[(Stance, f64)]) -> Result<Vec<usize>, SamplingError> {
        let alloc = allocate_counts(n, &renormalize(targets.to_vec()))?;
        let mut chosen = Vec::new();
        for (s, k) in alloc {
            let stratum: Vec<usize> = members.iter().copied().filter(|&i| self.stance[i] == s).collect();
            chosen.extend(self.by_relevance(stratum).into_iter().take(k));
        }
        if chosen.len() < n {
            let taken: BTreeSet<usize> = chosen.iter().copied().collect();
            let rest: Vec<usize> = members.iter().copied().filter(|i| !taken.contains(i)).collect();
            chosen.extend(self.by_relevance(rest).into_iter().take(n - chosen.len()));
        }
        Ok(chosen)
    }

    fn stance_props(&self, members: &[usize]) -> Vec<(Stance, f64)> {
        Stance::ALL
            .into_iter()
            .map(|s| (s, members.iter().filter(|&&i| self.stance[i] == s).count() as f64 / members.len() as f64))
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }

    /// Circles ranked by mean member relevance; whole circles until `n`, the
    /// last one truncated by relevance.
    fn cluster(&self, n: usize, whole: bool) -> Vec<usize> {
        let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, cs) in self.circles.iter().enumerate() {
            for c in cs {
                members.entry(c.as_str()).or_default().push(i);
            }
        }
        let mut ranked: Vec<(&str, f64)> = members
            .iter()
            .map(|(c, m)| (*c, m.iter().map(|&i| self.relevance[i]).sum::<f64>() / m.len() as f64))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        let mut taken = BTreeSet::new();
        let mut out = Vec::new();
        for (c, _) in ranked {
            if out.len() >= n {
                break;
            }
            let fresh: Vec<usize> = members[c].iter().copied().filter(|i| !taken.contains(i)).collect();
            let fresh = self.by_relevance(fresh);
            let room = if whole { fresh.len() } else { n - out.len() };
            for i in fresh.into_iter().take(room) {
                taken.insert(i);
                out.push(i);
            }
        }
        out
    }

    fn purposive(&self, n: usize) -> Vec<usize> {
        let features = |i: usize| -> Vec<String> {
            let mut f = vec![format!("role:{}", self.pool[i].role.to_lowercase())];
            f.extend(
                self.circles[i]
                    .iter()
                    .filter(|c| c.starts_with("community:") || c.starts_with("issue:") || c.starts_with("role_circle:"))
                    .cloned(),
            );
            f
        };
        let feats: Vec<Vec<String>> = (0..self.pool.len()).map(features).collect();
        let mut covered: BTreeSet<&str> = BTreeSet::new();
        let mut left: Vec<usize> = (0..self.pool.len()).collect();
        let mut out = Vec::new();
        while out.len() < n && !left.is_empty() {
            let score = |i: usize| {
                let novelty = feats[i].iter().filter(|f| !covered.contains(f.as_str())).count();
                self.relevance[i] + NOVELTY_WEIGHT * novelty as f64
            };
            let (pos, _) = left
                .iter()
                .enumerate()
                .map(|(pos, &i)| (pos, score(i)))
                .fold(None::<(usize, f64)>, |acc, (p, s)| match acc {
                    Some((_, bs)) if bs >= s => acc,
                    _ => Some((p, s)),
                })
                .expect("non-empty");
            let i = left.remove(pos);
            covered.extend(feats[i].iter().map(String::as_str));
            out.push(i);
        }
        out
    }

    /// Best-first expansion over the undirected graph from seeds (or KOLs).
    fn snowball(&self, n: usize, seeds: &[String], graph: Option<&TrustGraph>) -> Result<(Vec<usize>, bool), SamplingError> {
        let index: BTreeMap<&str, usize> = self.pool.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        let seed_ids: Vec<String> = if seeds.is_empty() {
            identify_kols(self.pool, 0.05).into_iter().collect()
        } else {
            seeds.to_vec()
        };
        let seed_idx: Vec<usize> = seed_ids.iter().filter_map(|s| index.get(s.as_str()).copied()).collect();
        if seed_idx.is_empty() && graph.is_none_or(|g| g.edges.is_empty()) {
            return Err(SamplingError::Config("snowball needs seeds, KOLs or a non-empty graph".into()));
        }
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                self.0.total_cmp(&o.0).then(o.1.cmp(&self.1))
            }
        }
        let mut seen = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        for i in seed_idx {
            if seen.insert(i) {
                heap.push(Item(self.relevance[i], i));
            }
        }
        let mut out = Vec::new();
        while out.len() < n {
            let Some(Item(_, i)) = heap.pop() else { break };
            out.push(i);
            if let Some(g) = graph {
                for nb in g.neighbors(&self.pool[i].id) {
                    if let Some(&j) = index.get(nb) {
                        if seen.insert(j) {
                            heap.push(Item(self.relevance[j], j));
                        }
                    }
                }
            }
        }
        let short = out.len() < n;
        Ok((out, short))
    }

    /// Round-robin over stance, group, role and issue-circle dimensions; each
    /// step takes the least-covered value that still has candidates.
    fn theoretical(&self, n: usize) -> Vec<usize> {
        let key = |dim: usize, i: usize| -> String {
            match dim {
                0 => self.stance[i].as_str().to_string(),
                1 => self.pool[i].group.as_str().to_string(),
                2 => self.pool[i].role.to_lowercase(),
                _ => self.issue_circle(i).to_string(),
            }
        };
        let mut taken = vec![false; self.pool.len()];
        let mut out = Vec::new();
        let mut round = 0usize;
        while out.len() < n.min(self.pool.len()) {
            let dim = round % 4;
            round += 1;
            let mut coverage: BTreeMap<String, usize> = BTreeMap::new();
            for i in 0..self.pool.len() {
                let c = coverage.entry(key(dim, i)).or_default();
                if taken[i] {
                    *c += 1;
                }
            }
            let mut cells: Vec<(String, usize)> = coverage
                .into_iter()
                .filter(|(v, _)| (0..self.pool.len()).any(|i| !taken[i] && key(dim, i) == *v))
                .collect();
            cells.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
            let Some((value, _)) = cells.into_iter().next() else { continue };
            let cands: Vec<usize> = (0..self.pool.len()).filter(|&i| !taken[i] && key(dim, i) == value).collect();
            let i = self.by_relevance(cands)[0];
            taken[i] = true;
            out.push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub strategy: Strategy,
    pub requested: usize,
    pub realized: usize,
    pub shortfall: bool,
    pub group_distribution: BTreeMap<Group, usize>,
    pub stance_distribution: BTreeMap<Stance, usize>,
    pub mean_relevance: f64,
    pub balanced_cohort: Option<Vec<String>>,
    pub balanced_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub members: Vec<String>,
    pub report: SamplingReport,
}

pub fn sample(
    pool: &[AgentProfile],
    scenario: &Scenario,
    cfg: &SamplingConfig,
    graph: Option<&TrustGraph>,
) -> Result<Cohort, SamplingError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(SamplingError::EmptyPool);
    }
    let ctx = Ctx::new(pool, scenario, cfg);
    let n = cfg.n.min(pool.len());
    let all: Vec<usize> = (0..pool.len()).collect();
    let mut shortfall = false;
    let chosen = match cfg.strategy {
        Strategy::Stratified => ctx.stratified(&all, n, &ctx.stance_props(&all))?,
        Strategy::Quota => {
            let t: Vec<(Stance, f64)> = cfg.quota_targets.as_ref().expect("validated").iter().map(|(k, v)| (*k, *v)).collect();
            ctx.stratified(&all, n, &t)?
        }
        Strategy::Cluster => ctx.cluster(n, false),
        Strategy::Multistage => {
            let stage1 = ctx.cluster(n, true);
            ctx.stratified(&stage1, n, &ctx.stance_props(&stage1))?
        }
        Strategy::Purposive => ctx.purposive(n),
        Strategy::Snowball => {
            let (c, short) = ctx.snowball(n, &cfg.seeds, graph)?;
            shortfall = short;
            c
        }
        Strategy::Theoretical => ctx.theoretical(n),
    };
    let mut group_distribution = BTreeMap::new();
    let mut stance_distribution = BTreeMap::new();
    for &i in &chosen {
        *group_distribution.entry(pool[i].group).or_default() += 1;
        *stance_distribution.entry(ctx.stance[i]).or_default() += 1;
    }
    let mean_relevance = if chosen.is_empty() {
        0.0
    } else {
        chosen.iter().map(|&i| ctx.relevance[i]).sum::<f64>() / chosen.len() as f64
    };
    let (balanced_cohort, balanced_error) = match balanced_from(&ctx, &chosen) {
        Ok(b) => (Some(b.into_iter().map(|i| pool[i].id.clone()).collect()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let members: Vec<String> = chosen.iter().map(|&i| pool[i].id.clone()).collect();
    Ok(Cohort {
        report: SamplingReport {
            strategy: cfg.strategy,
            requested: cfg.n,
            realized: members.len(),
            shortfall,
            group_distribution,
            stance_distribution,
            mean_relevance,
            balanced_cohort,
            balanced_error,
        },
        members,
    })
}

fn balanced_from(ctx: &Ctx<'_>, members: &[usize]) -> Result<Vec<usize>, SamplingError> {
    let strata: Vec<Vec<usize>> = Stance::ALL
        .into_iter()
        .map(|s| ctx.by_relevance(members.iter().copied().filter(|&i| ctx.stance[i] == s).collect()))
        .collect();
    if let Some(pos) = strata.iter().position(|s| s.is_empty()) {
        return Err(SamplingError::MissingStance(Stance::ALL[pos]));
    }
    let k = strata.iter().map(Vec::len).min().unwrap_or(0);
    Ok(strata.into_iter().flat_map(|s| s.into_iter().take(k)).collect())
}

/// Equal-stance cohort of size `3k`, `k` the smallest stance count.
pub fn balanced_cohort(pool: &[AgentProfile], scenario: &Scenario) -> Result<Vec<String>, SamplingError> {
    let ctx = Ctx::new(pool, scenario, &SamplingConfig::default());
    let all: Vec<usize> = (0..pool.len()).collect();
    Ok(balanced_from(&ctx, &all)?.into_iter().map(|i| pool[i].id.clone()).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dynamics::OceanVector;
    use crate::socialnet::{build_network, NetworkConfig};
    use proptest::prelude::*;
    use super::Strategy;

    pub(crate) fn scenario() -> Scenario {
        Scenario {
            title: "School funding".into(),
            key_topics: vec!["school_budget".into()],
            ticks: 5,
            policy_events: Vec::new(),
            theta_bc: None,
            metadata: BTreeMap::new(),
        }
    }

    pub(crate) fn agent(id: &str, group: Group, role: &str, bio: &str, belief: Option<f64>) -> AgentProfile {
        AgentProfile {
            id: id.into(),
            name: id.into(),
            bio: bio.into(),
            group,
            role: role.into(),
            demographics: BTreeMap::new(),
            interests: ["hiking".to_string()].into_iter().collect(),
            ocean: OceanVector::default(),
            initial_beliefs: belief.map(|b| [("school_budget".to_string(), b)].into_iter().collect()).unwrap_or_default(),
            rationale_cluster: "r".into(),
            rhetorical_style: "s".into(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn relevance_examples() {
        let s = scenario();
        // vocabulary {school, funding, budget}
        let a = agent("a", Group::Citizen, "parent", "likes trains", None);
        assert!((relevance(&a, &s, 0.15) - 0.15).abs() < 1e-12);
        let b = agent("b", Group::Citizen, "parent", "school funding budget", None);
        assert_eq!(relevance(&b, &s, 0.15), 1.0);
        let mut s2 = scenario();
        s2.title = "school".into();
        s2.key_topics = vec!["budget_cuts".into(), "x".into()];
        // vocabulary {school, budget, cuts, x}; overlap 2/4
        let c = agent("c", Group::Government, "policy expert", "school budget", None);
        assert!((relevance(&c, &s2, 0.15) - 0.80).abs() < 1e-12);
    }

    #[test]
    fn stance_inference_order() {
        let mut a = agent("a", Group::Citizen, "r", "", Some(0.9));
        a.metadata.insert("stance".into(), "Opposing".into());
        assert_eq!(infer_stance(&a), Some(Stance::Opposing));
        assert_eq!(infer_stance(&agent("b", Group::Citizen, "r", "", Some(0.4))), Some(Stance::Supportive));
        assert_eq!(infer_stance(&agent("c", Group::Citizen, "r", "I oppose it", None)), Some(Stance::Opposing));
        let blank: Vec<_> = (0..4).map(|i| agent(&format!("z{i}"), Group::Citizen, "r", "", None)).collect();
        assert_eq!(
            infer_stances(&blank, None),
            [Stance::Supportive, Stance::Neutral, Stance::Opposing, Stance::Supportive]
        );
        let targets: BTreeMap<_, _> = [(Stance::Supportive, 0.0), (Stance::Neutral, 0.0), (Stance::Opposing, 1.0)].into_iter().collect();
        assert!(infer_stances(&blank, Some(&targets)).iter().all(|s| *s == Stance::Opposing));
    }

    fn grouped(counts: &[(Group, usize)]) -> Vec<AgentProfile> {
        let mut v = Vec::new();
        for (g, c) in counts {
            for _ in 0..*c {
                let i = v.len();
                v.push(agent(&format!("p{i:03}"), *g, "r", "", Some(((i % 3) as f64 - 1.0) * 0.5)));
            }
        }
        v
    }

    #[test]
    fn group_allocation_examples() {
        let pool = grouped(&[(Group::Citizen, 34), (Group::Government, 3), (Group::Business, 3), (Group::Education, 3)]);
        let a = allocate_group_sizes(&pool, 43).unwrap();
        assert_eq!(a.values().copied().collect::<Vec<_>>(), [34, 3, 3, 3]);
        let pool = grouped(&[(Group::Citizen, 10), (Group::Government, 10)]);
        assert_eq!(allocate_group_sizes(&pool, 10).unwrap().values().copied().collect::<Vec<_>>(), [5, 5]);
        let pool = grouped(&[(Group::Citizen, 7), (Group::Government, 3)]);
        let a = allocate_group_sizes(&pool, 5).unwrap();
        assert_eq!((a[&Group::Citizen], a[&Group::Government]), (4, 1));
        assert!(matches!(allocate_group_sizes(&pool, 11), Err(SamplingError::TooMany { .. })));
    }

    fn stance_pool(s: usize, o: usize, n: usize) -> Vec<AgentProfile> {
        let mut v = Vec::new();
        for (count, b) in [(s, 0.6), (o, -0.6), (n, 0.0)] {
            for _ in 0..count {
                let i = v.len();
                let g = Group::ALL[i % 4];
                v.push(agent(&format!("p{i:03}"), g, ["parent", "teacher", "nurse"][i % 3], "", Some(b)));
            }
        }
        v
    }

    #[test]
    fn full_pool_for_every_strategy() {
        let pool = stance_pool(17, 14, 12);
        let graph = build_network(&pool, "x", &NetworkConfig::default()).unwrap().graph;
        for strategy in Strategy::ALL {
            let cfg = SamplingConfig {
                strategy,
                n: pool.len(),
                quota_targets: Some([(Stance::Supportive, 17.0 / 43.0), (Stance::Opposing, 14.0 / 43.0), (Stance::Neutral, 12.0 / 43.0)].into_iter().collect()),
                seeds: vec!["p000".into()],
                ..SamplingConfig::default()
            };
            let c = sample(&pool, &scenario(), &cfg, Some(&graph)).unwrap();
            let set: BTreeSet<_> = c.members.iter().collect();
            assert_eq!(set.len(), pool.len(), "{strategy:?}");
        }
    }

    #[test]
    fn balanced_cohort_counts() {
        let pool = stance_pool(17, 14, 12);
        let b = balanced_cohort(&pool, &scenario()).unwrap();
        assert_eq!(b.len(), 36);
        let pool = stance_pool(1, 1, 1);
        assert_eq!(balanced_cohort(&pool, &scenario()).unwrap().len(), 3);
        let pool = stance_pool(3, 0, 2);
        assert_eq!(balanced_cohort(&pool, &scenario()), Err(SamplingError::MissingStance(Stance::Opposing)));
    }

    #[test]
    fn purposive_takes_unique_privileged_role_first() {
        let mut pool = stance_pool(4, 4, 4);
        pool[7].role = "community organizer".into();
        let cfg = SamplingConfig {
            strategy: Strategy::Purposive,
            n: 3,
            ..SamplingConfig::default()
        };
        let c = sample(&pool, &scenario(), &cfg, None).unwrap();
        assert_eq!(c.members[0], pool[7].id);
    }

    #[test]
    fn snowball_shortfall() {
        let pool = stance_pool(3, 3, 3);
        let cfg = SamplingConfig {
            strategy: Strategy::Snowball,
            n: 5,
            seeds: vec!["p000".into()],
            ..SamplingConfig::default()
        };
        let c = sample(&pool, &scenario(), &cfg, Some(&TrustGraph::new(Vec::new()))).unwrap();
        assert!(c.report.shortfall);
        assert_eq!(c.members, ["p000"]);
    }

    proptest! {
        #[test]
        fn strategies_return_distinct_members(s in 1usize..8, o in 1usize..8, ne in 1usize..8, n in 1usize..30, k in 0usize..7) {
            let pool = stance_pool(s, o, ne);
            let graph = build_network(&pool, "x", &NetworkConfig::default()).unwrap().graph;
            let strategy = Strategy::ALL[k];
            let cfg = SamplingConfig {
                strategy,
                n,
                quota_targets: Some([(Stance::Supportive, 0.5), (Stance::Opposing, 0.25), (Stance::Neutral, 0.25)].into_iter().collect()),
                ..SamplingConfig::default()
            };
            let c = sample(&pool, &scenario(), &cfg, Some(&graph)).unwrap();
            let set: BTreeSet<_> = c.members.iter().collect();
            prop_assert_eq!(set.len(), c.members.len());
            if !c.report.shortfall {
                prop_assert_eq!(c.members.len(), n.min(pool.len()));
            }
            let again = sample(&pool, &scenario(), &cfg, Some(&graph)).unwrap();
            prop_assert_eq!(again.members, c.members);
        }

        #[test]
        fn relevance_in_range(bio in "[a-z ]{0,40}", role in "[a-z ]{0,12}") {
            let p = agent("x", Group::Citizen, &role, &bio, None);
            let r = relevance(&p, &scenario(), 0.15);
            prop_assert!((RELEVANCE_BASE..=1.0).contains(&r));
        }

        #[test]
        fn stratified_close_to_proportional(s in 1usize..15, o in 1usize..15, ne in 1usize..15, frac in 0.05f64..1.0) {
            let pool = stance_pool(s, o, ne);
            let n = ((pool.len() as f64) * frac).ceil() as usize;
            let cfg = SamplingConfig { strategy: Strategy::Stratified, n, ..SamplingConfig::default() };
            let c = sample(&pool, &scenario(), &cfg, None).unwrap();
            for (st, size) in [(Stance::Supportive, s), (Stance::Opposing, o), (Stance::Neutral, ne)] {
                let target = n as f64 * size as f64 / pool.len() as f64;
                let got = c.report.stance_distribution.get(&st).copied().unwrap_or(0) as f64;
                prop_assert!((got - target).abs() < 1.0);
            }
        }
    }
}
