//! Candidate-pool generation: quota allocation, interest assignment under an
//! overlap cap, archetype OCEAN sampling, and the diversity gate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{derive_stance, OceanVector, Stance};
use crate::text::{jaccard, token_set};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("negative proportion {value} for category `{category}`")]
    NegativeProportion { category: String, value: f64 },
    #[error("proportions for `{field}` sum to {sum}, expected 1")]
    ProportionSum { field: String, sum: f64 },
    #[error("no interest set satisfies the overlap cap for agent {agent}")]
    InfeasibleInterests { agent: usize },
    #[error("diversity needs at least 2 profiles, got {0}")]
    TooFewProfiles(usize),
    #[error("profile text provider failed at agent {agent} after {completed} complete profiles: {message}")]
    Provider {
        agent: usize,
        completed: usize,
        message: String,
    },
    #[error("invalid generation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Citizen,
    Government,
    Business,
    Education,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Citizen, Group::Government, Group::Business, Group::Education];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Citizen => "Citizen",
            Group::Government => "Government",
            Group::Business => "Business",
            Group::Education => "Education",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        let s = s.trim().to_ascii_lowercase();
        let s = s.strip_suffix("group").unwrap_or(&s);
        match s {
            "citizen" | "citizens" => Some(Group::Citizen),
            "government" | "govt" => Some(Group::Government),
            "business" => Some(Group::Business),
            "education" | "edu" => Some(Group::Education),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: String,
    pub name: String,
    pub bio: String,
    pub group: Group,
    pub role: String,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    pub interests: BTreeSet<String>,
    pub ocean: OceanVector,
    pub initial_beliefs: BTreeMap<String, f64>,
    pub rationale_cluster: String,
    pub rhetorical_style: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl AgentProfile {
    pub fn explicit_stance(&self) -> Option<Stance> {
        self.metadata.get("stance").and_then(|s| Stance::parse(s))
    }

    pub fn is_kol(&self) -> bool {
        matches!(self.metadata.get("kol").map(String::as_str), Some("true" | "yes" | "1"))
    }

    pub fn mean_belief(&self) -> Option<f64> {
        if self.initial_beliefs.is_empty() {
            None
        } else {
            Some(self.initial_beliefs.values().sum::<f64>() / self.initial_beliefs.len() as f64)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.interests.is_empty() {
            return Err(format!("{}: empty interest set", self.id));
        }
        if !self.ocean.is_valid() {
            return Err(format!("{}: OCEAN outside [0,1]", self.id));
        }
        if let Some((t, v)) = self.initial_beliefs.iter().find(|(_, v)| !(-1.0..=1.0).contains(*v)) {
            return Err(format!("{}: belief {t}={v} outside [-1,1]", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypePrior {
    pub group: Group,
    pub ocean_mu: [f64; 5],
    pub ocean_sigma: [f64; 5],
    pub role_label: String,
    pub trust_priorities: BTreeMap<Group, f64>,
}

/// The four group archetypes with their OCEAN priors and trust priorities.
pub fn default_priors() -> Vec<ArchetypePrior> {
    use Group::*;
    let p = |group, mu, sigma, role: &str, trust: &[(Group, f64)]| ArchetypePrior {
        group,
        ocean_mu: mu,
        ocean_sigma: sigma,
        role_label: role.to_string(),
        trust_priorities: trust.iter().copied().collect(),
    };
    vec![
        p(
            Citizen,
            [0.60, 0.50, 0.50, 0.60, 0.50],
            [0.10, 0.12, 0.12, 0.10, 0.12],
            "Public Forum",
            &[(Education, 0.6), (Government, 0.4)],
        ),
        p(
            Government,
            [0.50, 0.80, 0.40, 0.60, 0.30],
            [0.08, 0.08, 0.10, 0.08, 0.08],
            "Policy Maker",
            &[(Business, 0.5), (Education, 0.5)],
        ),
        p(
            Business,
            [0.50, 0.70, 0.50, 0.50, 0.40],
            [0.10, 0.10, 0.10, 0.10, 0.10],
            "Business",
            &[(Government, 0.6)],
        ),
        p(
            Education,
            [0.70, 0.60, 0.50, 0.60, 0.40],
            [0.08, 0.10, 0.10, 0.08, 0.10],
            "Research",
            &[(Government, 0.5), (Citizen, 0.6)],
        ),
    ]
}

pub fn prior_for(priors: &[ArchetypePrior], group: Group) -> Option<&ArchetypePrior> {
    priors.iter().find(|p| p.group == group)
}

const SUM_TOLERANCE: f64 = 1e-9;
const REMAINDER_TIE: f64 = 1e-9;

/// Largest-remainder integer allocation of `n` over `proportions`.
///
/// Leftover units go to the largest fractional remainders; equal remainders
/// prefer the larger proportion, then the earlier category.
pub fn allocate_counts<K: Clone + fmt::Debug>(n: usize, proportions: &[(K, f64)]) -> Result<Vec<(K, usize)>, ProfileError> {
    for (k, p) in proportions {
        if *p < 0.0 || !p.is_finite() {
            return Err(ProfileError::NegativeProportion {
                category: format!("{k:?}"),
                value: *p,
            });
        }
    }
    if proportions.is_empty() {
        return if n == 0 {
            Ok(Vec::new())
        } else {
            Err(ProfileError::ProportionSum {
                field: "(empty)".into(),
                sum: 0.0,
            })
        };
    }
    let sum: f64 = proportions.iter().map(|(_, p)| p).sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(ProfileError::ProportionSum {
            field: format!("{:?}", proportions.iter().map(|(k, _)| k).collect::<Vec<_>>()),
            sum,
        });
    }
    let quotas: Vec<f64> = proportions.iter().map(|(_, p)| n as f64 * p).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        if (ra - rb).abs() > REMAINDER_TIE {
            rb.total_cmp(&ra)
        } else {
            proportions[b].1.total_cmp(&proportions[a].1).then(a.cmp(&b))
        }
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(proportions.iter().map(|(k, _)| k.clone()).zip(counts).collect())
}

/// One OCEAN draw from a group prior, clipped to `clip`.
pub fn sample_ocean<R: Rng + ?Sized>(prior: &ArchetypePrior, clip: (f64, f64), rng: &mut R) -> OceanVector {
    let mut v = [0.0; 5];
    for (k, slot) in v.iter_mut().enumerate() {
        let (mu, sigma) = (prior.ocean_mu[k], prior.ocean_sigma[k]);
        let x = match Normal::new(mu, sigma) {
            Ok(n) if sigma > 0.0 => n.sample(rng),
            _ => mu,
        };
        *slot = x.clamp(clip.0, clip.1);
    }
    OceanVector::from_array(v)
}

const SEARCH_BUDGET: usize = 200_000;

/// `n` interest sets of size `per_agent` with pairwise overlap at most `kappa`.
///
/// Agents are filled in order; each takes the first admissible combination in
/// a seeded topic order.
pub fn assign_interests<R: Rng + ?Sized>(
    topics: &[String],
    n: usize,
    per_agent: usize,
    kappa: usize,
    rng: &mut R,
) -> Result<Vec<BTreeSet<String>>, ProfileError> {
    let mut out: Vec<BTreeSet<usize>> = Vec::with_capacity(n);
    for agent in 0..n {
        if per_agent > topics.len() {
            return Err(ProfileError::InfeasibleInterests { agent });
        }
        let mut order: Vec<usize> = (0..topics.len()).collect();
        order.shuffle(rng);
        let mut chosen = Vec::with_capacity(per_agent);
        let mut budget = SEARCH_BUDGET;
        if !search_interests(&order, 0, per_agent, kappa, &out, &mut chosen, &mut budget) {
            return Err(ProfileError::InfeasibleInterests { agent });
        }
        out.push(chosen.into_iter().collect());
    }
    Ok(out
        .into_iter()
        .map(|s| s.into_iter().map(|i| topics[i].clone()).collect())
        .collect())
}

fn search_interests(
    order: &[usize],
    from: usize,
    need: usize,
    kappa: usize,
    taken: &[BTreeSet<usize>],
    chosen: &mut Vec<usize>,
    budget: &mut usize,
) -> bool {
    if chosen.len() == need {
        return true;
    }
    for pos in from..order.len() {
        if order.len() - pos < need - chosen.len() || *budget == 0 {
            return false;
        }
        *budget -= 1;
        let t = order[pos];
        let fits = taken.iter().all(|prev| {
            let shared = chosen.iter().filter(|c| prev.contains(c)).count() + usize::from(prev.contains(&t));
            shared <= kappa
        });
        if fits {
            chosen.push(t);
            if search_interests(order, pos + 1, need, kappa, taken, chosen, budget) {
                return true;
            }
            chosen.pop();
        }
    }
    false
}

fn unique_fraction<'a, I: Iterator<Item = &'a str>>(values: I, n: usize) -> f64 {
    let distinct: BTreeSet<&str> = values.collect();
    distinct.len() as f64 / n as f64
}

/// Weighted profile diversity in `[0, 1]`.
pub fn diversity_score(profiles: &[AgentProfile]) -> Result<f64, ProfileError> {
    let n = profiles.len();
    if n < 2 {
        return Err(ProfileError::TooFewProfiles(n));
    }
    let u_name = unique_fraction(profiles.iter().map(|p| p.name.as_str()), n);
    let u_bio = unique_fraction(profiles.iter().map(|p| p.bio.as_str()), n);
    let bios: Vec<BTreeSet<String>> = profiles.iter().map(|p| token_set(&p.bio)).collect();
    let (mut overlap, mut jac, mut pairs) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            overlap += profiles[i].interests.intersection(&profiles[j].interests).count() as f64;
            jac += jaccard(&bios[i], &bios[j]);
            pairs += 1.0;
        }
    }
    let mean_overlap = overlap / pairs;
    let mean_jac = jac / pairs;
    let d = 0.28 * u_name + 0.32 * u_bio + 0.20 * (1.0 - (mean_overlap / 3.0).min(1.0)) + 0.20 * (1.0 - mean_jac);
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub pool_size: usize,
    pub group_proportions: BTreeMap<Group, f64>,
    pub stance_proportions: BTreeMap<Stance, f64>,
    pub demographic_targets: BTreeMap<String, BTreeMap<String, f64>>,
    pub belief_topics: Vec<String>,
    pub interest_topics: Vec<String>,
    pub interests_per_agent: usize,
    pub kappa: usize,
    pub diversity_floor: f64,
    pub retry_budget: u32,
    pub seed: u64,
    pub clip_bounds: (f64, f64),
    pub case: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            pool_size: 43,
            group_proportions: [
                (Group::Citizen, 34.0 / 43.0),
                (Group::Government, 3.0 / 43.0),
                (Group::Business, 3.0 / 43.0),
                (Group::Education, 3.0 / 43.0),
            ]
            .into_iter()
            .collect(),
            stance_proportions: [(Stance::Supportive, 1.0 / 3.0), (Stance::Neutral, 1.0 / 3.0), (Stance::Opposing, 1.0 / 3.0)]
                .into_iter()
                .collect(),
            demographic_targets: [(
                "age_band".to_string(),
                [("18-29", 0.25), ("30-44", 0.30), ("45-64", 0.30), ("65+", 0.15)]
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect(),
            )]
            .into_iter()
            .collect(),
            belief_topics: vec!["policy".to_string()],
            interest_topics: INTEREST_LEXICON.iter().map(|s| s.to_string()).collect(),
            interests_per_agent: 3,
            kappa: 1,
            diversity_floor: 0.75,
            retry_budget: 5,
            seed: 7,
            clip_bounds: (0.02, 0.98),
            case: "default".to_string(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let check = |field: &str, sum: f64| {
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                Err(ProfileError::ProportionSum {
                    field: field.to_string(),
                    sum,
                })
            } else {
                Ok(())
            }
        };
        check("group", self.group_proportions.values().sum())?;
        check("stance", self.stance_proportions.values().sum())?;
        for (field, cats) in &self.demographic_targets {
            check(field, cats.values().sum())?;
        }
        if self.belief_topics.is_empty() {
            return Err(ProfileError::Config("belief_topics is empty".into()));
        }
        if self.interests_per_agent == 0 {
            return Err(ProfileError::Config("interests_per_agent must be positive".into()));
        }
        let (lo, hi) = self.clip_bounds;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(ProfileError::Config(format!("clip_bounds ({lo}, {hi})")));
        }
        if !(0.0..=1.0).contains(&self.diversity_floor) {
            return Err(ProfileError::Config("diversity_floor outside [0,1]".into()));
        }
        Ok(())
    }
}

/// Everything fixed about an agent before its name and bio are written.
#[derive(Debug, Clone)]
pub struct TextRequest<'a> {
    pub index: usize,
    pub round: u32,
    pub attempt: u32,
    pub group: Group,
    pub role: &'a str,
    pub stance: Stance,
    pub interests: &'a BTreeSet<String>,
    pub rationale: &'a str,
    pub demographics: &'a BTreeMap<String, String>,
    pub case: &'a str,
}

/// Source of profile names and biographies.
pub trait ProfileTextProvider {
    fn name(&self, req: &TextRequest<'_>) -> Result<String, String>;
    fn bio(&self, req: &TextRequest<'_>) -> Result<String, String>;
}

/// Seeded word-table synthesis; needs no external service.
#[derive(Debug, Clone, Copy)]
pub struct TemplateTextProvider {
    pub seed: u64,
}

const FIRST_NAMES: &[&str] = &[
    "Ada", "Bilal", "Carmen", "Dmitri", "Elena", "Farah", "Gideon", "Hana", "Ibrahim", "Jolene", "Kenji", "Lucia",
    "Marcus", "Nadia", "Oren", "Priya", "Quinn", "Rosa", "Samuel", "Tamsin", "Umar", "Vera", "Wesley", "Ximena",
    "Yusuf", "Zoe", "Aurelio", "Bethany", "Cyrus", "Delphine", "Emeka", "Freya", "Gustavo", "Hollis", "Imogen",
    "Jasper", "Keziah", "Leopold", "Maren", "Nikhil",
];
const LAST_NAMES: &[&str] = &[
    "Abernathy", "Bianchi", "Castellanos", "Dubois", "Eriksen", "Fitzgerald", "Gallagher", "Haddad", "Iwasaki",
    "Jablonski", "Kowalczyk", "Lindqvist", "Mbeki", "Nakamura", "Okafor", "Petrov", "Quintero", "Rasmussen",
    "Szabo", "Tanaka", "Underwood", "Valdez", "Whitaker", "Xu", "Yilmaz", "Zielinski", "Albrecht", "Brennan",
    "Cavanagh", "Delacroix", "Esposito", "Fonseca", "Grimaldi", "Holloway", "Ivanova", "Jovanovic", "Kaminski",
    "Lombardi", "Moreau", "Novak",
];
const PLACES: &[&str] = &[
    "a river town", "the inner suburbs", "a farming county", "a coastal city", "a mining region", "the state capital",
    "a college town", "a border district", "an industrial port", "a mountain village", "a commuter belt",
    "a fast-growing exurb",
];
const VERBS: &[&str] = &[
    "spends weekends on", "writes a small newsletter about", "volunteers around", "keeps arguing about",
    "reads everything on", "has organized meetups on", "got pulled into debates on", "quietly follows",
    "runs a podcast touching on", "collects local stories about",
];
const CLOSERS: &[&str] = &[
    "Distrusts slogans.", "Prefers long conversations to hot takes.", "Changes their mind rarely but loudly.",
    "Keeps receipts on every promise.", "Asks who pays before anything else.", "Trusts neighbours over headlines.",
    "Reads the fine print twice.", "Likes a good fight about details.", "Wants results, not speeches.",
    "Is tired of being talked down to.", "Remembers how things used to work.", "Worries about the next generation.",
];

pub const INTEREST_LEXICON: &[&str] = &[
    "healthcare", "education", "housing", "climate", "jobs", "taxes", "immigration", "policing", "courts",
    "religion", "family", "privacy", "technology", "energy", "agriculture", "transport", "veterans", "childcare",
    "elections", "media", "science", "arts", "sports", "small_business", "trade", "unions", "pensions",
    "disability", "mental_health", "public_safety", "water", "rural_life", "urban_renewal", "tourism", "finance",
    "startups", "faith_community", "womens_health", "civil_liberties", "local_history",
];

fn roles_for(group: Group) -> &'static [&'static str] {
    match group {
        Group::Citizen => &[
            "parent", "nurse", "retail worker", "retiree", "student", "community organizer", "truck driver",
            "church volunteer", "freelance designer", "union member",
        ],
        Group::Government => &["policy analyst", "state legislator", "city official", "regulator", "public health officer"],
        Group::Business => &["small business owner", "executive", "industry broker", "startup founder", "trade association lead"],
        Group::Education => &["professor", "policy expert", "school principal", "researcher", "teacher"],
    }
}

fn rationales_for(group: Group) -> &'static [&'static str] {
    match group {
        Group::Citizen => &["bodily_autonomy", "religious_conviction", "family_cost", "personal_freedom", "community_safety"],
        Group::Government => &["legal_precedent", "electoral_mandate", "federalism", "public_order"],
        Group::Business => &["workforce_impact", "market_stability", "regulatory_cost", "talent_retention"],
        Group::Education => &["empirical_evidence", "public_health_data", "student_wellbeing", "historical_context"],
    }
}

const STYLES: &[&str] = &["anecdotal", "legalistic", "data-driven", "moral appeal", "sarcastic", "pragmatic", "urgent"];

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

impl TemplateTextProvider {
    fn rng(&self, req: &TextRequest<'_>, salt: u64) -> ChaCha8Rng {
        let s = self.seed
            ^ (req.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ u64::from(req.round).wrapping_mul(0xbf58_476d_1ce4_e5b9)
            ^ u64::from(req.attempt).wrapping_mul(0x94d0_49bb_1331_11eb)
            ^ salt;
        ChaCha8Rng::seed_from_u64(s)
    }
}

impl ProfileTextProvider for TemplateTextProvider {
    fn name(&self, req: &TextRequest<'_>) -> Result<String, String> {
        let mut rng = self.rng(req, 1);
        Ok(format!("{} {}", pick(&mut rng, FIRST_NAMES), pick(&mut rng, LAST_NAMES)))
    }

    fn bio(&self, req: &TextRequest<'_>) -> Result<String, String> {
        let mut rng = self.rng(req, 2);
        let interests: Vec<String> = req.interests.iter().map(|i| i.replace('_', " ")).collect();
        let focus = match interests.as_slice() {
            [] => "public affairs".to_string(),
            [one] => one.clone(),
            [init @ .., last] => format!("{} and {}", init.join(", "), last),
        };
        let age = req.demographics.get("age_band").map(|a| format!(" ({a})")).unwrap_or_default();
        Ok(format!(
            "A {}{} from {} who {} {}. Leans on {} when the {} debate heats up. {}",
            req.role,
            age,
            pick(&mut rng, PLACES),
            pick(&mut rng, VERBS),
            focus,
            req.rationale.replace('_', " "),
            req.case.replace('_', " "),
            pick(&mut rng, CLOSERS),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPool {
    pub profiles: Vec<AgentProfile>,
    pub diversity: f64,
    pub rounds: u32,
    /// Set when no round reached `diversity_floor`; `profiles` is the best round.
    pub below_floor: bool,
}

fn stance_band<R: Rng + ?Sized>(stance: Stance, rng: &mut R) -> f64 {
    match stance {
        Stance::Supportive => rng.random_range(0.35..=0.9),
        Stance::Neutral => rng.random_range(-0.2..=0.2),
        Stance::Opposing => rng.random_range(-0.9..=-0.35),
    }
}

fn expand<K: Clone>(counts: Vec<(K, usize)>) -> Vec<K> {
    counts.into_iter().flat_map(|(k, n)| std::iter::repeat_n(k, n)).collect()
}

pub fn agent_id(index: usize) -> String {
    format!("a{index:04}")
}

/// Generates the candidate pool. Non-text attributes are drawn once; names
/// and bios are regenerated for up to `retry_budget` rounds until the
/// diversity floor is met.
pub fn generate_pool(
    cfg: &GenerationConfig,
    priors: &[ArchetypePrior],
    provider: &dyn ProfileTextProvider,
) -> Result<GeneratedPool, ProfileError> {
    cfg.validate()?;
    let n = cfg.pool_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let groups = expand(allocate_counts(n, &cfg.group_proportions.iter().map(|(g, p)| (*g, *p)).collect::<Vec<_>>())?);
    let mut stances = expand(allocate_counts(n, &cfg.stance_proportions.iter().map(|(s, p)| (*s, *p)).collect::<Vec<_>>())?);
    stances.shuffle(&mut rng);
    let mut demographics = vec![BTreeMap::new(); n];
    for (field, cats) in &cfg.demographic_targets {
        let mut values = expand(allocate_counts(n, &cats.iter().map(|(c, p)| (c.clone(), *p)).collect::<Vec<_>>())?);
        values.shuffle(&mut rng);
        for (d, v) in demographics.iter_mut().zip(values) {
            d.insert(field.clone(), v);
        }
    }
    let interests = assign_interests(&cfg.interest_topics, n, cfg.interests_per_agent, cfg.kappa, &mut rng)?;

    let mut skeletons = Vec::with_capacity(n);
    for i in 0..n {
        let group = groups[i];
        let prior = prior_for(priors, group).ok_or_else(|| ProfileError::Config(format!("no archetype prior for {group}")))?;
        let ocean = sample_ocean(prior, cfg.clip_bounds, &mut rng);
        let stance = stances[i];
        let beliefs: BTreeMap<String, f64> = cfg
            .belief_topics
            .iter()
            .map(|t| (t.clone(), stance_band(stance, &mut rng)))
            .collect();
        let role = pick(&mut rng, roles_for(group)).to_string();
        let rationale = pick(&mut rng, rationales_for(group)).to_string();
        let style = pick(&mut rng, STYLES).to_string();
        let mut metadata = BTreeMap::new();
        metadata.insert("stance".to_string(), stance.as_str().to_string());
        metadata.insert("archetype_role".to_string(), prior.role_label.clone());
        skeletons.push(AgentProfile {
            id: agent_id(i),
            name: String::new(),
            bio: String::new(),
            group,
            role,
            demographics: demographics[i].clone(),
            interests: interests[i].clone(),
            ocean,
            initial_beliefs: beliefs,
            rationale_cluster: rationale,
            rhetorical_style: style,
            metadata,
        });
    }

    let rounds = cfg.retry_budget.max(1);
    let mut best: Option<(Vec<AgentProfile>, f64)> = None;
    let mut used = 0;
    for round in 0..rounds {
        used = round + 1;
        let pool = write_texts(&skeletons, round, &cfg.case, provider)?;
        let d = if pool.len() >= 2 { diversity_score(&pool)? } else { 1.0 };
        if best.as_ref().is_none_or(|(_, bd)| d > *bd) {
            best = Some((pool, d));
        }
        if d >= cfg.diversity_floor {
            break;
        }
    }
    let (profiles, diversity) = best.expect("at least one round");
    let below_floor = diversity < cfg.diversity_floor;
    if below_floor {
        tracing::warn!(diversity, floor = cfg.diversity_floor, "profile pool below diversity floor");
    }
    Ok(GeneratedPool {
        profiles,
        diversity,
        rounds: used,
        below_floor,
    })
}

const UNIQUE_ATTEMPTS: u32 = 3;

fn write_texts(
    skeletons: &[AgentProfile],
    round: u32,
    case: &str,
    provider: &dyn ProfileTextProvider,
) -> Result<Vec<AgentProfile>, ProfileError> {
    let mut names = BTreeSet::new();
    let mut bios = BTreeSet::new();
    let mut out = Vec::with_capacity(skeletons.len());
    for (i, s) in skeletons.iter().enumerate() {
        let fail = |message: String| ProfileError::Provider {
            agent: i,
            completed: i,
            message,
        };
        let mut name = String::new();
        let mut bio = String::new();
        for attempt in 0..UNIQUE_ATTEMPTS {
            let req = TextRequest {
                index: i,
                round,
                attempt,
                group: s.group,
                role: &s.role,
                stance: s.explicit_stance().unwrap_or_else(|| derive_stance(s.mean_belief().unwrap_or(0.0))),
                interests: &s.interests,
                rationale: &s.rationale_cluster,
                demographics: &s.demographics,
                case,
            };
            if name.is_empty() || names.contains(&name) {
                name = provider.name(&req).map_err(fail)?;
            }
            if bio.is_empty() || bios.contains(&bio) {
                bio = provider.bio(&req).map_err(fail)?;
            }
            if !names.contains(&name) && !bios.contains(&bio) {
                break;
            }
        }
        if names.contains(&name) {
            name = format!("{name} {}", i + 1);
        }
        if bios.contains(&bio) {
            bio = format!("{bio} (profile {})", i + 1);
        }
        names.insert(name.clone());
        bios.insert(bio.clone());
        out.push(AgentProfile {
            name,
            bio,
            ..s.clone()
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn largest_remainder_examples() {
        let got = allocate_counts(10, &[("a", 0.5), ("b", 0.3), ("c", 0.2)]).unwrap();
        assert_eq!(got, vec![("a", 5), ("b", 3), ("c", 2)]);
        let third = 1.0 / 3.0;
        let got = allocate_counts(7, &[("a", third), ("b", third), ("c", third)]).unwrap();
        assert_eq!(got, vec![("a", 3), ("b", 2), ("c", 2)]);
        let got = allocate_counts(5, &[("x", 0.7), ("y", 0.3)]).unwrap();
        assert_eq!(got, vec![("x", 4), ("y", 1)]);
        assert!(matches!(
            allocate_counts(5, &[("x", 1.2), ("y", -0.2)]),
            Err(ProfileError::NegativeProportion { .. })
        ));
        assert!(allocate_counts(5, &[("x", 0.5)]).is_err());
    }

    #[test]
    fn case_study_group_split() {
        let cfg = GenerationConfig::default();
        let props: Vec<_> = cfg.group_proportions.iter().map(|(g, p)| (*g, *p)).collect();
        let got = allocate_counts(43, &props).unwrap();
        assert_eq!(
            got,
            vec![(Group::Citizen, 34), (Group::Government, 3), (Group::Business, 3), (Group::Education, 3)]
        );
    }

    #[test]
    fn degenerate_prior_returns_mean() {
        let prior = ArchetypePrior {
            group: Group::Citizen,
            ocean_mu: [0.1, 0.99, 0.5, 0.0, 0.3],
            ocean_sigma: [0.0; 5],
            role_label: String::new(),
            trust_priorities: BTreeMap::new(),
        };
        let o = sample_ocean(&prior, (0.02, 0.98), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(o.to_array(), [0.1, 0.98, 0.5, 0.02, 0.3]);
    }

    #[test]
    fn table_priors() {
        let priors = default_priors();
        let citizen = prior_for(&priors, Group::Citizen).unwrap();
        assert_eq!((citizen.ocean_mu[0], citizen.ocean_sigma[0]), (0.60, 0.10));
        let gov = prior_for(&priors, Group::Government).unwrap();
        assert_eq!((gov.ocean_mu[1], gov.ocean_sigma[1]), (0.80, 0.08));
    }

    #[test]
    fn government_conscientiousness_monte_carlo() {
        let priors = default_priors();
        let gov = prior_for(&priors, Group::Government).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mean = (0..n).map(|_| sample_ocean(gov, (0.02, 0.98), &mut rng).conscientiousness).sum::<f64>() / n as f64;
        assert!((mean - 0.8).abs() < 0.01, "mean {mean}");
    }

    fn topics(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn interests_unconstrained_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sets = assign_interests(&topics(5), 6, 2, 2, &mut rng).unwrap();
        assert!(sets.iter().all(|s| s.len() == 2));

        let sets = assign_interests(&topics(4), 2, 2, 0, &mut rng).unwrap();
        assert!(sets[0].is_disjoint(&sets[1]));
        let all: BTreeSet<_> = sets.iter().flatten().collect();
        assert_eq!(all.len(), 4);

        let err = assign_interests(&topics(3), 3, 2, 0, &mut rng).unwrap_err();
        assert_eq!(err, ProfileError::InfeasibleInterests { agent: 1 });
    }

    fn bare(name: &str, bio: &str, interests: &[&str]) -> AgentProfile {
        AgentProfile {
            id: name.to_string(),
            name: name.to_string(),
            bio: bio.to_string(),
            group: Group::Citizen,
            role: "parent".into(),
            demographics: BTreeMap::new(),
            interests: interests.iter().map(|s| s.to_string()).collect(),
            ocean: OceanVector::default(),
            initial_beliefs: BTreeMap::new(),
            rationale_cluster: "x".into(),
            rhetorical_style: "y".into(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn diversity_examples() {
        let ps = vec![bare("a", "red fox", &["x"]), bare("b", "blue whale", &["y"])];
        assert!((diversity_score(&ps).unwrap() - 1.0).abs() < 1e-12);

        let ps = vec![bare("a", "same bio", &["x", "y"]), bare("a", "same bio", &["x", "y"])];
        let expect = 0.28 * 0.5 + 0.32 * 0.5 + 0.20 * (1.0 - (2.0f64 / 3.0).min(1.0)) + 0.0;
        assert!((diversity_score(&ps).unwrap() - expect).abs() < 1e-12);

        let ps = vec![bare("a", "p", &["x", "y", "z"]), bare("b", "q", &["x", "y", "z"])];
        // third term saturates at zero; bios disjoint
        assert!((diversity_score(&ps).unwrap() - 0.80).abs() < 1e-12);

        assert!(matches!(diversity_score(&ps[..1]), Err(ProfileError::TooFewProfiles(1))));
    }

    fn case_study_cfg() -> GenerationConfig {
        GenerationConfig {
            belief_topics: vec!["abortion_rights".into(), "bodily_autonomy".into()],
            case: "roe_v_wade".into(),
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn generated_pool_properties() {
        let cfg = case_study_cfg();
        let provider = TemplateTextProvider { seed: 1 };
        let pool = generate_pool(&cfg, &default_priors(), &provider).unwrap();
        let ps = &pool.profiles;
        assert_eq!(ps.len(), 43);
        let count = |g| ps.iter().filter(|p| p.group == g).count();
        assert_eq!(
            [count(Group::Citizen), count(Group::Government), count(Group::Business), count(Group::Education)],
            [34, 3, 3, 3]
        );
        for i in 0..ps.len() {
            assert!(ps[i].validate().is_ok());
            let o = ps[i].ocean.to_array();
            assert!(o.iter().all(|v| (0.02..=0.98).contains(v)));
            for j in (i + 1)..ps.len() {
                assert!(ps[i].interests.intersection(&ps[j].interests).count() <= cfg.kappa);
            }
        }
        let names: BTreeSet<_> = ps.iter().map(|p| &p.name).collect();
        let bios: BTreeSet<_> = ps.iter().map(|p| &p.bio).collect();
        assert_eq!((names.len(), bios.len()), (43, 43));
        for p in ps {
            let s = p.explicit_stance().unwrap();
            assert_eq!(derive_stance(p.mean_belief().unwrap()), s);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = case_study_cfg();
        let provider = TemplateTextProvider { seed: 9 };
        let a = generate_pool(&cfg, &default_priors(), &provider).unwrap();
        let b = generate_pool(&cfg, &default_priors(), &provider).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    struct FixedBio;
    impl ProfileTextProvider for FixedBio {
        fn name(&self, req: &TextRequest<'_>) -> Result<String, String> {
            Ok(format!("Person {}", req.index))
        }
        fn bio(&self, _: &TextRequest<'_>) -> Result<String, String> {
            Ok("Same story told again".into())
        }
    }

    #[test]
    fn unreachable_floor_returns_best_with_flag() {
        let cfg = GenerationConfig {
            pool_size: 8,
            diversity_floor: 1.0,
            ..case_study_cfg()
        };
        let pool = generate_pool(&cfg, &default_priors(), &FixedBio).unwrap();
        assert!(pool.below_floor);
        assert_eq!(pool.rounds, cfg.retry_budget);
        assert_eq!(pool.profiles.len(), 8);
    }

    struct Failing;
    impl ProfileTextProvider for Failing {
        fn name(&self, req: &TextRequest<'_>) -> Result<String, String> {
            if req.index == 3 {
                Err("quota exceeded".into())
            } else {
                Ok(format!("n{}", req.index))
            }
        }
        fn bio(&self, req: &TextRequest<'_>) -> Result<String, String> {
            Ok(format!("b{}", req.index))
        }
    }

    #[test]
    fn provider_failure_reports_progress() {
        let cfg = GenerationConfig {
            pool_size: 6,
            ..case_study_cfg()
        };
        let err = generate_pool(&cfg, &default_priors(), &Failing).unwrap_err();
        assert!(matches!(err, ProfileError::Provider { agent: 3, completed: 3, .. }));
    }

    proptest! {
        #[test]
        fn allocation_conserves(n in 0usize..500, raw in prop::collection::vec(0.0f64..1.0, 1..8)) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-6);
            let props: Vec<(usize, f64)> = raw.iter().enumerate().map(|(i, p)| (i, p / sum)).collect();
            let got = allocate_counts(n, &props).unwrap();
            prop_assert_eq!(got.iter().map(|(_, c)| c).sum::<usize>(), n);
            for ((_, c), (_, p)) in got.iter().zip(&props) {
                prop_assert!((*c as f64 - n as f64 * p).abs() < 1.0);
            }
        }
    }
}
