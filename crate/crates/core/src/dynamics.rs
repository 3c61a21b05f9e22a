//! Belief state and the anchored update rule.
//!
//! Every agent holds one scalar opinion per topic in `[-1, 1]`. A tick moves
//! it by a convex mix of the agent's own belief, a homophily-gated social
//! term read from the tick-start snapshot, and a pull toward a memory anchor:
//!
//! ```text
//! b' = clip((1 - rho) * ((1 - lambda) * b + lambda * S) + rho * m, -1, 1)
//! ```
//!
//! `rho` (anchoring strength) comes from the agent's Big Five profile through
//! a logistic map; `lambda` (susceptibility) from a configurable policy.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scores strictly above this are supportive, strictly below its negation opposing.
pub const STANCE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("rho_min ({min}) must be below rho_max ({max})")]
    RhoBounds { min: f64, max: f64 },
    #[error("openness coefficient must be negative, got {0}")]
    OpennessSign(f64),
    #[error("conscientiousness coefficient must be positive, got {0}")]
    ConscientiousnessSign(f64),
    #[error("{field} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("epsilon must be a small positive number, got {0}")]
    Epsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stance {
    Supportive,
    Neutral,
    Opposing,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Supportive, Stance::Neutral, Stance::Opposing];

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Supportive => "Supportive",
            Stance::Neutral => "Neutral",
            Stance::Opposing => "Opposing",
        }
    }

    pub fn parse(s: &str) -> Option<Stance> {
        match s.trim().to_ascii_lowercase().as_str() {
            "supportive" | "support" | "pro" => Some(Stance::Supportive),
            "neutral" => Some(Stance::Neutral),
            "opposing" | "oppose" | "against" | "con" => Some(Stance::Opposing),
            _ => None,
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a score onto the three stance labels using strict `±0.25` thresholds.
pub fn derive_stance(score: f64) -> Stance {
    if score > STANCE_THRESHOLD {
        Stance::Supportive
    } else if score < -STANCE_THRESHOLD {
        Stance::Opposing
    } else {
        Stance::Neutral
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub topic: String,
    pub score: f64,
    pub stance: Stance,
}

impl Belief {
    /// Belief whose stance is derived from the (clipped) score.
    pub fn new(topic: impl Into<String>, score: f64) -> Self {
        let score = clip_unit(score);
        Belief {
            topic: topic.into(),
            score,
            stance: derive_stance(score),
        }
    }

    /// Belief with an explicit stance label that need not agree with the score.
    pub fn labelled(topic: impl Into<String>, score: f64, stance: Stance) -> Self {
        Belief {
            topic: topic.into(),
            score: clip_unit(score),
            stance,
        }
    }

    pub fn set_score(&mut self, score: f64) {
        self.score = clip_unit(score);
        self.stance = derive_stance(self.score);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OceanVector {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

impl OceanVector {
    pub const TRAITS: [&'static str; 5] = [
        "openness",
        "conscientiousness",
        "extraversion",
        "agreeableness",
        "neuroticism",
    ];

    pub fn new(o: f64, c: f64, e: f64, a: f64, n: f64) -> Self {
        OceanVector {
            openness: o,
            conscientiousness: c,
            extraversion: e,
            agreeableness: a,
            neuroticism: n,
        }
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        OceanVector::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.openness,
            self.conscientiousness,
            self.extraversion,
            self.agreeableness,
            self.neuroticism,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl Default for OceanVector {
    fn default() -> Self {
        OceanVector::new(0.5, 0.5, 0.5, 0.5, 0.5)
    }
}

/// Logistic-map coefficients for anchoring strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gamma {
    pub bias: f64,
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

impl Default for Gamma {
    fn default() -> Self {
        Gamma {
            bias: 0.0,
            openness: -1.5,
            conscientiousness: 1.0,
            extraversion: -0.25,
            agreeableness: -0.5,
            neuroticism: 0.5,
        }
    }
}

impl Gamma {
    fn linear(&self, ocean: &OceanVector) -> f64 {
        self.bias
            + self.openness * ocean.openness
            + self.conscientiousness * ocean.conscientiousness
            + self.extraversion * ocean.extraversion
            + self.agreeableness * ocean.agreeableness
            + self.neuroticism * ocean.neuroticism
    }
}

/// How each agent's anchoring strength is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum RhoPolicy {
    /// Logistic map of the agent's OCEAN traits into `[rho_min, rho_max]`.
    Ocean,
    /// Same value for every agent, in `[0, 1]`. `Constant(0.0)` disables anchoring.
    Constant(f64),
}

/// How each agent's susceptibility is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LambdaPolicy {
    Constant {
        value: f64,
    },
    /// `clip(base + openness*O + agreeableness*A + conscientiousness*C, 0.05, 0.90)`
    Ocean {
        base: f64,
        openness: f64,
        agreeableness: f64,
        conscientiousness: f64,
    },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Ocean {
            base: 0.2,
            openness: 0.5,
            agreeableness: 0.2,
            conscientiousness: -0.2,
        }
    }
}

pub const LAMBDA_FLOOR: f64 = 0.05;
pub const LAMBDA_CEIL: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorStrategy {
    Ema,
    Retrieval,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub rho_min: f64,
    pub rho_max: f64,
    pub gamma: Gamma,
    pub rho_policy: RhoPolicy,
    pub theta_bc: f64,
    pub lambda_policy: LambdaPolicy,
    pub epsilon: f64,
    pub anchor_strategy: AnchorStrategy,
    pub ema_alpha: f64,
    pub hybrid_weight: f64,
    /// Forces the homophily factor to 1 for every neighbor (classical
    /// DeGroot / Friedkin-Johnsen limits).
    pub homophily_bypass: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            rho_min: 0.05,
            rho_max: 0.5,
            gamma: Gamma::default(),
            rho_policy: RhoPolicy::Ocean,
            theta_bc: 0.6,
            lambda_policy: LambdaPolicy::default(),
            epsilon: 1e-9,
            anchor_strategy: AnchorStrategy::Ema,
            ema_alpha: 0.9,
            hybrid_weight: 0.5,
            homophily_bypass: false,
        }
    }
}

fn check_range(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), ConfigError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { field, value, lo, hi })
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rho_min < self.rho_max) {
            return Err(ConfigError::RhoBounds {
                min: self.rho_min,
                max: self.rho_max,
            });
        }
        check_range("rho_min", self.rho_min, 0.0, 1.0)?;
        check_range("rho_max", self.rho_max, 0.0, 1.0)?;
        if !(self.gamma.openness < 0.0) {
            return Err(ConfigError::OpennessSign(self.gamma.openness));
        }
        if !(self.gamma.conscientiousness > 0.0) {
            return Err(ConfigError::ConscientiousnessSign(self.gamma.conscientiousness));
        }
        check_range("theta_bc", self.theta_bc, 0.0, 2.0)?;
        check_range("ema_alpha", self.ema_alpha, 0.0, 1.0)?;
        check_range("hybrid_weight", self.hybrid_weight, 0.0, 1.0)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(ConfigError::Epsilon(self.epsilon));
        }
        if let RhoPolicy::Constant(v) = self.rho_policy {
            check_range("rho_policy.value", v, 0.0, 1.0)?;
        }
        if let LambdaPolicy::Constant { value } = self.lambda_policy {
            check_range("lambda_policy.value", value, 0.0, 1.0)?;
        }
        Ok(())
    }

    /// Anchoring strength for an agent under the configured policy.
    pub fn rho_for(&self, ocean: &OceanVector) -> Result<f64, ConfigError> {
        match self.rho_policy {
            RhoPolicy::Ocean => rho_from_ocean(ocean, self),
            RhoPolicy::Constant(v) => Ok(v),
        }
    }

    /// Clamp range that `rho` must stay in after calibration scaling.
    pub fn rho_domain(&self) -> (f64, f64) {
        match self.rho_policy {
            RhoPolicy::Ocean => (self.rho_min, self.rho_max),
            RhoPolicy::Constant(_) => (0.0, 1.0),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn clip_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Anchoring strength from Big Five traits.
pub fn rho_from_ocean(ocean: &OceanVector, cfg: &DynamicsConfig) -> Result<f64, ConfigError> {
    if !(cfg.gamma.openness < 0.0) {
        return Err(ConfigError::OpennessSign(cfg.gamma.openness));
    }
    if !(cfg.gamma.conscientiousness > 0.0) {
        return Err(ConfigError::ConscientiousnessSign(cfg.gamma.conscientiousness));
    }
    if !(cfg.rho_min < cfg.rho_max) {
        return Err(ConfigError::RhoBounds {
            min: cfg.rho_min,
            max: cfg.rho_max,
        });
    }
    let rho = cfg.rho_min + (cfg.rho_max - cfg.rho_min) * sigmoid(cfg.gamma.linear(ocean));
    Ok(rho.clamp(cfg.rho_min, cfg.rho_max))
}

/// Susceptibility from Big Five traits (or a constant).
pub fn lambda_from_ocean(ocean: &OceanVector, policy: &LambdaPolicy) -> f64 {
    match *policy {
        LambdaPolicy::Constant { value } => value.clamp(0.0, 1.0),
        LambdaPolicy::Ocean {
            base,
            openness,
            agreeableness,
            conscientiousness,
        } => (base
            + openness * ocean.openness
            + agreeableness * ocean.agreeableness
            + conscientiousness * ocean.conscientiousness)
            .clamp(LAMBDA_FLOOR, LAMBDA_CEIL),
    }
}

/// Belief-distance gate: `max(0, 1 - d)` inside the confidence bound, exactly
/// zero outside it.
pub fn homophily(b_self: f64, b_other: f64, theta_bc: f64) -> f64 {
    let d = (b_self - b_other).abs();
    if d > theta_bc {
        0.0
    } else {
        (1.0 - d).max(0.0)
    }
}

/// One admissible neighbor's share of the social term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub index: usize,
    pub gate: f64,
    /// `w * phi / Omega`; sums to 1 over contributions when any exist.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocialTerm {
    pub value: f64,
    /// Admissible influence mass `Omega = sum(w * phi)`.
    pub mass: f64,
    /// True when `Omega <= epsilon` and the term fell back to the self belief.
    pub fallback: bool,
    pub contributions: Vec<Contribution>,
}

/// Normalized, homophily-gated social term with its per-neighbor breakdown.
///
/// `gate` computes `phi(b_self, b_neighbor)`. Neighbors are `(weight, belief)`.
pub fn social_term_with<G>(self_belief: f64, neighbors: &[(f64, f64)], epsilon: f64, gate: G) -> SocialTerm
where
    G: Fn(f64, f64) -> f64,
{
    let mut num = 0.0;
    let mut mass = 0.0;
    let mut raw = Vec::with_capacity(neighbors.len());
    for (index, &(w, b)) in neighbors.iter().enumerate() {
        let phi = gate(self_belief, b);
        let wphi = w * phi;
        if wphi > 0.0 {
            raw.push((index, phi, wphi));
        }
        num += wphi * b;
        mass += wphi;
    }
    if mass <= epsilon {
        return SocialTerm {
            value: self_belief,
            mass,
            fallback: true,
            contributions: Vec::new(),
        };
    }
    let denom = mass.max(epsilon);
    SocialTerm {
        value: clip_unit(num / denom),
        mass,
        fallback: false,
        contributions: raw
            .into_iter()
            .map(|(index, gate, wphi)| Contribution {
                index,
                gate,
                share: wphi / denom,
            })
            .collect(),
    }
}

pub fn social_influence(self_belief: f64, neighbors: &[(f64, f64)], theta_bc: f64, epsilon: f64) -> f64 {
    social_term_with(self_belief, neighbors, epsilon, |a, b| homophily(a, b, theta_bc)).value
}

/// Eq-1 style convex update, clipped to `[-1, 1]`.
pub fn anchored_update(b: f64, social: f64, anchor: f64, lambda: f64, rho: f64) -> f64 {
    clip_unit((1.0 - rho) * ((1.0 - lambda) * b + lambda * social) + rho * anchor)
}

/// `clip(1 - sum |delta|, 0, 1)`.
pub fn reflection_confidence<I>(deltas: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let total: f64 = deltas.into_iter().map(f64::abs).sum();
    (1.0 - total).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDynamicsState {
    pub beliefs: BTreeMap<String, Belief>,
    pub anchors: BTreeMap<String, f64>,
    pub rho: f64,
    pub lambda: f64,
}

impl AgentDynamicsState {
    /// Anchors start at the initial beliefs.
    pub fn new(initial: &BTreeMap<String, f64>, rho: f64, lambda: f64) -> Self {
        let beliefs = initial
            .iter()
            .map(|(k, &v)| (k.clone(), Belief::new(k.clone(), v)))
            .collect::<BTreeMap<_, _>>();
        let anchors = beliefs.iter().map(|(k, b)| (k.clone(), b.score)).collect();
        AgentDynamicsState {
            beliefs,
            anchors,
            rho,
            lambda,
        }
    }

    pub fn score(&self, topic: &str) -> Option<f64> {
        self.beliefs.get(topic).map(|b| b.score)
    }

    pub fn scores(&self) -> BTreeMap<String, f64> {
        self.beliefs.iter().map(|(k, b)| (k.clone(), b.score)).collect()
    }

    pub fn in_domain(&self, rho_lo: f64, rho_hi: f64) -> bool {
        self.beliefs.values().all(|b| (-1.0..=1.0).contains(&b.score))
            && self.anchors.values().all(|m| (-1.0..=1.0).contains(m))
            && self.rho >= rho_lo
            && self.rho <= rho_hi
            && (0.0..=1.0).contains(&self.lambda)
    }
}
